"""Command-line pipeline around the session, model, and cloaking modules.

Subcommands
    ingest     normalize raw logs or JSONL into canonical session JSONL
    synth      generate a synthetic dataset with a planted signal
    features   compute the scalar feature matrix as CSV
    train-rf   fit the forest (optionally with a hyperparameter grid)
    train-rnn  fit the sequence model
    eval       score saved models against a session file
    distort    cloak a session file, or export cross-implementation fixtures
    experiment end to end: split, optional cloak, features, train, report

Configuration comes from a JSON file (--config) deep-merged under
command-line flags: defaults < file < environment < flags.  The
CURSORLAB_INPUT and CURSORLAB_OUT environment variables override the
``input`` and ``out`` path entries only.  Every subcommand writes a manifest
recording content hashes of inputs and outputs, the resolved configuration,
and the tool version; wall-clock timestamps appear only in manifests, so
reports are byte-stable for a given config and seed.

All randomness flows from the single root ``seed`` through the named
substreams (split, init, shuffle, dropout, noise, bootstrap).  ``--threads``
caps Python-level worker pools; it never changes numeric results.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
failure.  --error-json additionally prints a machine-readable description
of any failure to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (DEFAULT_GRID, FAST_GRID, RFConfig, grid_search_rf,
                        load_rf, load_zeror, save_rf, save_zeror, train_rf,
                        train_zeror)
from .bigru import TrainConfig, load_checkpoint, save_checkpoint, train_bigru
from .evaluation import EvalReport, build_report, render_table
from .features import (FeatureConfig, FeatureMask, Normalizer, extract_matrix,
                       feature_names, fit_filter, fit_normalizer)
from .noise import NoiseConfig, distort_dataset, export_goldens
from .provenance import build_manifest, sha256_text, write_manifest
from .sessions import (Dataset, filter_sessions, parse_sessions,
                       serialize_sessions, split_dataset, to_sequences)
from .synth import LengthDistribution, SynthConfig, generate


class CliError(Exception):
    exit_code = 1


class UsageError(CliError):
    exit_code = 1


class DataError(CliError):
    exit_code = 2


class NumericError(CliError):
    exit_code = 3


# ---------------------------------------------------------------------------
# configuration

_DEFAULTS: dict = {
    "task": "gender",
    "seed": 0,
    "threads": 1,
    "test_fraction": 0.10,
    "min_coords": 10,
    "input": None,
    "format": "canonical_jsonl",
    "out": None,
    "distort_train": "none",
    "distort_test": "none",
    "synth": {
        "n": 2000, "signal": 1.0, "seed": None,
        "len_mean": 150.0, "len_sd": 25.0, "len_min": 90, "len_max": 210,
    },
    "train": {
        "max_len": 100, "hidden": 64, "dropout": 0.25, "learning_rate": 5e-4,
        "batch_size": 32, "max_epochs": 400, "early_stop_patience": 40,
        "validation_fraction": 0.10, "masked": False, "standardize": True,
        "precision": "float64",
    },
    "rf": {
        "grid": "none", "n_trees": 300, "max_features": "sqrt",
        "min_node_size": 1, "max_terminal_nodes": None,
        "min_impurity_decrease": 0.0,
    },
    "filter": {"r_threshold": 0.80, "p_threshold": 0.05},
    "noise": {
        "mode": "fixed", "sigma": 0.25, "low": 0.0, "high": 1.0,
        "events_per_gap": 1, "distribution": "gaussian_radius",
    },
}


def _deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(file_cfg) - set(_DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg = _deep_merge(cfg, file_cfg)
    # environment overrides, paths only
    if os.environ.get("CURSORLAB_INPUT"):
        cfg["input"] = os.environ["CURSORLAB_INPUT"]
    if os.environ.get("CURSORLAB_OUT"):
        cfg["out"] = os.environ["CURSORLAB_OUT"]
    # flags override everything; None means "not given"
    flat = {k: v for k, v in vars(args).items()
            if k in _DEFAULTS and not isinstance(_DEFAULTS[k], dict) and v is not None}
    cfg.update(flat)
    for section in ("synth", "train", "rf", "filter", "noise"):
        over = {}
        for key in _DEFAULTS[section]:
            v = getattr(args, f"{section}_{key}", None)
            if v is not None:
                over[key] = v
        if over:
            cfg[section] = _deep_merge(cfg[section], over)
    if cfg["task"] not in ("age", "gender"):
        raise UsageError(f"unknown task {cfg['task']!r}")
    return cfg


def _noise_from_spec(spec: str, base: dict, seed: int) -> NoiseConfig | None:
    """Parse 'none', 'fixed:S', or 'uniform:LO,HI' into a NoiseConfig."""
    if spec in (None, "", "none"):
        return None
    kind, _, rest = spec.partition(":")
    try:
        if kind == "fixed":
            return NoiseConfig(sigma_mode="fixed", sigma=float(rest or base["sigma"]),
                               events_per_gap=base["events_per_gap"],
                               distribution=base["distribution"], seed=seed)
        if kind == "uniform":
            lo, hi = (float(p) for p in rest.split(",")) if rest else (base["low"], base["high"])
            return NoiseConfig(sigma_mode="uniform", low=lo, high=hi,
                               events_per_gap=base["events_per_gap"],
                               distribution=base["distribution"], seed=seed)
    except ValueError as exc:
        raise UsageError(f"bad distortion spec {spec!r}: {exc}") from exc
    raise UsageError(f"bad distortion spec {spec!r}; use none, fixed:S, or uniform:LO,HI")


# ---------------------------------------------------------------------------
# shared pipeline pieces

def _load_sessions(cfg: dict, need_labels: bool = False):
    path = cfg.get("input")
    if not path:
        raise UsageError("an input file is required (--input or config 'input')")
    if not Path(path).exists():
        raise DataError(f"input not found: {path}")
    sessions, diags = parse_sessions(path, fmt=cfg["format"])
    for d in diags:
        print(f"diagnostic: {d}", file=sys.stderr)
    if not sessions:
        raise DataError(f"no usable sessions in {path}")
    if need_labels:
        sessions, dropped = filter_sessions(sessions, target=cfg["task"],
                                            min_coords=cfg["min_coords"])
        if any(dropped.values()):
            print(f"filtered: {dropped}", file=sys.stderr)
        if len(sessions) < 4:
            raise DataError("too few labelled sessions after filtering")
    return sessions


def _synth_dataset(cfg: dict) -> list:
    s = cfg["synth"]
    seed = cfg["seed"] if s.get("seed") is None else s["seed"]
    scfg = SynthConfig(
        n_sessions=int(s["n"]), signal_strength=float(s["signal"]),
        label=cfg["task"], seed=int(seed),
        lengths=LengthDistribution(mean=float(s["len_mean"]), sd=float(s["len_sd"]),
                                   min=int(s["len_min"]), max=int(s["len_max"])),
    )
    return list(generate(scfg).sessions)


def _train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(seed=cfg["seed"], **{k: t[k] for k in _DEFAULTS["train"]})


def _rf_config(cfg: dict) -> RFConfig:
    r = cfg["rf"]
    return RFConfig(seed=cfg["seed"],
                    **{k: r[k] for k in _DEFAULTS["rf"] if k != "grid"})


def _fit_rf(cfg: dict, X: np.ndarray, y: np.ndarray):
    mode = cfg["rf"].get("grid", "none")
    if mode == "none":
        return train_rf(X, y, _rf_config(cfg)), None
    grid = {"fast": FAST_GRID, "full": DEFAULT_GRID}.get(mode)
    if grid is None:
        raise UsageError(f"unknown rf grid {mode!r}; use none, fast, or full")
    model, log, diags = grid_search_rf(X, y, grid=grid, seed=cfg["seed"])
    for d in diags:
        print(f"diagnostic: {d}", file=sys.stderr)
    return model, log


def _fit_bigru(seq, y, tcfg: TrainConfig):
    try:
        model = train_bigru(seq, y, tcfg)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    losses = [rec[k] for rec in model.history for k in ("train_loss", "val_loss")]
    if not all(math.isfinite(v) for v in losses):
        raise NumericError("sequence model training produced non-finite loss")
    return model


def _require_out(cfg: dict, what: str = "an output path") -> Path:
    if not cfg.get("out"):
        raise UsageError(f"{what} is required (--out or config 'out')")
    return Path(cfg["out"])


def _write_outputs_manifest(cfg: dict, command: str, inputs: dict, outputs: dict,
                            started: float, manifest_path: Path) -> None:
    manifest = build_manifest(command, cfg, inputs, outputs, started, time.time())
    write_manifest(manifest_path, manifest)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_ingest(cfg: dict, args) -> None:
    started = time.time()
    out = _require_out(cfg)
    sessions = _load_sessions(cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        serialize_sessions(sessions, fh)
    print(f"wrote {len(sessions)} sessions to {out}")
    _write_outputs_manifest(cfg, "ingest", {cfg["input"]: cfg["input"]},
                            {str(out): out}, started,
                            out.with_name(out.name + ".manifest.json"))


def _cmd_synth(cfg: dict, args) -> None:
    started = time.time()
    out = _require_out(cfg)
    sessions = _synth_dataset(cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        serialize_sessions(sessions, fh)
    print(f"wrote {len(sessions)} synthetic sessions to {out}")
    _write_outputs_manifest(cfg, "synth", {}, {str(out): out}, started,
                            out.with_name(out.name + ".manifest.json"))


def _cmd_features(cfg: dict, args) -> None:
    started = time.time()
    out = _require_out(cfg)
    sessions = _load_sessions(cfg)
    usable = [s for s in sessions if len(s.moves()) >= 2]
    if len(usable) < len(sessions):
        print(f"skipped {len(sessions) - len(usable)} sessions with fewer than 2 moves",
              file=sys.stderr)
    if not usable:
        raise DataError("no sessions with enough movement for features")
    X = extract_matrix(usable, threads=cfg["threads"])
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "gender", "age"] + feature_names())
        for s, row in zip(usable, X):
            d = s.demographics
            w.writerow([s.id, d.gender or "", "" if d.age is None else d.age]
                       + [repr(float(v)) for v in row])
    print(f"wrote {X.shape[0]} x {X.shape[1]} feature matrix to {out}")
    _write_outputs_manifest(cfg, "features", {cfg["input"]: cfg["input"]},
                            {str(out): out}, started,
                            out.with_name(out.name + ".manifest.json"))


def _feature_pipeline(cfg: dict, train_sessions, test_sessions=None):
    X_tr = extract_matrix(train_sessions, threads=cfg["threads"])
    mask, diags = fit_filter(X_tr, r_threshold=cfg["filter"]["r_threshold"],
                             p_threshold=cfg["filter"]["p_threshold"])
    for d in diags:
        print(f"diagnostic: {d}", file=sys.stderr)
    norm = fit_normalizer(mask.apply(X_tr))
    Xn_tr = norm.transform(mask.apply(X_tr))
    if test_sessions is None:
        return mask, norm, Xn_tr, None
    X_te = extract_matrix(test_sessions, threads=cfg["threads"])
    return mask, norm, Xn_tr, norm.transform(mask.apply(X_te))


def _labels_for(sessions, task: str) -> np.ndarray:
    y = np.array([s.label(task) for s in sessions], dtype=np.int64)
    return y


def _cmd_train_rf(cfg: dict, args) -> None:
    started = time.time()
    out = _require_out(cfg, "a model output path")
    sessions = _load_sessions(cfg, need_labels=True)
    y = _labels_for(sessions, cfg["task"])
    mask, norm, Xn, _ = _feature_pipeline(cfg, sessions)
    model, search_log = _fit_rf(cfg, Xn, y)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_rf(model, out)
    sidecar = out.with_suffix(".filter.json")
    sidecar.write_text(json.dumps({
        "task": cfg["task"], "mask": mask.to_dict(), "normalizer": norm.to_dict(),
    }, sort_keys=True, indent=2))
    outputs = {str(out): out, str(sidecar): sidecar}
    if search_log is not None:
        log_path = out.with_suffix(".search.json")
        log_path.write_text(json.dumps(search_log, sort_keys=True, indent=2))
        outputs[str(log_path)] = log_path
        print(f"grid best holdout AUC {search_log['best_holdout_auc']}")
    print(f"trained forest on {len(sessions)} sessions, saved to {out}")
    _write_outputs_manifest(cfg, "train-rf", {cfg["input"]: cfg["input"]},
                            outputs, started,
                            out.with_name(out.name + ".manifest.json"))


def _cmd_train_rnn(cfg: dict, args) -> None:
    started = time.time()
    out = _require_out(cfg, "a model output path")
    sessions = _load_sessions(cfg, need_labels=True)
    y = _labels_for(sessions, cfg["task"])
    tcfg = _train_config(cfg)
    seq = to_sequences(sessions, max_len=tcfg.max_len)
    model = _fit_bigru(seq, y, tcfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)
    history = out.with_suffix(".history.csv")
    history.write_text(model.history_csv())
    print(f"trained sequence model on {len(sessions)} sessions "
          f"(best epoch {model.best_epoch}), saved to {out}")
    _write_outputs_manifest(cfg, "train-rnn", {cfg["input"]: cfg["input"]},
                            {str(out): out, str(history): history}, started,
                            out.with_name(out.name + ".manifest.json"))


def _load_model(path: Path):
    """Sniff and load a saved model; returns (name, kind, payload)."""
    if not path.exists():
        raise DataError(f"model not found: {path}")
    if path.suffix == ".json":
        return path.stem, "zeror", (load_zeror(path), None, None)
    try:
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
    except Exception as exc:
        raise DataError(f"unreadable model file {path}: {exc}") from exc
    kind = meta.get("kind", "bigru")
    if kind == "rf":
        sidecar = path.with_suffix(".filter.json")
        if not sidecar.exists():
            raise DataError(f"forest model {path} is missing its {sidecar.name} sidecar")
        side = json.loads(sidecar.read_text())
        return path.stem, "rf", (load_rf(path), FeatureMask.from_dict(side["mask"]),
                                 Normalizer.from_dict(side["normalizer"]))
    return path.stem, "bigru", (load_checkpoint(path), None, None)


def _cmd_eval(cfg: dict, args) -> None:
    started = time.time()
    if not args.model:
        raise UsageError("at least one --model is required")
    sessions = _load_sessions(cfg, need_labels=True)
    y = _labels_for(sessions, cfg["task"])
    scores: dict[str, np.ndarray] = {}
    feat_cache: np.ndarray | None = None
    for mp in args.model:
        name, kind, payload = _load_model(Path(mp))
        if kind == "zeror":
            scores[name] = payload[0].predict_scores(np.zeros((len(sessions), 1)))
        elif kind == "rf":
            model, mask, norm = payload
            if feat_cache is None:
                feat_cache = extract_matrix(sessions, threads=cfg["threads"])
            scores[name] = model.predict_scores(norm.transform(mask.apply(feat_cache)))
        else:
            model = payload[0]
            seq = to_sequences(sessions, max_len=model.config.max_len)
            scores[name] = model.predict(seq)
    reference = None
    if args.reference:
        reference = EvalReport.from_json(Path(args.reference).read_text())
    report = build_report(cfg["task"], y, scores, metadata={
        "seed": cfg["seed"], "n_sessions": len(sessions),
        "input": str(cfg["input"]), "models": [str(m) for m in args.model],
    })
    table = render_table(report, reference)
    if cfg.get("out"):
        out_dir = Path(cfg["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(report.to_json())
        (out_dir / "report.txt").write_text(table)
        print(f"wrote report to {out_dir}")
        inputs = {cfg["input"]: cfg["input"], **{m: m for m in args.model}}
        _write_outputs_manifest(cfg, "eval", inputs,
                                {"report.json": out_dir / "report.json",
                                 "report.txt": out_dir / "report.txt"},
                                started, out_dir / "manifest.json")
    else:
        print(table)


def _cmd_distort(cfg: dict, args) -> None:
    started = time.time()
    if args.export_goldens:
        path = Path(args.export_goldens)
        path.parent.mkdir(parents=True, exist_ok=True)
        fixtures = export_goldens(path, n_fixtures=args.n_fixtures, seed=cfg["seed"])
        print(f"wrote {len(fixtures['fixtures'])} cloaking fixtures to {path}")
        _write_outputs_manifest(cfg, "distort", {}, {str(path): path}, started,
                                path.with_name(path.name + ".manifest.json"))
        return
    out = _require_out(cfg)
    sessions = _load_sessions(cfg)
    noise = _noise_from_spec(args.spec or "fixed", cfg["noise"], cfg["seed"])
    ds = Dataset(sessions=tuple(sessions), seed=cfg["seed"])
    distorted = distort_dataset(ds, noise, subset="all")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        serialize_sessions(distorted.sessions, fh)
    print(f"wrote {len(sessions)} cloaked sessions to {out}")
    _write_outputs_manifest(cfg, "distort", {cfg["input"]: cfg["input"]},
                            {str(out): out}, started,
                            out.with_name(out.name + ".manifest.json"))


def _cmd_experiment(cfg: dict, args) -> None:
    started = time.time()
    out_dir = _require_out(cfg, "an output directory")
    task, seed = cfg["task"], cfg["seed"]

    inputs: dict = {}
    if cfg.get("input"):
        sessions = _load_sessions(cfg, need_labels=True)
        inputs[cfg["input"]] = cfg["input"]
        source = {"kind": "file", "path": str(cfg["input"])}
    else:
        sessions = _synth_dataset(cfg)
        source = {"kind": "synth", **cfg["synth"],
                  "seed": cfg["synth"]["seed"] if cfg["synth"]["seed"] is not None else seed}

    ds, diags = split_dataset(sessions, test_fraction=cfg["test_fraction"],
                              seed=seed, stratify_by=task)
    for d in diags:
        print(f"diagnostic: {d}", file=sys.stderr)

    noise_train = _noise_from_spec(cfg["distort_train"], cfg["noise"], seed)
    noise_test = _noise_from_spec(cfg["distort_test"], cfg["noise"], seed)
    if noise_train is not None:
        ds = distort_dataset(ds, noise_train, subset="train")
    if noise_test is not None:
        ds = distort_dataset(ds, noise_test, subset="test")

    train_sessions, test_sessions = list(ds.train), list(ds.test)
    y = ds.labels(task)
    tr_idx, te_idx = np.asarray(ds.train_idx), np.asarray(ds.test_idx)
    y_tr, y_te = y[tr_idx], y[te_idx]
    if np.unique(y_tr).size < 2:
        raise DataError("training split holds a single class")

    mask, norm, Xn_tr, Xn_te = _feature_pipeline(cfg, train_sessions, test_sessions)
    zeror = train_zeror(y_tr)
    rf_model, search_log = _fit_rf(cfg, Xn_tr, y_tr)
    tcfg = _train_config(cfg)
    seq_tr = to_sequences(train_sessions, max_len=tcfg.max_len)
    seq_te = to_sequences(test_sessions, max_len=tcfg.max_len)
    rnn = _fit_bigru(seq_tr, y_tr, tcfg)

    scores = {
        "majority_rate": zeror.predict_scores(Xn_te),
        "random_forest": rf_model.predict_scores(Xn_te),
        "bigru": rnn.predict(seq_te),
    }
    # out and threads never change numbers, so they stay out of the fingerprint
    fingerprinted = {k: v for k, v in cfg.items() if k not in ("out", "threads")}
    config_fingerprint = sha256_text(json.dumps(fingerprinted, sort_keys=True))
    report = build_report(task, y_te, scores, metadata={
        "seed": seed,
        "source": source,
        "n_train": int(tr_idx.size), "n_test": int(te_idx.size),
        "distort_train": cfg["distort_train"], "distort_test": cfg["distort_test"],
        "features_kept": len(mask.kept),
        "rnn_best_epoch": rnn.best_epoch,
        "config_sha256": config_fingerprint,
    })
    reference = None
    if args.reference:
        reference = EvalReport.from_json(Path(args.reference).read_text())

    out_dir.mkdir(parents=True, exist_ok=True)
    models_dir = out_dir / "models"
    models_dir.mkdir(exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json())
    (out_dir / "report.txt").write_text(render_table(report, reference))
    (out_dir / "rnn_history.csv").write_text(rnn.history_csv())
    save_checkpoint(rnn, models_dir / "rnn.npz")
    save_rf(rf_model, models_dir / "rf.npz")
    (models_dir / "rf.filter.json").write_text(json.dumps({
        "task": task, "mask": mask.to_dict(), "normalizer": norm.to_dict(),
    }, sort_keys=True, indent=2))
    save_zeror(zeror, models_dir / "majority_rate.json")
    if search_log is not None:
        (out_dir / "rf_search.json").write_text(
            json.dumps(search_log, sort_keys=True, indent=2))

    outputs = {
        "report.json": out_dir / "report.json",
        "report.txt": out_dir / "report.txt",
        "rnn_history.csv": out_dir / "rnn_history.csv",
        "models/rnn.npz": models_dir / "rnn.npz",
        "models/rf.npz": models_dir / "rf.npz",
        "models/rf.filter.json": models_dir / "rf.filter.json",
        "models/majority_rate.json": models_dir / "majority_rate.json",
    }
    _write_outputs_manifest(cfg, "experiment", inputs, outputs, started,
                            out_dir / "manifest.json")
    print(render_table(report, reference))
    print(f"wrote {out_dir}/report.json")


# ---------------------------------------------------------------------------
# parser

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, default=None, help="root seed for all substreams")
    p.add_argument("--threads", type=int, default=None, help="worker-pool cap")
    p.add_argument("--input", default=None, help="input sessions file")
    p.add_argument("--format", default=None,
                   choices=("canonical_jsonl", "attentive_cursor_raw"),
                   help="input format")
    p.add_argument("--out", default=None, help="output file or directory")
    p.add_argument("--task", default=None, choices=("age", "gender"))
    p.add_argument("--error-json", action="store_true", dest="error_json",
                   help="emit machine-readable errors on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cursorlab",
        description="Cursor-session ingestion, demographic classifiers, and cloaking.")
    parser.add_argument("--version", action="version", version=f"cursorlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize sessions into canonical JSONL")
    _add_common(p)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("synth", help="generate synthetic sessions")
    _add_common(p)
    p.add_argument("--n", type=int, dest="synth_n", default=None)
    p.add_argument("--signal", type=float, dest="synth_signal", default=None)
    p.add_argument("--label", dest="task", choices=("age", "gender"), default=None,
                   help="demographic the planted signal separates")
    p.add_argument("--len-mean", type=float, dest="synth_len_mean", default=None)
    p.add_argument("--len-sd", type=float, dest="synth_len_sd", default=None)
    p.add_argument("--len-min", type=int, dest="synth_len_min", default=None)
    p.add_argument("--len-max", type=int, dest="synth_len_max", default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("features", help="emit the scalar feature matrix as CSV")
    _add_common(p)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("train-rf", help="fit the forest on a session file")
    _add_common(p)
    p.add_argument("--grid", dest="rf_grid", choices=("none", "fast", "full"), default=None)
    p.add_argument("--n-trees", type=int, dest="rf_n_trees", default=None)
    p.add_argument("--min-node-size", type=int, dest="rf_min_node_size", default=None)
    p.add_argument("--max-features", dest="rf_max_features", default=None)
    p.set_defaults(func=_cmd_train_rf)

    p = sub.add_parser("train-rnn", help="fit the sequence model on a session file")
    _add_common(p)
    p.add_argument("--hidden", type=int, dest="train_hidden", default=None)
    p.add_argument("--max-epochs", type=int, dest="train_max_epochs", default=None)
    p.add_argument("--patience", type=int, dest="train_early_stop_patience", default=None)
    p.add_argument("--batch-size", type=int, dest="train_batch_size", default=None)
    p.add_argument("--learning-rate", type=float, dest="train_learning_rate", default=None)
    p.add_argument("--dropout", type=float, dest="train_dropout", default=None)
    p.add_argument("--max-len", type=int, dest="train_max_len", default=None)
    p.add_argument("--hidden-precision", dest="train_precision",
                   choices=("float64", "float32"), default=None)
    p.add_argument("--masked", action="store_const", const=True,
                   dest="train_masked", default=None)
    p.add_argument("--no-standardize", action="store_const", const=False,
                   dest="train_standardize", default=None)
    p.set_defaults(func=_cmd_train_rnn)

    p = sub.add_parser("eval", help="score saved models against a session file")
    _add_common(p)
    p.add_argument("--model", action="append", default=None,
                   help="model file; repeatable")
    p.add_argument("--reference", default=None,
                   help="report.json to diff against in the rendered table")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("distort", help="cloak a session file")
    _add_common(p)
    p.add_argument("--spec", default=None,
                   help="distortion spec: fixed:S or uniform:LO,HI (default fixed:0.25)")
    p.add_argument("--events-per-gap", type=int, dest="noise_events_per_gap", default=None)
    p.add_argument("--distribution", dest="noise_distribution",
                   choices=("gaussian_radius", "uniform_radius"), default=None)
    p.add_argument("--export-goldens", default=None,
                   help="write cross-implementation fixtures to this path instead")
    p.add_argument("--n-fixtures", type=int, default=50)
    p.set_defaults(func=_cmd_distort)

    p = sub.add_parser("experiment",
                       help="split, optionally cloak, train all models, report")
    _add_common(p)
    p.add_argument("--distort-train", dest="distort_train", default=None,
                   help="none, fixed:S, or uniform:LO,HI")
    p.add_argument("--distort-test", dest="distort_test", default=None,
                   help="none, fixed:S, or uniform:LO,HI")
    p.add_argument("--rf-grid", dest="rf_grid", choices=("none", "fast", "full"),
                   default=None)
    p.add_argument("--synth-n", type=int, dest="synth_n", default=None)
    p.add_argument("--synth-signal", type=float, dest="synth_signal", default=None)
    p.add_argument("--test-fraction", type=float, dest="test_fraction", default=None)
    p.add_argument("--max-epochs", type=int, dest="train_max_epochs", default=None)
    p.add_argument("--patience", type=int, dest="train_early_stop_patience", default=None)
    p.add_argument("--hidden", type=int, dest="train_hidden", default=None)
    p.add_argument("--reference", default=None,
                   help="report.json to diff against in the rendered table")
    p.set_defaults(func=_cmd_experiment)

    return parser


def _emit_error(exc: Exception, as_json: bool) -> None:
    code = getattr(exc, "exit_code", 1)
    print(f"error: {exc}", file=sys.stderr)
    if as_json:
        print(json.dumps({"error": {"type": type(exc).__name__,
                                    "message": str(exc), "exit_code": code}}),
              file=sys.stderr)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1

    as_json = bool(getattr(args, "error_json", False))
    try:
        cfg = _resolve_config(args)
        args.func(cfg, args)
        return 0
    except CliError as exc:
        _emit_error(exc, as_json)
        return exc.exit_code
    except OSError as exc:
        _emit_error(DataError(str(exc)), as_json)
        return 2
    except (ValueError, KeyError, TypeError) as exc:
        _emit_error(UsageError(str(exc)), as_json)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Release acceptance suite.

One test per numbered gate, so a verbose run reads as a checklist.  The
expensive gates (3, 5, 6) share module-scoped fixtures: one 2,000-session
planted-signal corpus, one clean-trained recurrent model, and one feature
forest.  Gates that need the public cursor dataset run only when it is
available (CURSORLAB_DATASET env var, or a data/attentive_cursor directory
next to the package root); gate 4 is skipped with a notice otherwise, and
the real-data legs of gates 5, 6, and 10 are simply not executed.

Tolerances are pinned inline next to each assertion.
"""

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from cursorlab.baselines import RFConfig, train_rf
from cursorlab.bigru import (TrainConfig, bce_loss, bigru_backward,
                             bigru_forward, init_params, train_bigru)
from cursorlab.evaluation import holm_adjust, roc_auc, weighted_prf
from cursorlab.features import extract_matrix, fit_filter, fit_normalizer
from cursorlab.noise import NoiseConfig, distort_dataset, distort_events
from cursorlab.rng import PortableRng
from cursorlab.sessions import (CursorEvent, filter_sessions, parse_sessions,
                                split_dataset, to_sequences)
from cursorlab.synth import SynthConfig, generate

# Training settings used by every model-level gate.  90 epochs with
# patience 25 converges well inside the gate-3 runtime budget at n=2,000.
TRAIN_CFG = TrainConfig(hidden=64, max_epochs=90, early_stop_patience=25,
                        seed=3, standardize=True)
FOREST_CFG = RFConfig(n_trees=300, seed=5)
SYNTH_N = 2000
SYNTH_SEED = 7
TEST_FRACTION = 0.20          # 400 test rows: null-AUC sd ~ 0.029
DATASET_ENV = "CURSORLAB_DATASET"
SKIP_NOTICE = ("public cursor dataset not found (set CURSORLAB_DATASET or "
               "place it at data/attentive_cursor); reproduction gate skipped")


def _real_root():
    override = os.environ.get(DATASET_ENV)
    if override:
        p = Path(override)
        return p if p.exists() else None
    fallback = Path(__file__).resolve().parent.parent / "data" / "attentive_cursor"
    return fallback if fallback.exists() else None


def _build_corpus(signal):
    t0 = time.perf_counter()
    full = generate(SynthConfig(n_sessions=SYNTH_N, signal_strength=signal,
                                label="age", seed=SYNTH_SEED))
    ds, _ = split_dataset(full.sessions, test_fraction=TEST_FRACTION,
                          seed=SYNTH_SEED, stratify_by="age")
    return ds, time.perf_counter() - t0


def _rnn_test_scores(ds, target, train_from=None):
    """Fit on the train split (optionally of a distorted twin) and score test.

    Returns (model, test scores, elapsed seconds including prediction).
    """
    src = train_from if train_from is not None else ds
    y = ds.labels(target)
    tr = np.asarray(ds.train_idx)
    te = np.asarray(ds.test_idx)
    t0 = time.perf_counter()
    seq = to_sequences([src.sessions[i] for i in tr], max_len=TRAIN_CFG.max_len)
    model = train_bigru(seq, y[tr], TRAIN_CFG)
    scores = model.predict(to_sequences([ds.sessions[i] for i in te],
                                        max_len=TRAIN_CFG.max_len))
    return model, scores, time.perf_counter() - t0


def _forest_test_scores(ds, target):
    """Feature pipeline end to end: extract, filter, normalize, fit, score."""
    y = ds.labels(target)
    tr = np.asarray(ds.train_idx)
    te = np.asarray(ds.test_idx)
    t0 = time.perf_counter()
    X_tr = extract_matrix([ds.sessions[i] for i in tr], threads=4)
    X_te = extract_matrix([ds.sessions[i] for i in te], threads=4)
    mask, _ = fit_filter(X_tr)
    norm = fit_normalizer(mask.apply(X_tr))
    model = train_rf(norm.transform(mask.apply(X_tr)), y[tr], FOREST_CFG)
    scores = model.predict_scores(norm.transform(mask.apply(X_te)))
    return scores, X_tr, time.perf_counter() - t0


@pytest.fixture(scope="module")
def signal_corpus():
    ds, gen_s = _build_corpus(1.0)
    return {"ds": ds, "gen_s": gen_s}


@pytest.fixture(scope="module")
def clean_model(signal_corpus):
    ds = signal_corpus["ds"]
    model, scores, elapsed = _rnn_test_scores(ds, "age")
    y = ds.labels("age")
    te = np.asarray(ds.test_idx)
    return {"model": model, "auc": roc_auc(y[te], scores),
            "scores": scores, "elapsed": elapsed}


@pytest.fixture(scope="module")
def clean_forest(signal_corpus):
    ds = signal_corpus["ds"]
    scores, X_tr, elapsed = _forest_test_scores(ds, "age")
    y = ds.labels("age")
    te = np.asarray(ds.test_idx)
    return {"auc": roc_auc(y[te], scores), "X_train": X_tr, "elapsed": elapsed}


@pytest.fixture(scope="module")
def real_bundle():
    """Models and matrices on the public dataset, or None when absent."""
    root = _real_root()
    if root is None:
        return None
    fmt = "attentive_cursor_raw" if root.is_dir() else "canonical_jsonl"
    sessions, _ = parse_sessions(root, fmt=fmt)
    bundle = {}
    for target in ("age", "gender"):
        kept, _ = filter_sessions(sessions, target=target)
        ds, _ = split_dataset(kept, test_fraction=0.10, seed=7,
                              stratify_by=target)
        y = ds.labels(target)
        te = np.asarray(ds.test_idx)
        model, scores, _ = _rnn_test_scores(ds, target)
        forest_scores, X_tr, _ = _forest_test_scores(ds, target)
        bundle[target] = {
            "ds": ds,
            "y_test": y[te],
            "model": model,
            "rnn_scores": scores,
            "rnn_auc": roc_auc(y[te], scores),
            "forest_auc": roc_auc(y[te], forest_scores),
            "X_train": X_tr,
        }
    return bundle


def test_01_gradient_oracle():
    """Analytic gradients vs central differences: 20 seeded instances,
    hidden 4, T 5, float64, every coordinate within rel 1e-4, under a
    minute.  eps=1e-5 balances truncation against roundoff at loss scale 1;
    odd seeds run in masked mode with random lengths."""
    t0 = time.perf_counter()
    worst = 0.0
    eps = 1e-5
    for seed in range(20):
        rng = np.random.default_rng(seed)
        masked = seed % 2 == 1
        cfg = TrainConfig(hidden=4, dropout=0.0, masked=masked, seed=seed)
        params = init_params(cfg, rng)
        B, T = 3, 5
        X = rng.normal(size=(B, T, 3))
        lengths = rng.integers(1, T + 1, size=B) if masked else None
        y = rng.integers(0, 2, size=B).astype(np.float64)
        _, cache = bigru_forward(X, lengths, params, cfg)
        grads = bigru_backward(cache, y)
        for name, g in grads.items():
            flat = params[name].reshape(-1)
            gf = g.reshape(-1)
            assert gf.dtype == np.float64
            for idx in range(flat.size):
                saved = flat[idx]
                flat[idx] = saved + eps
                lp = bce_loss(bigru_forward(X, lengths, params, cfg)[0], y)
                flat[idx] = saved - eps
                lm = bce_loss(bigru_forward(X, lengths, params, cfg)[0], y)
                flat[idx] = saved
                fd = (lp - lm) / (2 * eps)
                rel = abs(fd - gf[idx]) / max(abs(fd), abs(gf[idx]), 1e-8)
                worst = max(worst, rel)
                assert rel < 1e-4, (
                    f"seed {seed} {name}[{idx}]: analytic {gf[idx]:.3e} vs "
                    f"central difference {fd:.3e} (rel {rel:.2e})")
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"gradient sweep took {elapsed:.1f}s"


def test_02_auc_equals_brute_force():
    """Rank-based AUC equals pairwise concordance bit for bit on 200
    random instances, n <= 50, with heavy ties in half of them."""
    rng = np.random.default_rng(123)
    for trial in range(200):
        n = int(rng.integers(2, 51))
        y = rng.integers(0, 2, size=n)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        if trial % 2 == 0:
            scores = rng.integers(0, 5, size=n).astype(np.float64)
        else:
            scores = np.round(rng.random(n), 1)
        pos = scores[y == 1]
        neg = scores[y == 0]
        wins = 0.0
        for a in pos:
            wins += float(np.sum(a > neg)) + 0.5 * float(np.sum(a == neg))
        expected = wins / (pos.size * neg.size)
        got = roc_auc(y, scores)
        assert got == expected, f"trial {trial}: {got!r} != {expected!r}"


def test_03_planted_signal_sanity(signal_corpus, clean_model, clean_forest):
    """Signal 1 separates (rnn >= 0.90, forest >= 0.85); signal 0 sits at
    chance (both in [0.40, 0.60]); total model-building time under 10 min."""
    assert clean_model["auc"] >= 0.90, (
        f"signal=1 recurrent test AUC {clean_model['auc']:.4f} below 0.90")
    assert clean_forest["auc"] >= 0.85, (
        f"signal=1 forest test AUC {clean_forest['auc']:.4f} below 0.85")

    ds0, gen0_s = _build_corpus(0.0)
    y0 = ds0.labels("age")
    te0 = np.asarray(ds0.test_idx)
    _, scores0, rnn0_s = _rnn_test_scores(ds0, "age")
    auc0_rnn = roc_auc(y0[te0], scores0)
    forest0_scores, _, forest0_s = _forest_test_scores(ds0, "age")
    auc0_forest = roc_auc(y0[te0], forest0_scores)
    assert 0.40 <= auc0_rnn <= 0.60, (
        f"signal=0 recurrent test AUC {auc0_rnn:.4f} outside [0.40, 0.60]")
    assert 0.40 <= auc0_forest <= 0.60, (
        f"signal=0 forest test AUC {auc0_forest:.4f} outside [0.40, 0.60]")

    total = (signal_corpus["gen_s"] + clean_model["elapsed"]
             + clean_forest["elapsed"] + gen0_s + rnn0_s + forest0_s)
    assert total < 600.0, f"gate took {total:.0f}s, budget 600s"


def test_04_public_dataset_reproduction(real_bundle):
    """Published-figure bands, +-0.06 around each reported value."""
    if real_bundle is None:
        pytest.skip(SKIP_NOTICE)
    age = real_bundle["age"]
    gender = real_bundle["gender"]
    age_prf = weighted_prf(age["y_test"], age["rnn_scores"])
    gender_prf = weighted_prf(gender["y_test"], gender["rnn_scores"])
    checks = [
        ("age rnn auc", age["rnn_auc"], 0.712),
        ("age rnn f1", age_prf.f1, 0.653),
        ("gender rnn auc", gender["rnn_auc"], 0.650),
        ("gender rnn f1", gender_prf.f1, 0.641),
        ("age forest auc", age["forest_auc"], 0.528),
        ("gender forest auc", gender["forest_auc"], 0.489),
    ]
    for label, got, center in checks:
        assert center - 0.06 <= got <= center + 0.06, (
            f"{label} {got:.4f} outside {center}+-0.06")


def test_05_fixed_sigma_collapses_clean_model(signal_corpus, clean_model,
                                              real_bundle):
    """Distorting only the test split at fixed sigma 0.25 drives the
    clean-trained recurrent model to chance, AUC in [0.42, 0.58]."""
    noise = NoiseConfig(sigma_mode="fixed", sigma=0.25, seed=101)
    ds = signal_corpus["ds"]
    y = ds.labels("age")
    te = np.asarray(ds.test_idx)
    distorted = distort_dataset(ds, noise, subset="test")
    scores = clean_model["model"].predict(
        to_sequences([distorted.sessions[i] for i in te],
                     max_len=TRAIN_CFG.max_len))
    auc = roc_auc(y[te], scores)
    assert 0.42 <= auc <= 0.58, (
        f"synthetic distorted-test AUC {auc:.4f} outside [0.42, 0.58] "
        f"(clean was {clean_model['auc']:.4f})")

    if real_bundle is not None:
        age = real_bundle["age"]
        rds = age["ds"]
        rte = np.asarray(rds.test_idx)
        rdist = distort_dataset(rds, noise, subset="test")
        rscores = age["model"].predict(
            to_sequences([rdist.sessions[i] for i in rte],
                         max_len=TRAIN_CFG.max_len))
        rauc = roc_auc(age["y_test"], rscores)
        assert 0.42 <= rauc <= 0.58, (
            f"real distorted-test AUC {rauc:.4f} outside [0.42, 0.58]")


def test_06_retraining_on_noise_degrades(signal_corpus, clean_model,
                                         real_bundle):
    """Retraining on sigma~U(0,1)-distorted data must not recover the
    signal: distorted-trained AUC trails clean-trained by >= 0.03 on the
    synthetic corpus, and by >= 8% relative AUC / >= 10% relative F1 on
    the real dataset when present.  Both regimes score a likewise-
    distorted test split."""
    noise = NoiseConfig(sigma_mode="uniform", low=0.0, high=1.0, seed=17)
    ds = signal_corpus["ds"]
    y = ds.labels("age")
    te = np.asarray(ds.test_idx)
    distorted = distort_dataset(ds, noise, subset="all")
    _, scores_u, _ = _rnn_test_scores(distorted, "age")
    auc_u = roc_auc(y[te], scores_u)
    margin = clean_model["auc"] - auc_u
    assert margin >= 0.03, (
        f"distorted-trained AUC {auc_u:.4f} within 0.03 of clean "
        f"{clean_model['auc']:.4f} (margin {margin:.4f})")

    if real_bundle is not None:
        age = real_bundle["age"]
        rds = age["ds"]
        rdist = distort_dataset(rds, noise, subset="all")
        _, rscores_u, _ = _rnn_test_scores(rdist, "age")
        rauc_u = roc_auc(age["y_test"], rscores_u)
        clean_prf = weighted_prf(age["y_test"], age["rnn_scores"])
        dist_prf = weighted_prf(age["y_test"], rscores_u)
        auc_drop = (age["rnn_auc"] - rauc_u) / age["rnn_auc"]
        f1_drop = (clean_prf.f1 - dist_prf.f1) / clean_prf.f1
        assert auc_drop >= 0.08, (
            f"real relative AUC drop {auc_drop:.3f} below 0.08")
        assert f1_drop >= 0.10, (
            f"real relative F1 drop {f1_drop:.3f} below 0.10")


def test_07_distortion_invariants():
    """100,000 randomized distortions with zero violations of: synthetic
    coordinates and times strictly positive, output times strictly
    increasing, every genuine event preserved verbatim in order, and
    synthetic displacement within the radius cap (one-ulp headroom)."""
    meta = np.random.default_rng(7)
    radius_tol = 1e-9
    trials = 100_000
    for trial in range(trials):
        n_ev = 1 + trial % 8
        xs = meta.uniform(1.0, 1200.0, size=n_ev)
        ys = meta.uniform(1.0, 700.0, size=n_ev)
        dts = meta.uniform(1.0, 400.0, size=n_ev)
        events = []
        t = 0.0
        for j in range(n_ev):
            name = "mousemove" if (j == 0 or xs[j] % 1.0 < 0.9) else "click"
            events.append(CursorEvent(x=float(xs[j]), y=float(ys[j]), t=t,
                                      name=name))
            t += float(dts[j])
        per_gap = 1 + trial % 3
        law = "gaussian_radius" if trial % 4 < 2 else "uniform_radius"
        if trial % 2 == 0:
            cfg = NoiseConfig(sigma_mode="fixed",
                              sigma=float(0.01 + (trial % 17) * 0.2),
                              events_per_gap=per_gap, distribution=law, seed=1)
            cap = cfg.sigma
        else:
            cfg = NoiseConfig(sigma_mode="uniform", low=0.0,
                              high=float(0.05 + (trial % 13) * 0.25),
                              events_per_gap=per_gap, distribution=law, seed=1)
            cap = cfg.high
        out = distort_events(events, cfg, PortableRng(trial))

        ptr = 0
        anchor = None
        prev_t = None
        for e in out:
            if ptr < len(events) and e == events[ptr]:
                anchor = e
                ptr += 1
            else:
                assert e.x > 0.0 and e.y > 0.0 and e.t > 0.0, (
                    f"trial {trial}: non-positive synthetic event {e}")
                assert anchor is not None, (
                    f"trial {trial}: synthetic event before any genuine one")
                r = ((e.x - anchor.x) ** 2 + (e.y - anchor.y) ** 2) ** 0.5
                assert r <= cap + radius_tol, (
                    f"trial {trial}: displacement {r:.6f} over cap {cap:.6f}")
            if prev_t is not None:
                assert e.t > prev_t, (
                    f"trial {trial}: time order broken at {e.t} after {prev_t}")
            prev_t = e.t
        assert ptr == len(events), (
            f"trial {trial}: genuine event dropped or altered "
            f"({ptr}/{len(events)} matched)")


def test_08_statistics_identities():
    """Holm on [.01, .03, .04] equals [.03, .06, .06] exactly in float64
    (0.01*3 rounds to fl(0.03)); weighted recall equals accuracy on 1,000
    random pairs within 1e-12 (summation order only)."""
    adjusted = holm_adjust([0.01, 0.03, 0.04])
    assert np.array_equal(adjusted, np.array([0.03, 0.06, 0.06])), (
        f"Holm gave {adjusted.tolist()}")

    rng = np.random.default_rng(77)
    for trial in range(1000):
        n = int(rng.integers(2, 60))
        y = rng.integers(0, 2, size=n)
        scores = rng.uniform(size=n)
        res = weighted_prf(y, scores)
        assert abs(res.recall - res.accuracy) < 1e-12, (
            f"trial {trial}: weighted recall {res.recall!r} vs accuracy "
            f"{res.accuracy!r}")


def test_09_experiment_determinism(tmp_path):
    """The experiment command with one root seed writes byte-identical
    reports across two runs and across feature thread counts 1 and 4."""
    base = ["experiment", "--synth-n", "80", "--seed", "11",
            "--test-fraction", "0.25", "--hidden", "8",
            "--max-epochs", "6", "--patience", "6"]
    env = {k: v for k, v in os.environ.items()
           if not k.startswith("CURSORLAB_")}

    def run(tag, threads):
        out = tmp_path / tag
        cmd = [sys.executable, "-m", "cursorlab", *base,
               "--threads", str(threads), "--out", str(out)]
        proc = subprocess.run(cmd, capture_output=True, text=True, env=env)
        assert proc.returncode == 0, proc.stderr
        return (out / "report.json").read_bytes()

    first = run("r1", 1)
    second = run("r2", 1)
    threaded = run("r4", 4)
    assert first == second, "same seed, same threads: reports differ"
    assert first == threaded, "thread count changed the report"


def test_10_feature_filter(clean_forest, real_bundle):
    """An exact duplicate column is always pruned to one survivor, both on
    the extracted feature matrix and on random constructions; on the real
    dataset the surviving feature count lies in [42, 62]."""
    X = clean_forest["X_train"]
    base_mask, _ = fit_filter(X)
    src = base_mask.kept[0]
    dup_col = X.shape[1]
    X_dup = np.hstack([X, X[:, [src]]])
    mask, _ = fit_filter(X_dup)
    assert src in mask.kept, "original column should survive"
    assert dup_col not in mask.kept, "duplicate column should be pruned"
    assert len(mask.kept) == len(base_mask.kept), (
        "duplicate changed the surviving set beyond itself")

    rng = np.random.default_rng(19)
    for _ in range(25):
        n = int(rng.integers(30, 120))
        base = rng.normal(size=(n, 5))
        dup_of = int(rng.integers(0, 5))
        Xr = np.hstack([base, base[:, [dup_of]]])
        m, _ = fit_filter(Xr)
        survivors = [c for c in (dup_of, 5) if c in m.kept]
        assert survivors == [dup_of], (
            f"duplicate pair kept {survivors} instead of the earlier column")

    if real_bundle is not None:
        kept_counts = {t: len(fit_filter(real_bundle[t]["X_train"])[0].kept)
                       for t in ("age", "gender")}
        for target, count in kept_counts.items():
            assert 42 <= count <= 62, (
                f"{target}: {count} surviving features outside [42, 62]")

"""Hand-crafted trajectory features plus train-fitted filtering and scaling.

The battery aggregates per-step kinematic series (speed, acceleration, jerk,
heading dynamics, step geometry, dwell gaps) together with event counts and
global shape descriptors.  Every feature is translation invariant: absolute
page coordinates never appear, only differences, so the same behaviour at a
different screen corner produces identical values.

The canonical feature order is frozen in ``resources/feature_manifest_v1.json``
and doubles as the schema for downstream model artifacts.  Redundancy is
removed on the training split only: highly correlated pairs (absolute
Pearson r at or above 0.80 with an uncorrected two-sided p below .05) drop
the later feature, then linearly dependent and constant columns go.  The
uncorrected p is a deliberate reading; with ~160 columns a multiplicity
correction would prune almost nothing at these thresholds.
"""

from __future__ import annotations

import importlib.resources
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import t as t_dist

from .sessions import Diagnostic, Session

MANIFEST_RESOURCE = "feature_manifest_v1.json"
MANIFEST_VERSION = 1

_BASIC = ("min", "max", "mean", "sd", "median")
_QUARTILES = ("q25", "q75")
_THIRD_AGGS = ("mean", "sd")


@dataclass(frozen=True)
class FeatureConfig:
    pause_ms: float = 500.0          # inter-sample gap that counts as a dwell
    hover_ms: float = 300.0          # minimum duration over one target path
    direction_change_rad: float = math.pi / 4


# (series name, aggregate spec) in canonical order; the manifest is generated
# from this table and must never silently drift from it.
_SERIES_SPEC: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("step_dist", _BASIC + ("sum",) + _QUARTILES + ("range", "thirds")),
    ("step_dt", _BASIC + ("sum",) + _QUARTILES),
    ("speed", _BASIC + _QUARTILES + ("range", "thirds")),
    ("velocity_x", _BASIC),
    ("velocity_y", _BASIC),
    ("abs_velocity_x", _BASIC),
    ("abs_velocity_y", _BASIC),
    ("accel", _BASIC + _QUARTILES + ("range", "thirds")),
    ("abs_accel", _BASIC),
    ("jerk", _BASIC + _QUARTILES),
    ("abs_jerk", _BASIC),
    ("heading", _BASIC),
    ("heading_change", _BASIC + ("sum",) + _QUARTILES + ("range", "thirds")),
    ("signed_heading_change", _BASIC),
    ("angular_velocity", _BASIC + _QUARTILES + ("thirds",)),
    ("curvature", _BASIC + _QUARTILES),
    ("dist_from_start", _BASIC),
    ("pause_duration", ("min", "max", "mean", "sd", "sum")),
)

_SCALARS = (
    "n_events", "n_moves", "n_clicks", "n_scrolls", "n_unique_targets",
    "n_hovers", "hover_total_ms", "n_pauses", "n_direction_changes",
    "n_x_direction_changes", "n_y_direction_changes", "straightness",
    "bbox_width", "bbox_height", "bbox_area_frac", "overall_speed",
    "idle_fraction", "move_rate",
)


def feature_names() -> list[str]:
    names: list[str] = []
    for series, aggs in _SERIES_SPEC:
        for agg in aggs:
            if agg == "thirds":
                for third in (1, 2, 3):
                    for a in _THIRD_AGGS:
                        names.append(f"{series}_third{third}_{a}")
            else:
                names.append(f"{series}_{agg}")
    names.extend(_SCALARS)
    return names


def load_manifest() -> dict:
    text = importlib.resources.files("cursorlab.resources").joinpath(
        MANIFEST_RESOURCE).read_text(encoding="utf-8")
    return json.loads(text)


def _agg(values: np.ndarray, agg: str) -> float:
    """One aggregate of a possibly empty series; empty series yield 0.0."""
    if values.size == 0:
        return 0.0
    if agg == "min":
        return float(values.min())
    if agg == "max":
        return float(values.max())
    if agg == "mean":
        return float(values.mean())
    if agg == "sd":
        return float(values.std())
    if agg == "median":
        return float(np.median(values))
    if agg == "sum":
        return float(values.sum())
    if agg == "q25":
        return float(np.percentile(values, 25))
    if agg == "q75":
        return float(np.percentile(values, 75))
    if agg == "range":
        return float(values.max() - values.min())
    raise ValueError(f"unknown aggregate {agg!r}")


def _thirds(values: np.ndarray) -> list[float]:
    out = []
    for chunk in np.array_split(values, 3):
        for a in _THIRD_AGGS:
            out.append(_agg(chunk, a))
    return out


def _wrap_angle(d: np.ndarray) -> np.ndarray:
    return (d + np.pi) % (2.0 * np.pi) - np.pi


def _sign_change_count(deltas: np.ndarray) -> int:
    signs = np.sign(deltas)
    signs = signs[signs != 0]
    if signs.size < 2:
        return 0
    return int(np.sum(signs[1:] != signs[:-1]))


def extract_features(session: Session, cfg: FeatureConfig | None = None) -> np.ndarray:
    """Feature vector for one session, ordered per the frozen manifest.

    Requires at least two mousemove events; anything sparser has no defined
    kinematics and raises.
    """
    cfg = cfg or FeatureConfig()
    moves = session.moves()
    n = len(moves)
    if n < 2:
        raise ValueError(f"session {session.id} has {n} mousemove events, need at least 2")

    x = np.array([e.x for e in moves])
    y = np.array([e.y for e in moves])
    t = np.array([e.t for e in moves])

    dx = np.diff(x)
    dy = np.diff(y)
    dt = np.diff(t)
    step_dist = np.hypot(dx, dy)
    speed = step_dist / dt
    velocity_x = dx / dt
    velocity_y = dy / dt
    accel = np.diff(speed) / dt[1:] if n >= 3 else np.empty(0)
    jerk = np.diff(accel) / dt[2:] if n >= 4 else np.empty(0)

    # zero-length steps have no heading of their own; they inherit the last
    # real one so dwells do not register as turns
    heading = np.arctan2(dy, dx)
    moving = step_dist > 0
    if not moving.all():
        filled = 0.0
        for i in range(heading.size):
            if moving[i]:
                filled = heading[i]
            else:
                heading[i] = filled
    heading_change_signed = _wrap_angle(np.diff(heading)) if n >= 3 else np.empty(0)
    heading_change = np.abs(heading_change_signed)
    angular_velocity = heading_change / dt[1:] if n >= 3 else np.empty(0)
    with np.errstate(divide="ignore", invalid="ignore"):
        curvature = np.where(step_dist[1:] > 0, heading_change / step_dist[1:], 0.0) \
            if n >= 3 else np.empty(0)

    dist_from_start = np.hypot(x - x[0], y - y[0])
    pause_durations = dt[dt > cfg.pause_ms]

    series = {
        "step_dist": step_dist,
        "step_dt": dt,
        "speed": speed,
        "velocity_x": velocity_x,
        "velocity_y": velocity_y,
        "abs_velocity_x": np.abs(velocity_x),
        "abs_velocity_y": np.abs(velocity_y),
        "accel": accel,
        "abs_accel": np.abs(accel),
        "jerk": jerk,
        "abs_jerk": np.abs(jerk),
        "heading": heading,
        "heading_change": heading_change,
        "signed_heading_change": heading_change_signed,
        "angular_velocity": angular_velocity,
        "curvature": curvature,
        "dist_from_start": dist_from_start,
        "pause_duration": pause_durations,
    }

    values: list[float] = []
    for name, aggs in _SERIES_SPEC:
        v = series[name]
        for agg in aggs:
            if agg == "thirds":
                values.extend(_thirds(v))
            else:
                values.append(_agg(v, agg))

    # hovers: runs of consecutive moves sharing one non-null target path
    n_hovers = 0
    hover_total = 0.0
    run_path, run_start = None, 0.0
    prev_t = 0.0
    for e in moves:
        if e.target_path is not None and e.target_path == run_path:
            prev_t = e.t
            continue
        if run_path is not None and prev_t - run_start >= cfg.hover_ms:
            n_hovers += 1
            hover_total += prev_t - run_start
        run_path = e.target_path
        run_start = prev_t = e.t
    if run_path is not None and prev_t - run_start >= cfg.hover_ms:
        n_hovers += 1
        hover_total += prev_t - run_start

    path_len = float(step_dist.sum())
    endpoint = float(dist_from_start[-1])
    straightness = endpoint / path_len if path_len > 0 else 1.0
    duration = float(t[-1] - t[0])
    bbox_w = float(x.max() - x.min())
    bbox_h = float(y.max() - y.min())

    all_events = session.events
    targets = {e.target_path for e in all_events if e.target_path is not None}

    scalars = {
        "n_events": float(len(all_events)),
        "n_moves": float(n),
        "n_clicks": float(sum(1 for e in all_events if e.name == "click")),
        "n_scrolls": float(sum(1 for e in all_events if e.name == "scroll")),
        "n_unique_targets": float(len(targets)),
        "n_hovers": float(n_hovers),
        "hover_total_ms": hover_total,
        "n_pauses": float(pause_durations.size),
        "n_direction_changes": float(np.sum(heading_change > cfg.direction_change_rad)),
        "n_x_direction_changes": float(_sign_change_count(dx)),
        "n_y_direction_changes": float(_sign_change_count(dy)),
        "straightness": straightness,
        "bbox_width": bbox_w,
        "bbox_height": bbox_h,
        "bbox_area_frac": bbox_w * bbox_h / (session.viewport_w * session.viewport_h),
        "overall_speed": path_len / duration if duration > 0 else 0.0,
        "idle_fraction": float(pause_durations.sum()) / duration if duration > 0 else 0.0,
        "move_rate": n / (duration / 1000.0) if duration > 0 else 0.0,
    }
    values.extend(scalars[k] for k in _SCALARS)
    return np.asarray(values, dtype=np.float64)


def extract_matrix(sessions: Sequence[Session], cfg: FeatureConfig | None = None,
                   threads: int = 1) -> np.ndarray:
    """Feature matrix (n_sessions, n_features) in session order.

    Extraction is independent per session; with ``threads`` > 1 a thread
    pool fans out but results are collected in order, so the matrix is
    identical for every thread count.
    """
    cfg = cfg or FeatureConfig()
    if threads > 1 and len(sessions) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda s: extract_features(s, cfg), sessions))
    else:
        rows = [extract_features(s, cfg) for s in sessions]
    return np.vstack(rows) if rows else np.empty((0, len(feature_names())))


# ---------------------------------------------------------------------------
# train-fitted redundancy filter


@dataclass(frozen=True)
class FeatureMask:
    kept: tuple[int, ...]
    dropped: dict[str, tuple[int, ...]] = field(default_factory=dict)
    r_threshold: float = 0.80
    p_threshold: float = 0.05

    def apply(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X)[:, list(self.kept)]

    def kept_names(self, names: Sequence[str] | None = None) -> list[str]:
        names = list(names) if names is not None else feature_names()
        return [names[i] for i in self.kept]

    def to_dict(self) -> dict:
        return {
            "kept": list(self.kept),
            "dropped": {k: list(v) for k, v in self.dropped.items()},
            "r_threshold": self.r_threshold,
            "p_threshold": self.p_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMask":
        return cls(kept=tuple(d["kept"]),
                   dropped={k: tuple(v) for k, v in d["dropped"].items()},
                   r_threshold=d["r_threshold"], p_threshold=d["p_threshold"])


def _pearson_p(r: np.ndarray, n: int) -> np.ndarray:
    """Two-sided p for Pearson r via the exact t transform, df = n - 2."""
    r = np.clip(r, -1.0, 1.0)
    denom = 1.0 - r * r
    p = np.zeros_like(r)
    ok = denom > 0
    t_stat = np.abs(r[ok]) * np.sqrt((n - 2) / denom[ok])
    p[ok] = 2.0 * t_dist.sf(t_stat, df=n - 2)
    return p


def fit_filter(X_train: np.ndarray, r_threshold: float = 0.80,
               p_threshold: float = 0.05) -> tuple[FeatureMask, list[Diagnostic]]:
    """Fit the redundancy filter on training rows only.

    Pass order: constant columns out first, then the greedy correlation
    sweep in canonical order (the later member of each offending pair is
    dropped), then exact linear dependence among the survivors.
    """
    X = np.asarray(X_train, dtype=np.float64)
    n, d = X.shape
    if n < 3:
        raise ValueError("need at least 3 training rows to fit the filter")
    diags: list[Diagnostic] = []
    names = feature_names()
    if d != len(names):
        names = [f"f{i}" for i in range(d)]

    sd = X.std(axis=0)
    constant = np.flatnonzero(sd == 0)
    if constant.size:
        diags.append(Diagnostic(
            "constant_features",
            f"dropped {constant.size} zero-variance columns: "
            + ", ".join(names[i] for i in constant[:8])
            + ("..." if constant.size > 8 else "")))
    alive = [i for i in range(d) if sd[i] > 0]

    corr = np.corrcoef(X[:, alive], rowvar=False) if len(alive) > 1 else np.ones((1, 1))
    pvals = _pearson_p(corr, n)
    keep_local = np.ones(len(alive), dtype=bool)
    corr_dropped: list[int] = []
    for i in range(len(alive)):
        if not keep_local[i]:
            continue
        for j in range(i + 1, len(alive)):
            if keep_local[j] and abs(corr[i, j]) >= r_threshold and pvals[i, j] < p_threshold:
                keep_local[j] = False
                corr_dropped.append(alive[j])

    survivors = [alive[i] for i in range(len(alive)) if keep_local[i]]

    # Gram-Schmidt sweep over centered survivors; a column whose residual is
    # numerically zero is a linear combination of earlier kept columns
    dep_dropped: list[int] = []
    basis: list[np.ndarray] = []
    kept: list[int] = []
    for idx in survivors:
        col = X[:, idx] - X[:, idx].mean()
        norm0 = np.linalg.norm(col)
        resid = col.copy()
        for b in basis:
            resid -= (resid @ b) * b
        if np.linalg.norm(resid) <= 1e-8 * max(norm0, 1.0):
            dep_dropped.append(idx)
            continue
        basis.append(resid / np.linalg.norm(resid))
        kept.append(idx)
    if dep_dropped:
        diags.append(Diagnostic(
            "dependent_features",
            f"dropped {len(dep_dropped)} linearly dependent columns: "
            + ", ".join(names[i] for i in dep_dropped[:8])
            + ("..." if len(dep_dropped) > 8 else "")))

    mask = FeatureMask(
        kept=tuple(kept),
        dropped={
            "constant": tuple(int(i) for i in constant),
            "correlated": tuple(corr_dropped),
            "dependent": tuple(dep_dropped),
        },
        r_threshold=r_threshold,
        p_threshold=p_threshold,
    )
    return mask, diags


# ---------------------------------------------------------------------------
# train-fitted [0, 1] scaling


@dataclass(frozen=True)
class Normalizer:
    lo: np.ndarray
    hi: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Map to [0, 1] with the fitted bounds; out-of-range values clip.

        Zero-range columns map to 0.5, the uninformative midpoint.
        """
        X = np.asarray(X, dtype=np.float64)
        span = self.hi - self.lo
        out = np.empty_like(X)
        flat = span == 0
        out[:, ~flat] = (X[:, ~flat] - self.lo[~flat]) / span[~flat]
        out[:, flat] = 0.5
        return np.clip(out, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(lo=np.asarray(d["lo"]), hi=np.asarray(d["hi"]))


def fit_normalizer(X_train: np.ndarray) -> Normalizer:
    X = np.asarray(X_train, dtype=np.float64)
    return Normalizer(lo=X.min(axis=0), hi=X.max(axis=0))

"""Feature-vector baselines: a majority-rate model and a random forest.

The forest is grown from scratch: CART splits on the Gini criterion with
midpoint thresholds, one bootstrap resample per tree, and a fresh random
feature subset at every split.  Scores are the mean class-1 leaf
proportion across trees, so they live in [0, 1] and work directly with the
threshold and ranking metrics.

Each tree draws from its own named substream keyed by (seed, tree index);
growing trees in any order, or in parallel, yields identical forests.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import math
from pathlib import Path
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .evaluation import roc_auc
from .rng import substream
from .sessions import Diagnostic

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ZeroRModel:
    """Predicts the training class-1 rate for everything.

    At the 0.5 decision threshold this is the majority class; an exact tie
    resolves to class 1 because thresholding is inclusive.
    """

    rate: float

    def predict_scores(self, X) -> np.ndarray:
        n = np.asarray(X).shape[0]
        return np.full(n, self.rate, dtype=np.float64)


def train_zeror(y_train) -> ZeroRModel:
    y = np.asarray(y_train, dtype=np.int64)
    if y.size == 0:
        raise ValueError("empty training set")
    return ZeroRModel(rate=float(y.mean()))


# ---------------------------------------------------------------------------
# random forest


@dataclass(frozen=True)
class RFConfig:
    """Forest hyperparameters.

    ``min_impurity_decrease`` is the epsilon-style early-stopping knob: a
    split must lower the node Gini by at least this much.  That reading of
    the usual epsilon threshold is a judgement call (a tolerance on score
    ties would be another one); it is the least intrusive interpretation
    and zero disables it entirely.
    """

    n_trees: int = 300
    max_features: str | int = "sqrt"   # "sqrt", "third", or an explicit count
    min_node_size: int = 1
    max_terminal_nodes: int | None = None
    min_impurity_decrease: float = 0.0
    seed: int = 0

    def resolve_mtry(self, d: int) -> int:
        if isinstance(self.max_features, int):
            return max(1, min(self.max_features, d))
        if self.max_features == "sqrt":
            return max(1, int(math.sqrt(d)))
        if self.max_features == "third":
            return max(1, d // 3)
        raise ValueError(f"unknown max_features {self.max_features!r}")


class _Tree:
    """Array-backed CART tree; node -1 children mark leaves."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add_node(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0], dtype=np.float64)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if idx.size == 0:
                continue
            if self.left[node] == -1:
                out[idx] = self.value[node]
                continue
            go_left = X[idx, self.feature[node]] <= self.threshold[node]
            stack.append((self.left[node], idx[go_left]))
            stack.append((self.right[node], idx[~go_left]))
        return out

    @property
    def n_leaves(self) -> int:
        return sum(1 for l in self.left if l == -1)


def _gini(n_pos: float, n: float) -> float:
    if n <= 0:
        return 0.0
    p = n_pos / n
    return 2.0 * p * (1.0 - p)


def _best_split(X: np.ndarray, y: np.ndarray, idx: np.ndarray,
                features: np.ndarray, min_node: int):
    """Best (decrease, feature, threshold, left_idx, right_idx) or None.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values.  Deterministic tie handling: the first feature in the drawn
    order wins, then the lowest threshold.
    """
    n = idx.size
    y_node = y[idx]
    n_pos = float(y_node.sum())
    parent = _gini(n_pos, n)
    best = None
    best_dec = 0.0
    for f in features:
        v = X[idx, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        ys = y_node[order]
        cum_pos = np.cumsum(ys)
        splits = np.flatnonzero(vs[1:] > vs[:-1]) + 1   # left sizes
        if min_node > 1:
            splits = splits[(splits >= min_node) & (n - splits >= min_node)]
        if splits.size == 0:
            continue
        left_pos = cum_pos[splits - 1]
        left_n = splits.astype(np.float64)
        right_n = n - left_n
        right_pos = n_pos - left_pos
        p_l = left_pos / left_n
        p_r = right_pos / right_n
        child = (left_n * 2.0 * p_l * (1.0 - p_l) + right_n * 2.0 * p_r * (1.0 - p_r)) / n
        dec = parent - child
        k = int(np.argmax(dec))
        if dec[k] > best_dec + 1e-15:
            best_dec = float(dec[k])
            cut = splits[k]
            thr = (vs[cut - 1] + vs[cut]) / 2.0
            best = (best_dec, int(f), thr, idx[order[:cut]], idx[order[cut:]])
    return best


def _grow_tree(X: np.ndarray, y: np.ndarray, cfg: RFConfig,
               rng: np.random.Generator) -> _Tree:
    n, d = X.shape
    mtry = cfg.resolve_mtry(d)
    boot = rng.integers(0, n, size=n)
    tree = _Tree()

    def node_value(idx: np.ndarray) -> float:
        return float(y[idx].mean())

    root_idx = boot
    tree.add_node(node_value(root_idx))

    # best-first expansion; an unbounded leaf budget degenerates to plain
    # depth-order growth because every viable node is expanded eventually
    budget = math.inf if cfg.max_terminal_nodes is None else cfg.max_terminal_nodes - 1
    counter = itertools.count()
    heap: list = []

    def consider(node: int, idx: np.ndarray):
        if idx.size < max(2, 2 * cfg.min_node_size):
            return
        y_node = y[idx]
        if y_node.min() == y_node.max():
            return
        feats = rng.choice(d, size=mtry, replace=False)
        found = _best_split(X, y, idx, feats, cfg.min_node_size)
        if found is None:
            return
        dec = found[0]
        if dec < cfg.min_impurity_decrease or dec <= 0.0:
            return
        heapq.heappush(heap, (-dec, next(counter), node, found))

    consider(0, root_idx)
    while heap and budget > 0:
        _, _, node, (dec, f, thr, l_idx, r_idx) = heapq.heappop(heap)
        lid = tree.add_node(node_value(l_idx))
        rid = tree.add_node(node_value(r_idx))
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = lid
        tree.right[node] = rid
        budget -= 1
        consider(lid, l_idx)
        consider(rid, r_idx)
    return tree


@dataclass(frozen=True)
class RFModel:
    config: RFConfig
    trees: tuple[_Tree, ...] = field(repr=False, default=())

    def predict_scores(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        acc = np.zeros(X.shape[0], dtype=np.float64)
        for t in self.trees:
            acc += t.predict(X)
        return acc / len(self.trees)


def train_rf(X_train, y_train, cfg: RFConfig | None = None) -> RFModel:
    cfg = cfg or RFConfig()
    X = np.asarray(X_train, dtype=np.float64)
    y = np.asarray(y_train, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X must be (n, d) aligned with y")
    if y.min() == y.max():
        log.warning("train_rf: single-class training set, forest degenerates to a constant")
    trees = tuple(
        _grow_tree(X, y, cfg, substream(cfg.seed, "bootstrap", index=i))
        for i in range(cfg.n_trees)
    )
    return RFModel(config=cfg, trees=trees)


# ---------------------------------------------------------------------------
# hyperparameter search

# full factorial default; the experiment pipeline narrows this for speed
DEFAULT_GRID: tuple[dict, ...] = tuple(
    {
        "n_trees": nt, "max_features": mf, "min_node_size": mn,
        "max_terminal_nodes": mtn, "min_impurity_decrease": eps,
    }
    for nt, mf, mn, mtn, eps in itertools.product(
        (100, 300, 500), ("sqrt", "third"), (1, 5, 10), (None, 64), (0.0, 1e-4))
)

FAST_GRID: tuple[dict, ...] = tuple(
    {
        "n_trees": nt, "max_features": "sqrt", "min_node_size": mn,
        "max_terminal_nodes": None, "min_impurity_decrease": 0.0,
    }
    for nt, mn in itertools.product((100, 300), (1, 5))
)


def _stratified_indices(y: np.ndarray, fraction: float,
                        rng: np.random.Generator) -> np.ndarray:
    held = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        k = max(1, int(idx.size * fraction + 0.5))
        held.extend(idx[:k].tolist())
    return np.asarray(sorted(held))


def grid_search_rf(X_train, y_train, grid: Sequence[dict] | None = None,
                   seed: int = 0, validation_fraction: float = 0.10,
                   ) -> tuple[RFModel, dict, list[Diagnostic]]:
    """Select forest hyperparameters on a held-out slice of the train split.

    Every grid entry trains on the remainder and is scored by holdout AUC;
    the best entry (ties keep the earlier one) is refit on the full
    training data.  When the holdout cannot represent both classes the
    search falls back to stratified 5-fold cross-validation.
    """
    X = np.asarray(X_train, dtype=np.float64)
    y = np.asarray(y_train, dtype=np.int64)
    grid = tuple(grid) if grid is not None else DEFAULT_GRID
    if not grid:
        raise ValueError("empty hyperparameter grid")
    diags: list[Diagnostic] = []
    rng = substream(seed, "split", index=1)

    folds: list[tuple[np.ndarray, np.ndarray]] = []
    counts = np.bincount(y, minlength=2)
    held = _stratified_indices(y, validation_fraction, rng) if counts.min() > 0 else np.empty(0, dtype=int)
    held_ok = held.size >= 2 and np.unique(y[held]).size == 2 and held.size < y.size
    if held_ok:
        train_mask = np.ones(y.size, dtype=bool)
        train_mask[held] = False
        folds.append((np.flatnonzero(train_mask), held))
    else:
        diags.append(Diagnostic(
            "holdout_fallback",
            "holdout cannot represent both classes, using stratified 5-fold selection"))
        k = 5
        per_class = [np.flatnonzero(y == c) for c in np.unique(y)]
        for idx in per_class:
            rng.shuffle(idx)
        assignment = np.zeros(y.size, dtype=np.int64)
        for idx in per_class:
            assignment[idx] = np.arange(idx.size) % k
        for f in range(k):
            val = np.flatnonzero(assignment == f)
            if np.unique(y[val]).size < 2:
                continue
            folds.append((np.flatnonzero(assignment != f), val))
        if not folds:
            diags.append(Diagnostic("degenerate_search",
                                    "no usable validation fold, keeping the first grid entry"))

    log_entries = []
    best_score, best_i = -np.inf, 0
    for i, entry in enumerate(grid):
        cfg = RFConfig(seed=seed, **entry)
        if folds:
            scores = []
            for tr, va in folds:
                model = train_rf(X[tr], y[tr], cfg)
                scores.append(roc_auc(y[va], model.predict_scores(X[va])))
            score = float(np.mean(scores))
        else:
            score = float("nan")
        log_entries.append({"config": entry, "holdout_auc": score})
        if score > best_score:
            best_score, best_i = score, i

    best_cfg = RFConfig(seed=seed, **grid[best_i])
    model = train_rf(X, y, best_cfg)
    search_log = {
        "entries": log_entries,
        "best_index": best_i,
        "best_holdout_auc": best_score if math.isfinite(best_score) else None,
        "validation_fraction": validation_fraction,
    }
    return model, search_log, diags


# ---------------------------------------------------------------------------
# persistence

_RF_VERSION = 1


def save_rf(model: RFModel, path) -> None:
    """Write the forest as one npz: node arrays concatenated across trees."""
    offsets = np.zeros(len(model.trees) + 1, dtype=np.int64)
    for i, t in enumerate(model.trees):
        offsets[i + 1] = offsets[i] + len(t.value)
    meta = {"kind": "rf", "version": _RF_VERSION, "config": {**model.config.__dict__}}

    def cat(field_name, dtype):
        parts = [np.asarray(getattr(t, field_name), dtype=dtype) for t in model.trees]
        return np.concatenate(parts) if parts else np.empty(0, dtype=dtype)

    # a file handle keeps np.savez from appending .npz to extensionless paths
    with open(path, "wb") as fh:
        np.savez(fh,
                 meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 offsets=offsets,
                 feature=cat("feature", np.int64),
                 threshold=cat("threshold", np.float64),
                 left=cat("left", np.int64),
                 right=cat("right", np.int64),
                 value=cat("value", np.float64))


def load_rf(path) -> RFModel:
    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("kind") != "rf" or meta.get("version") != _RF_VERSION:
            raise ValueError("not a supported forest file")
        offsets = z["offsets"]
        trees = []
        for i in range(offsets.size - 1):
            lo, hi = int(offsets[i]), int(offsets[i + 1])
            t = _Tree()
            t.feature = z["feature"][lo:hi].tolist()
            t.threshold = z["threshold"][lo:hi].tolist()
            t.left = z["left"][lo:hi].tolist()
            t.right = z["right"][lo:hi].tolist()
            t.value = z["value"][lo:hi].tolist()
            trees.append(t)
    return RFModel(config=RFConfig(**meta["config"]), trees=tuple(trees))


def save_zeror(model: ZeroRModel, path) -> None:
    Path(path).write_text(json.dumps({"kind": "zeror", "version": 1, "rate": model.rate}))


def load_zeror(path) -> ZeroRModel:
    d = json.loads(Path(path).read_text())
    if d.get("kind") != "zeror":
        raise ValueError("not a majority-rate model file")
    return ZeroRModel(rate=float(d["rate"]))

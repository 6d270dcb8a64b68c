"""Classifier evaluation: threshold metrics, ranking AUC, significance tests.

All metrics treat class 1 as the positive class and expect scores in [0, 1].
Degenerate inputs (single-class truth, zero-variance proportions, empty
prediction bins) yield defined values plus a logged warning instead of
raising, so batch evaluations never die half way.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

log = logging.getLogger(__name__)


def roc_auc(y_true, scores) -> float:
    """Area under the ROC curve as a pairwise concordance probability.

    Equals the probability that a random positive outranks a random
    negative, ties counted one half.  Returns nan when only one class is
    present.
    """
    y = np.asarray(y_true, dtype=np.int64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError("y_true and scores must be 1-d arrays of equal length")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        log.warning("roc_auc: only one class present (pos=%d, neg=%d)", n_pos, n_neg)
        return float("nan")
    ranks = rankdata(s, method="average")
    r_pos = float(np.sum(ranks[y == 1]))
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass(frozen=True)
class PRFResult:
    precision: float
    recall: float
    f1: float
    accuracy: float
    per_class: dict = field(default_factory=dict)
    support: tuple[int, int] = (0, 0)


def weighted_prf(y_true, scores, threshold: float = 0.5) -> PRFResult:
    """Support-weighted precision, recall, and F1 at a score threshold.

    Scores at or above the threshold predict class 1.  Per-class metrics
    with an empty denominator are set to zero (with a warning), mirroring
    the usual zero-division convention.
    """
    y = np.asarray(y_true, dtype=np.int64)
    s = np.asarray(scores, dtype=np.float64)
    pred = (s >= threshold).astype(np.int64)
    n = y.size
    if n == 0:
        raise ValueError("empty evaluation set")

    per_class = {}
    weighted = {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    support = (int(np.sum(y == 0)), int(np.sum(y == 1)))
    for c in (0, 1):
        tp = int(np.sum((pred == c) & (y == c)))
        n_pred = int(np.sum(pred == c))
        n_true = int(np.sum(y == c))
        if n_pred == 0:
            log.warning("weighted_prf: no predictions for class %d, precision set to 0", c)
        if n_true == 0:
            log.warning("weighted_prf: no true members of class %d, recall set to 0", c)
        prec = tp / n_pred if n_pred else 0.0
        rec = tp / n_true if n_true else 0.0
        f1 = 2 * prec * rec / (prec + rec) if (prec + rec) > 0 else 0.0
        per_class[c] = {"precision": prec, "recall": rec, "f1": f1, "support": n_true}
        w = n_true / n
        weighted["precision"] += w * prec
        weighted["recall"] += w * rec
        weighted["f1"] += w * f1

    return PRFResult(
        precision=weighted["precision"],
        recall=weighted["recall"],
        f1=weighted["f1"],
        accuracy=float(np.mean(pred == y)),
        per_class=per_class,
        support=support,
    )


def holm_adjust(p_values) -> np.ndarray:
    """Holm step-down adjustment, monotone and capped at one."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("p_values must be 1-d")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * (m - np.arange(m))
    adjusted = np.minimum(np.maximum.accumulate(scaled), 1.0)
    out = np.empty(m)
    out[order] = adjusted
    return out


def proportion_z_test(k1: int, n1: int, k2: int, n2: int) -> tuple[float, float]:
    """Two-sided two-proportion z-test with a pooled variance estimate.

    Returns (z, p).  Zero pooled variance means the proportions cannot
    differ under the null, so p is 1 by convention.
    """
    if min(n1, n2) <= 0:
        raise ValueError("sample sizes must be positive")
    p1, p2 = k1 / n1, k2 / n2
    pooled = (k1 + k2) / (n1 + n2)
    var = pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)
    if var <= 0.0:
        log.warning("proportion_z_test: zero pooled variance, returning p=1")
        return 0.0, 1.0
    z = (p1 - p2) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return z, p


def pairwise_proportion_tests(correct: dict[str, np.ndarray]) -> list[dict]:
    """Pairwise z-tests on correct-classification proportions, Holm adjusted.

    ``correct`` maps classifier name to a 0/1 vector of per-instance
    correctness over the same test set.  Returns one record per unordered
    pair with raw and adjusted p-values.
    """
    names = sorted(correct)
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1:]]
    raw = []
    for a, b in pairs:
        ca = np.asarray(correct[a], dtype=np.int64)
        cb = np.asarray(correct[b], dtype=np.int64)
        _, p = proportion_z_test(int(ca.sum()), ca.size, int(cb.sum()), cb.size)
        raw.append(p)
    adj = holm_adjust(raw) if raw else np.empty(0)
    return [
        {"a": a, "b": b, "raw_p": float(rp), "adjusted_p": float(ap)}
        for (a, b), rp, ap in zip(pairs, raw, adj)
    ]


# ---------------------------------------------------------------------------
# report assembly


@dataclass
class EvalReport:
    """Evaluation of one or more classifiers on a shared test set."""

    target: str
    n_test: int
    classifiers: dict[str, dict]
    pairwise: list[dict] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "target": self.target,
            "n_test": self.n_test,
            "classifiers": self.classifiers,
            "pairwise": self.pairwise,
            "metadata": self.metadata,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(target=d["target"], n_test=d["n_test"], classifiers=d["classifiers"],
                   pairwise=d.get("pairwise", []), metadata=d.get("metadata", {}))


def evaluate_classifier(y_true, scores) -> dict:
    prf = weighted_prf(y_true, scores)
    return {
        "auc": roc_auc(y_true, scores),
        "precision": prf.precision,
        "recall": prf.recall,
        "f1": prf.f1,
        "accuracy": prf.accuracy,
        "support": list(prf.support),
    }


def build_report(target: str, y_true, scores_by_name: dict[str, np.ndarray],
                 metadata: dict | None = None) -> EvalReport:
    y = np.asarray(y_true, dtype=np.int64)
    classifiers = {}
    correct = {}
    for name, s in scores_by_name.items():
        s = np.asarray(s, dtype=np.float64)
        classifiers[name] = evaluate_classifier(y, s)
        correct[name] = ((s >= 0.5).astype(np.int64) == y).astype(np.int64)
    return EvalReport(
        target=target,
        n_test=int(y.size),
        classifiers=classifiers,
        pairwise=pairwise_proportion_tests(correct) if len(correct) > 1 else [],
        metadata=metadata or {},
    )


_METRIC_COLS = ("precision", "recall", "f1", "auc", "accuracy")


def render_table(report: EvalReport, reference: EvalReport | None = None) -> str:
    """Plain-text metric table; a reference report adds relative change."""
    lines = [f"target: {report.target}   n_test: {report.n_test}"]
    header = f"{'classifier':<12}" + "".join(f"{m:>22}" if reference else f"{m:>11}"
                                             for m in _METRIC_COLS)
    lines.append(header)
    for name in sorted(report.classifiers):
        row = f"{name:<12}"
        for m in _METRIC_COLS:
            v = report.classifiers[name][m]
            cell = f"{v:.4f}" if not math.isnan(v) else "nan"
            if reference and name in reference.classifiers:
                ref = reference.classifiers[name][m]
                if ref and not math.isnan(ref) and not math.isnan(v):
                    cell += f" ({(v - ref) / ref * 100.0:+.2f}%)"
                else:
                    cell += " (n/a)"
                row += f"{cell:>22}"
            else:
                row += f"{cell:>11}"
        lines.append(row)
    if report.pairwise:
        lines.append("pairwise correctness tests (Holm adjusted):")
        for rec in report.pairwise:
            lines.append(f"  {rec['a']} vs {rec['b']}: raw p={rec['raw_p']:.4g}"
                         f" adjusted p={rec['adjusted_p']:.4g}")
    return "\n".join(lines) + "\n"

"""Binary-classification metrics for heavily imbalanced score rankings.

Conventions are pinned for cross-implementation agreement:

* ``roc_auc`` is the Mann-Whitney statistic: the probability that a random
  positive outranks a random negative, ties counted half.  The trapezoidal
  integral of the ROC curve points reproduces it exactly.
* ``pr_auc`` uses step-wise (right-continuous) interpolation over all
  distinct thresholds with recall descending, i.e. sum of
  (recall_i - recall_{i-1}) * precision_i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError

__all__ = [
    "CurvePoints",
    "LengthBucket",
    "roc_auc",
    "pr_auc",
    "curves",
    "trapezoid_area",
    "step_area",
    "length_bucket_index",
    "length_bucket_label",
    "metrics_by_length",
]


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError(f"scores {s.shape} and labels {y.shape} must be equal 1-D")
    if s.size == 0:
        raise MetricError("empty predictions")
    if not np.all(np.isfinite(s)):
        raise MetricError("scores must be finite")
    return s, y


def roc_auc(scores, labels) -> float:
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("roc_auc needs at least one positive and one negative")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    # average ranks within tie groups (1-based)
    boundaries = np.nonzero(np.diff(sorted_s))[0] + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [s.size]))
    ranks = np.empty(s.size)
    for lo, hi in zip(starts, ends):
        ranks[order[lo:hi]] = (lo + 1 + hi) / 2.0
    pos_rank_sum = ranks[y].sum()
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _threshold_counts(s: np.ndarray, y: np.ndarray):
    """Cumulative TP/FP at each distinct threshold, thresholds descending."""
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order].astype(np.float64)
    distinct = np.nonzero(np.diff(s_sorted))[0]
    last = np.concatenate((distinct, [s.size - 1]))
    tp = np.cumsum(y_sorted)[last]
    fp = (last + 1) - tp
    return s_sorted[last], tp, fp


def pr_auc(scores, labels) -> float:
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("pr_auc needs at least one positive")
    _, tp, fp = _threshold_counts(s, y)
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - prev_recall) * precision).sum())


@dataclass
class CurvePoints:
    """Ordered curve points with the thresholds that generated them.

    ROC: x = FPR, y = TPR, starting at (0, 0).  PR: x = recall, y = precision,
    starting at the (0, 1) anchor.  In both cases each remaining point
    corresponds to the decision rule ``score >= threshold`` at one distinct
    threshold, thresholds descending.
    """

    kind: str
    x: np.ndarray
    y: np.ndarray
    thresholds: np.ndarray

    def __len__(self) -> int:
        return len(self.x)


def curves(scores, labels, kind: str) -> CurvePoints:
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if kind == "roc":
        if n_pos == 0 or n_neg == 0:
            raise MetricError("roc curve needs both classes")
        thr, tp, fp = _threshold_counts(s, y)
        x = np.concatenate(([0.0], fp / n_neg))
        yy = np.concatenate(([0.0], tp / n_pos))
        t = np.concatenate(([np.inf], thr))
        return CurvePoints("roc", x, yy, t)
    if kind == "pr":
        if n_pos == 0:
            raise MetricError("pr curve needs at least one positive")
        thr, tp, fp = _threshold_counts(s, y)
        x = np.concatenate(([0.0], tp / n_pos))
        yy = np.concatenate(([1.0], tp / (tp + fp)))
        t = np.concatenate(([np.inf], thr))
        return CurvePoints("pr", x, yy, t)
    raise MetricError(f"unknown curve kind {kind!r}")


def trapezoid_area(curve: CurvePoints) -> float:
    return float(np.trapz(curve.y, curve.x))


def step_area(curve: CurvePoints) -> float:
    """Right-continuous step integral: sum of (x_i - x_{i-1}) * y_i."""
    return float((np.diff(curve.x) * curve.y[1:]).sum())


def length_bucket_index(t: int) -> int:
    """Bucket by true length with power-of-two edges: [1], [2], [3-4], [5-8], ..."""
    if t < 1:
        raise MetricError(f"length must be >= 1, got {t}")
    return (t - 1).bit_length()


def length_bucket_label(idx: int) -> str:
    if idx == 0:
        return "1"
    lo, hi = 2 ** (idx - 1) + 1, 2**idx
    return str(hi) if lo == hi else f"{lo}-{hi}"


@dataclass
class LengthBucket:
    label: str
    lo: int
    hi: int
    n: int
    n_pos: int
    roc_auc: float | None
    pr_auc: float | None


def metrics_by_length(scores, labels, lengths) -> list[LengthBucket]:
    """Per-length-bucket ROC/PR AUC; buckets lacking both classes yield None."""
    s, y = _validate(scores, labels)
    t = np.asarray(lengths, dtype=np.int64)
    if t.shape != s.shape:
        raise MetricError(f"lengths {t.shape} must match scores {s.shape}")
    idx = np.array([length_bucket_index(int(v)) for v in t])
    out = []
    for b in range(int(idx.max()) + 1):
        sel = idx == b
        n = int(sel.sum())
        if n == 0:
            continue
        n_pos = int(y[sel].sum())
        n_neg = n - n_pos
        r = roc_auc(s[sel], y[sel]) if n_pos and n_neg else None
        p = pr_auc(s[sel], y[sel]) if n_pos else None
        lo = 1 if b == 0 else 2 ** (b - 1) + 1
        out.append(LengthBucket(length_bucket_label(b), lo, 2**b if b else 1, n, n_pos, r, p))
    return out

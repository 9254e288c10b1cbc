"""Anomaly scores from per-position probability distributions.

Per position j with true token x_j the error against the true class is
``1 - p_j[x_j]``; against every false class k it is ``p_j[k]``.  The true
class slice is the error vector; the full per-class table is the error
matrix.  Errors can be normalized per class through empirical distribution
functions (strict less-than counts over held-out validation errors) before
sum or max pooling reduces them to one score per patient.  Higher scores are
more anomalous; the decision rule flags ``score >= threshold`` with the
threshold calibrated as the largest value whose recall meets the target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CalibrationError, ConfigurationError, DataError
from .models import ProbabilitySet

__all__ = [
    "ErrorVector",
    "ErrorMatrix",
    "EDFTable",
    "Variant",
    "AnomalyScore",
    "ThresholdCalibration",
    "error_vector",
    "error_matrix",
    "build_edf",
    "edf_transform",
    "aggregate",
    "calibrate_threshold",
    "collect_error_samples",
    "score_pipeline",
    "VARIANT_GRID",
]

POOLINGS = ("sum", "max", "mean")  # mean is available but not part of the default grid


@dataclass
class ErrorVector:
    values: np.ndarray  # (T,) true-class errors, real positions only
    label_ids: np.ndarray  # (T,) 1-based true token ids

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.label_ids = np.asarray(self.label_ids, dtype=np.int64)


@dataclass
class ErrorMatrix:
    values: np.ndarray  # (T, d) per-class errors, real positions only
    label_ids: np.ndarray  # (T,)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.label_ids = np.asarray(self.label_ids, dtype=np.int64)

    def true_class_slice(self) -> ErrorVector:
        rows = np.arange(self.values.shape[0])
        return ErrorVector(self.values[rows, self.label_ids - 1], self.label_ids)


def _checked_labels(pset: ProbabilitySet, labels) -> np.ndarray:
    ids = np.asarray(labels, dtype=np.int64)
    n_real = int(pset.mask.sum())
    if ids.shape != (n_real,):
        raise DataError(f"expected {n_real} labels for the unmasked positions, got {ids.shape}")
    if ids.size and ids.min() < 1:
        raise DataError("pad id 0 at an unmasked position")
    if ids.size and ids.max() > pset.n_classes:
        raise DataError(f"label {int(ids.max())} exceeds {pset.n_classes} classes")
    return ids


def error_matrix(pset: ProbabilitySet, labels) -> ErrorMatrix:
    ids = _checked_labels(pset, labels)
    probs = pset.real_probs()
    values = probs.copy()
    rows = np.arange(values.shape[0])
    values[rows, ids - 1] = 1.0 - probs[rows, ids - 1]
    return ErrorMatrix(values, ids)


def error_vector(pset: ProbabilitySet, labels) -> ErrorVector:
    ids = _checked_labels(pset, labels)
    probs = pset.real_probs()
    rows = np.arange(probs.shape[0])
    return ErrorVector(1.0 - probs[rows, ids - 1], ids)


class EDFTable:
    """Per-class empirical distribution functions over validation errors.

    ``query(k, e)`` returns the fraction of class-k samples strictly smaller
    than e.  Classes with no validation sample fall back to the pooled
    all-class sample and are reported in ``fallback_classes``.
    """

    def __init__(self, samples_by_class: dict[int, np.ndarray]):
        self.samples: dict[int, np.ndarray] = {}
        pooled = []
        for k, arr in samples_by_class.items():
            arr = np.sort(np.asarray(arr, dtype=np.float64).reshape(-1))
            self.samples[int(k)] = arr
            pooled.append(arr)
        self.pooled = np.sort(np.concatenate(pooled)) if pooled else np.empty(0)
        if self.pooled.size == 0:
            raise DataError("cannot build an EDF table without any sample")
        self.fallback_classes = sorted(k for k, a in self.samples.items() if a.size == 0)

    def classes(self) -> list[int]:
        return sorted(self.samples)

    def query(self, class_id: int, values) -> np.ndarray | float:
        arr = self.samples.get(int(class_id))
        if arr is None or arr.size == 0:
            arr = self.pooled
        v = np.asarray(values, dtype=np.float64)
        out = np.searchsorted(arr, v, side="left") / arr.size
        return float(out) if np.isscalar(values) or v.ndim == 0 else out

    def to_json(self, path: str | Path) -> None:
        payload = {str(k): a.tolist() for k, a in self.samples.items()}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "EDFTable":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls({int(k): np.asarray(v) for k, v in payload.items()})


def build_edf(samples_by_class: dict[int, np.ndarray]) -> EDFTable:
    return EDFTable(samples_by_class)


def collect_error_samples(
    psets: list[ProbabilitySet], labels_per_patient: list[np.ndarray], shape: str
) -> dict[int, np.ndarray]:
    """Group validation errors by class, matching how they will be queried.

    Vector shape: class k collects true-class errors of positions whose true
    label is k.  Matrix shape: class k collects column k of every error
    matrix, i.e. one entry per validation position.
    """
    if shape not in ("vector", "matrix"):
        raise ConfigurationError(f"unknown error shape {shape!r}")
    if not psets:
        raise DataError("no validation probability sets")
    d = psets[0].n_classes
    if shape == "vector":
        buckets: dict[int, list] = {k: [] for k in range(1, d + 1)}
        for pset, labels in zip(psets, labels_per_patient):
            ev = error_vector(pset, labels)
            for k, e in zip(ev.label_ids, ev.values):
                buckets[int(k)].append(e)
        return {k: np.asarray(v) for k, v in buckets.items()}
    columns = []
    for pset, labels in zip(psets, labels_per_patient):
        columns.append(error_matrix(pset, labels).values)
    stacked = np.concatenate(columns, axis=0)
    return {k: stacked[:, k - 1] for k in range(1, d + 1)}


def edf_transform(errors, table: EDFTable):
    """Replace each error by its per-class EDF value; preserves the shape."""
    if isinstance(errors, ErrorVector):
        out = np.empty_like(errors.values)
        for i, (k, e) in enumerate(zip(errors.label_ids, errors.values)):
            out[i] = table.query(int(k), float(e))
        return ErrorVector(out, errors.label_ids)
    if isinstance(errors, ErrorMatrix):
        out = np.empty_like(errors.values)
        for k in range(1, errors.values.shape[1] + 1):
            out[:, k - 1] = table.query(k, errors.values[:, k - 1])
        return ErrorMatrix(out, errors.label_ids)
    raise ConfigurationError(f"cannot transform {type(errors).__name__}")


def aggregate(errors, pooling: str) -> float:
    if pooling not in POOLINGS:
        raise ConfigurationError(f"unknown pooling {pooling!r}")
    values = errors.values
    if values.size == 0:
        raise DataError("cannot aggregate an empty error set")
    if pooling == "sum":
        return float(values.sum())
    if pooling == "max":
        return float(values.max())
    return float(values.mean())


@dataclass(frozen=True)
class Variant:
    shape: str  # vector | matrix
    pooling: str  # sum | max | mean
    edf: bool

    def __post_init__(self):
        if self.shape not in ("vector", "matrix"):
            raise ConfigurationError(f"unknown error shape {self.shape!r}")
        if self.pooling not in POOLINGS:
            raise ConfigurationError(f"unknown pooling {self.pooling!r}")

    def __str__(self) -> str:
        return f"{self.shape}-{self.pooling}-{'edf' if self.edf else 'raw'}"

    @classmethod
    def parse(cls, text: str) -> "Variant":
        try:
            shape, pooling, norm = text.split("-")
            if norm not in ("edf", "raw"):
                raise ValueError(norm)
            return cls(shape, pooling, norm == "edf")
        except ValueError:
            raise ConfigurationError(f"cannot parse variant {text!r}") from None


VARIANT_GRID = tuple(
    Variant(shape, pooling, edf)
    for shape in ("vector", "matrix")
    for pooling in ("sum", "max")
    for edf in (False, True)
)


@dataclass
class AnomalyScore:
    patient_id: str
    score: float
    variant: Variant


@dataclass
class ThresholdCalibration:
    threshold: float
    achieved_recall: float
    achieved_precision: float
    target_recall: float


def calibrate_threshold(scores, labels, target_recall: float) -> ThresholdCalibration:
    """Largest threshold t such that the rule ``score >= t`` reaches the target recall."""
    if not 0.0 < target_recall <= 1.0:
        raise ConfigurationError(f"target recall must be in (0, 1], got {target_recall}")
    values = np.asarray(
        [s.score if isinstance(s, AnomalyScore) else s for s in scores], dtype=np.float64
    )
    y = np.asarray(labels).astype(bool)
    if values.shape != y.shape:
        raise DataError(f"scores {values.shape} and labels {y.shape} differ")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise CalibrationError("cannot calibrate a threshold without positive labels")
    for t in np.unique(values)[::-1]:
        flagged = values >= t
        recall = float((flagged & y).sum()) / n_pos
        if recall >= target_recall:
            precision = float((flagged & y).sum()) / int(flagged.sum())
            return ThresholdCalibration(float(t), recall, precision, target_recall)
    raise CalibrationError("unreachable: minimum threshold always yields recall 1")


def patient_errors(pset: ProbabilitySet, labels, shape: str):
    if shape == "vector":
        return error_vector(pset, labels)
    if shape == "matrix":
        return error_matrix(pset, labels)
    raise ConfigurationError(f"unknown error shape {shape!r}")


def score_pipeline(
    model,
    sequences,
    variant: Variant,
    edf_table: EDFTable | None = None,
) -> list[AnomalyScore]:
    """Forward -> errors -> optional EDF -> pooling, one score per patient."""
    if variant.edf and edf_table is None:
        raise ConfigurationError(f"variant {variant} requires an EDF table")
    psets = model.probability_sets(sequences)
    channel = model.config.target_channel
    out = []
    for seq, pset in zip(sequences, psets):
        labels = seq.channel_ids(channel)[: seq.length]
        errs = patient_errors(pset, labels, variant.shape)
        if variant.edf:
            errs = edf_transform(errs, edf_table)
        out.append(AnomalyScore(seq.patient_id, aggregate(errs, variant.pooling), variant))
    return out


def validation_edf_table(model, sequences, shape: str) -> EDFTable:
    """Build the per-class EDF table from a held-out validation split."""
    if not sequences:
        raise DataError("validation split is empty; cannot build EDF table")
    psets = model.probability_sets(sequences)
    channel = model.config.target_channel
    labels = [s.channel_ids(channel)[: s.length] for s in sequences]
    return build_edf(collect_error_samples(psets, labels, shape))

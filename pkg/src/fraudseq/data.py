"""Patient sequence data model: ingestion, padding, and dataset splitting.

The canonical on-disk format is a UTF-8 CSV with one visit per row (header
``CSV_COLUMNS``) plus an optional JSON sidecar for token dictionaries.  Every
token channel is dictionary-encoded with contiguous ids ``1..size``; id 0 is
reserved for padding in all channels and never denotes a real token.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DataError,
    EmptyInputError,
    SchemaError,
    VocabularyError,
)

PAD_ID = 0

TOKEN_CHANNELS = ("treatment", "treatment_type", "cost_type", "benefit_type")

CSV_COLUMNS = (
    "patient_id",
    "visit_index",
    "treatment",
    "treatment_type",
    "cost_type",
    "benefit_type",
    "treatment_number",
    "factor",
    "cost",
    "age",
    "sex",
    "insurance_type",
    "total_invoice",
    "fraud_label",
)

_CHANNEL_ATTR = {
    "treatment": "treatment_id",
    "treatment_type": "treatment_type_id",
    "cost_type": "cost_type_id",
    "benefit_type": "benefit_type_id",
}


class TokenDictionary:
    """Bijection between the token strings of one channel and ids 1..size."""

    def __init__(self, channel_name: str, tokens: Sequence[str]):
        if len(set(tokens)) != len(tokens):
            raise DataError(f"duplicate tokens in dictionary for channel {channel_name!r}")
        self.channel_name = channel_name
        self.tokens = list(tokens)
        self._ids = {tok: i + 1 for i, tok in enumerate(self.tokens)}

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise VocabularyError(
                f"unknown token {token!r} for channel {self.channel_name!r}"
            ) from None

    def token_of(self, token_id: int) -> str:
        if token_id == PAD_ID:
            return ""
        if not 1 <= token_id <= self.size:
            raise VocabularyError(
                f"id {token_id} out of range for channel {self.channel_name!r} "
                f"(size {self.size})"
            )
        return self.tokens[token_id - 1]

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TokenDictionary)
            and self.channel_name == other.channel_name
            and self.tokens == other.tokens
        )

    @classmethod
    def from_observed(cls, channel_name: str, observed: Iterable[str]) -> "TokenDictionary":
        """Build a dictionary from observed tokens, ids in sorted token order."""
        return cls(channel_name, sorted(set(observed)))


@dataclass(frozen=True)
class VisitRecord:
    treatment_id: int
    treatment_type_id: int
    cost_type_id: int
    benefit_type_id: int
    treatment_number: int = 0
    factor: float = 0.0
    cost: float = 0.0

    @property
    def is_pad(self) -> bool:
        return (
            self.treatment_id == PAD_ID
            and self.treatment_type_id == PAD_ID
            and self.cost_type_id == PAD_ID
            and self.benefit_type_id == PAD_ID
        )


PAD_VISIT = VisitRecord(PAD_ID, PAD_ID, PAD_ID, PAD_ID, 0, 0.0, 0.0)


@dataclass(frozen=True)
class GeneralFeatures:
    age: float
    sex: int
    insurance_type: int
    total_invoice: float


@dataclass(frozen=True)
class PatientSequence:
    patient_id: str
    visits: tuple[VisitRecord, ...]
    general: GeneralFeatures
    fraud_label: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "visits", tuple(self.visits))
        if len(self.visits) < 1:
            raise DataError(f"patient {self.patient_id!r} has no visits")

    @property
    def length(self) -> int:
        """Number of real (non-trailing-pad) visits."""
        n = len(self.visits)
        while n > 0 and self.visits[n - 1].is_pad:
            n -= 1
        return n

    def channel_ids(self, channel: str) -> np.ndarray:
        attr = _CHANNEL_ATTR[channel]
        return np.array([getattr(v, attr) for v in self.visits], dtype=np.int64)


@dataclass
class Dataset:
    sequences: list[PatientSequence]
    dictionaries: dict[str, TokenDictionary]
    split_tag: str | None = None

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def fraud_labels(self) -> list[int | None]:
        return [s.fraud_label for s in self.sequences]

    def validate(self) -> None:
        """Check every token id against its dictionary; raise on violation."""
        for seq in self.sequences:
            if seq.length < 1:
                raise DataError(f"patient {seq.patient_id!r} has no real visits")
            for v in seq.visits:
                if v.is_pad:
                    continue
                for channel, attr in _CHANNEL_ATTR.items():
                    tid = getattr(v, attr)
                    size = self.dictionaries[channel].size
                    if not 0 <= tid <= size:
                        raise VocabularyError(
                            f"patient {seq.patient_id!r}: id {tid} invalid for "
                            f"channel {channel!r} (size {size})"
                        )


def padded_length(t: int) -> int:
    """Smallest power of two >= t (t >= 1)."""
    if t < 1:
        raise DataError(f"sequence length must be >= 1, got {t}")
    return 1 << (t - 1).bit_length()


def pad_sequence(seq: PatientSequence) -> tuple[PatientSequence, np.ndarray]:
    """Pad a sequence with zero-id visits to the next power of two.

    Returns the padded sequence and a boolean mask marking real positions.
    Idempotent: re-padding an already padded sequence is a no-op.
    """
    t = seq.length
    target = padded_length(t)
    visits = seq.visits[:t] + (PAD_VISIT,) * (target - t)
    mask = np.zeros(target, dtype=bool)
    mask[:t] = True
    return replace(seq, visits=visits), mask


def _round_half_down(x: float) -> int:
    """Round to nearest integer with exact .5 ties (within 1e-9) going down."""
    lo = math.floor(x)
    if abs(x - (lo + 0.5)) < 1e-9:
        return int(lo)
    return int(round(x))


def split_dataset(
    ds: Dataset,
    fractions: tuple[float, float, float],
    seed: int,
) -> tuple[Dataset, Dataset, Dataset]:
    """Split into (train, validation, test), stratified by fraud label.

    Sizes per stratum: validation and test use nearest-integer rounding with
    ties going down; train receives the remainder.  Deterministic per seed.
    """
    if len(fractions) != 3:
        raise ConfigurationError("fractions must be (train, validation, test)")
    if any(f < 0 for f in fractions):
        raise ConfigurationError(f"fractions must be non-negative, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"fractions must sum to 1, got {fractions}")

    _, f_val, f_test = fractions
    strata: dict[object, list[int]] = {}
    for i, seq in enumerate(ds.sequences):
        strata.setdefault(seq.fraud_label, []).append(i)

    rng = np.random.default_rng(seed)
    assigned: dict[int, str] = {}
    for key in sorted(strata, key=lambda k: (k is None, k)):
        idx = np.array(strata[key], dtype=np.int64)
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        n_val = _round_half_down(n * f_val)
        n_test = _round_half_down(n * f_test)
        for i in idx[:n_val]:
            assigned[int(i)] = "validation"
        for i in idx[n_val : n_val + n_test]:
            assigned[int(i)] = "test"
        for i in idx[n_val + n_test :]:
            assigned[int(i)] = "train"

    out = {}
    for tag in ("train", "validation", "test"):
        seqs = [s for i, s in enumerate(ds.sequences) if assigned[i] == tag]
        out[tag] = Dataset(seqs, ds.dictionaries, split_tag=tag)
    return out["train"], out["validation"], out["test"]


def _fmt_float(x: float) -> str:
    return repr(float(x))


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write the canonical one-visit-per-row CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for seq in ds.sequences:
            g = seq.general
            label = "" if seq.fraud_label is None else str(int(seq.fraud_label))
            for j, v in enumerate(seq.visits):
                writer.writerow(
                    [
                        seq.patient_id,
                        j,
                        ds.dictionaries["treatment"].token_of(v.treatment_id),
                        ds.dictionaries["treatment_type"].token_of(v.treatment_type_id),
                        ds.dictionaries["cost_type"].token_of(v.cost_type_id),
                        ds.dictionaries["benefit_type"].token_of(v.benefit_type_id),
                        v.treatment_number,
                        _fmt_float(v.factor),
                        _fmt_float(v.cost),
                        _fmt_float(g.age),
                        g.sex,
                        g.insurance_type,
                        _fmt_float(g.total_invoice),
                        label,
                    ]
                )


def load_dataset(
    path: str | Path,
    schema: Sequence[str] = TOKEN_CHANNELS,
    dictionaries: dict[str, TokenDictionary] | None = None,
) -> Dataset:
    """Load the canonical CSV into a Dataset.

    Dictionaries are built from observed tokens (sorted order) unless frozen
    ones are passed, in which case unknown tokens raise ``VocabularyError``.
    Row order within each patient is preserved as given in the file.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInputError(f"empty dataset file: {path}") from None
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"missing column(s): {', '.join(missing)}")
        extra = [c for c in header if c not in CSV_COLUMNS]
        if extra or list(header) != list(CSV_COLUMNS):
            raise SchemaError(
                f"header does not match canonical column order; got {header}"
            )
        for ch in schema:
            if ch not in TOKEN_CHANNELS:
                raise ConfigurationError(f"unknown token channel {ch!r}")
        rows = list(reader)
    if not rows:
        raise EmptyInputError(f"dataset file has a header but no rows: {path}")

    col = {name: i for i, name in enumerate(CSV_COLUMNS)}
    by_patient: dict[str, list[list[str]]] = {}
    for row in rows:
        if len(row) != len(CSV_COLUMNS):
            raise SchemaError(f"row has {len(row)} fields, expected {len(CSV_COLUMNS)}")
        by_patient.setdefault(row[col["patient_id"]], []).append(row)

    if dictionaries is None:
        dictionaries = {}
        for ch in TOKEN_CHANNELS:
            observed = {row[col[ch]] for row in rows if row[col[ch]] != ""}
            dictionaries[ch] = TokenDictionary.from_observed(ch, observed)

    sequences = []
    for pid, prows in by_patient.items():
        visits = []
        for row in prows:
            try:
                ids = {}
                for ch in TOKEN_CHANNELS:
                    tok = row[col[ch]]
                    ids[ch] = PAD_ID if tok == "" else dictionaries[ch].id_of(tok)
                visits.append(
                    VisitRecord(
                        treatment_id=ids["treatment"],
                        treatment_type_id=ids["treatment_type"],
                        cost_type_id=ids["cost_type"],
                        benefit_type_id=ids["benefit_type"],
                        treatment_number=int(row[col["treatment_number"]]),
                        factor=float(row[col["factor"]]),
                        cost=float(row[col["cost"]]),
                    )
                )
            except ValueError as exc:
                raise DataError(f"malformed row for patient {pid!r}: {exc}") from None
        first = prows[0]
        try:
            general = GeneralFeatures(
                age=float(first[col["age"]]),
                sex=int(first[col["sex"]]),
                insurance_type=int(first[col["insurance_type"]]),
                total_invoice=float(first[col["total_invoice"]]),
            )
        except ValueError as exc:
            raise DataError(f"malformed general features for {pid!r}: {exc}") from None
        raw_label = first[col["fraud_label"]]
        label = None if raw_label == "" else int(raw_label)
        if label not in (None, 0, 1):
            raise DataError(f"fraud_label must be 0, 1 or empty, got {raw_label!r}")
        sequences.append(PatientSequence(pid, tuple(visits), general, label))

    ds = Dataset(sequences, dictionaries)
    ds.validate()
    return ds


def save_dictionaries(dictionaries: dict[str, TokenDictionary], path: str | Path) -> None:
    payload = {ch: d.tokens for ch, d in dictionaries.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_dictionaries(path: str | Path) -> dict[str, TokenDictionary]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return {ch: TokenDictionary(ch, tokens) for ch, tokens in payload.items()}

"""Deterministic synthetic claims generator with planted, detectable fraud.

Structure: a first-order Markov chain over treatment types with a Zipf-like
marginal (type 1 most frequent), treatments partitioned among types and
Zipf-weighted within each type, cost/benefit types drawn per treatment type,
and lognormal visit costs.  Sequence lengths are geometric, truncated.

Detectability is built in: for every context (previous treatment type) the
vocabulary splits at the configured rare quantile of the conditional token
distribution.  Normal visits sample only tokens at or above the cutoff;
corrupted visits (substitution and rare-insertion fraud) use only tokens
strictly below it, so corrupted tokens can be recounted exactly against the
generator.  Shuffle fraud instead breaks the transition structure.

Everything is reproducible: patient i draws from a generator keyed by
(seed, i), so output is identical regardless of batching or worker count.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    GeneralFeatures,
    PatientSequence,
    TokenDictionary,
    VisitRecord,
)
from .errors import ConfigurationError

__all__ = [
    "DictSizes",
    "GenConfig",
    "GeneratorModel",
    "gen_dataset",
    "describe_dataset",
    "DatasetSummary",
    "save_generator",
    "load_generator",
]

FRAUD_KINDS = ("substitution", "rare_insertion", "shuffle")


@dataclass(frozen=True)
class DictSizes:
    treatment: int = 200
    treatment_type: int = 17
    cost_type: int = 11
    benefit_type: int = 24


@dataclass
class GenConfig:
    num_patients: int = 1000
    dict_sizes: DictSizes = field(default_factory=DictSizes)
    mean_length: float = 12.0
    max_length: int = 128
    fraud_rate: float = 0.015
    fraud_kind: str = "substitution"
    fraud_intensity: float = 0.3
    zipf_exponent: float = 1.1
    rare_quantile: float = 0.10
    seed: int = 0

    def validate(self) -> None:
        if self.num_patients < 1:
            raise ConfigurationError("num_patients must be >= 1")
        for name in ("treatment", "treatment_type", "cost_type", "benefit_type"):
            if getattr(self.dict_sizes, name) < 2:
                raise ConfigurationError(f"dictionary size for {name} must be >= 2")
        if not 0.0 <= self.fraud_rate <= 1.0:
            raise ConfigurationError(f"fraud_rate must be in [0, 1], got {self.fraud_rate}")
        if self.fraud_kind not in FRAUD_KINDS:
            raise ConfigurationError(f"unknown fraud kind {self.fraud_kind!r}")
        if not 0.0 < self.fraud_intensity <= 1.0:
            raise ConfigurationError("fraud_intensity must be in (0, 1]")
        if not 0.0 < self.rare_quantile < 0.5:
            raise ConfigurationError("rare_quantile must be in (0, 0.5)")
        if self.mean_length < 1 or self.max_length < 1:
            raise ConfigurationError("length parameters must be >= 1")

    @classmethod
    def paper_shaped(cls, **overrides) -> "GenConfig":
        cfg = cls(dict_sizes=DictSizes(treatment=2204))
        for k, v in overrides.items():
            setattr(cfg, k, v)
        cfg.validate()
        return cfg


def _zipf_weights(n: int, exponent: float) -> np.ndarray:
    w = (np.arange(1, n + 1, dtype=np.float64)) ** (-exponent)
    return w / w.sum()


class GeneratorModel:
    """The ground-truth sampling process; also the oracle for recount tests."""

    def __init__(
        self,
        config: GenConfig,
        type_of: np.ndarray,
        within_weight: np.ndarray,
        transition: np.ndarray,
        cost_given_type: np.ndarray,
        benefit_given_type: np.ndarray,
        cost_mu: np.ndarray,
        cost_sigma: float,
    ):
        self.config = config
        self.type_of = type_of  # (n_treat + 1,), index 0 unused
        self.within_weight = within_weight  # (n_treat + 1,), P(u | type(u))
        self.transition = transition  # (n_types_eff + 1, n_types_eff); row 0 = start
        self.cost_given_type = cost_given_type  # (n_types_eff + 1, n_cost)
        self.benefit_given_type = benefit_given_type
        self.cost_mu = cost_mu
        self.cost_sigma = float(cost_sigma)
        self.n_treat = type_of.size - 1
        self.n_types = transition.shape[1]
        self._build_conditionals()

    def _build_conditionals(self) -> None:
        # conditional[prev, u-1] = P(next treatment = u | previous type = prev)
        n_ctx = self.n_types + 1
        cond = np.zeros((n_ctx, self.n_treat))
        for prev in range(n_ctx):
            cond[prev] = self.transition[prev, self.type_of[1:] - 1] * self.within_weight[1:]
        self.conditional = cond
        q = self.config.rare_quantile * 100.0
        self.rare_cutoff = np.percentile(cond, q, axis=1)
        self.common_dist = np.zeros_like(cond)
        self.rare_ids: list[np.ndarray] = []
        for prev in range(n_ctx):
            rare = cond[prev] < self.rare_cutoff[prev]
            if not rare.any():  # degenerate tie at the bottom: fall back to the minimum
                rare = cond[prev] == cond[prev].min()
            common = ~rare
            dist = np.where(common, cond[prev], 0.0)
            self.common_dist[prev] = dist / dist.sum()
            self.rare_ids.append(np.nonzero(rare)[0] + 1)

    @classmethod
    def build(cls, config: GenConfig) -> "GeneratorModel":
        config.validate()
        sizes = config.dict_sizes
        n_types = min(sizes.treatment_type, sizes.treatment)
        rng = np.random.default_rng([config.seed, 0])

        # Partition treatments among the types (every type gets >= 1).
        perm = rng.permutation(sizes.treatment) + 1
        type_of = np.zeros(sizes.treatment + 1, dtype=np.int64)
        for pos, treat in enumerate(perm):
            type_of[treat] = pos % n_types + 1

        within = np.zeros(sizes.treatment + 1)
        for ty in range(1, n_types + 1):
            members = np.nonzero(type_of == ty)[0]
            members = members[rng.permutation(members.size)]
            within[members] = _zipf_weights(members.size, config.zipf_exponent)

        base = _zipf_weights(n_types, config.zipf_exponent)
        transition = np.zeros((n_types + 1, n_types))
        transition[0] = base
        n_pref = min(3, n_types)
        pref_w = np.array([0.5, 0.3, 0.2][:n_pref])
        pref_w = pref_w / pref_w.sum()
        for ty in range(1, n_types + 1):
            pref = rng.choice(n_types, size=n_pref, replace=False, p=base)
            affinity = np.zeros(n_types)
            affinity[pref] = pref_w
            transition[ty] = 0.6 * base + 0.4 * affinity

        cost_given = np.zeros((n_types + 1, sizes.cost_type))
        benefit_given = np.zeros((n_types + 1, sizes.benefit_type))
        for ty in range(1, n_types + 1):
            cost_given[ty] = rng.dirichlet(np.full(sizes.cost_type, 0.5))
            benefit_given[ty] = rng.dirichlet(np.full(sizes.benefit_type, 0.5))

        cost_mu = np.zeros(sizes.treatment + 1)
        cost_mu[1:] = rng.uniform(np.log(20.0), np.log(500.0), size=sizes.treatment)
        return cls(config, type_of, within, transition, cost_given, benefit_given, cost_mu, 0.4)

    # -- sampling -----------------------------------------------------------

    def conditional_probability(self, prev_type: int, treatment_id: int) -> float:
        return float(self.conditional[prev_type, treatment_id - 1])

    def is_rare(self, prev_type: int, treatment_id: int) -> bool:
        return self.conditional_probability(prev_type, treatment_id) < self.rare_cutoff[prev_type]

    def _visit_for(self, rng, treatment: int) -> VisitRecord:
        ty = int(self.type_of[treatment])
        return VisitRecord(
            treatment_id=int(treatment),
            treatment_type_id=ty,
            cost_type_id=int(rng.choice(self.cost_given_type.shape[1], p=self.cost_given_type[ty]) + 1),
            benefit_type_id=int(
                rng.choice(self.benefit_given_type.shape[1], p=self.benefit_given_type[ty]) + 1
            ),
            treatment_number=int(rng.integers(1, 4)),
            factor=round(float(rng.uniform(0.5, 2.0)), 2),
            cost=round(float(rng.lognormal(self.cost_mu[treatment], self.cost_sigma)), 2),
        )

    def sample_patient(self, rng) -> tuple[list[VisitRecord], GeneralFeatures]:
        cfg = self.config
        t = int(min(cfg.max_length, rng.geometric(1.0 / cfg.mean_length)))
        visits = []
        prev = 0
        for _ in range(t):
            u = int(rng.choice(self.n_treat, p=self.common_dist[prev]) + 1)
            visits.append(self._visit_for(rng, u))
            prev = int(self.type_of[u])
        general = GeneralFeatures(
            age=float(rng.integers(0, 96)),
            sex=int(rng.integers(0, 2)),
            insurance_type=int(rng.choice(4, p=[0.4, 0.3, 0.2, 0.1])),
            total_invoice=round(sum(v.cost for v in visits), 2),
        )
        return visits, general

    # -- corruption ---------------------------------------------------------

    def _rare_choice(self, rng, prev_type: int, successor: int | None) -> int:
        """A strictly-rare treatment for this context, keeping an uncorrupted
        successor common under the new context whenever possible."""
        candidates = self.rare_ids[prev_type]
        if successor is not None:
            ok = [
                u
                for u in candidates
                if not self.is_rare(int(self.type_of[u]), successor)
            ]
            if ok:
                candidates = np.asarray(ok)
        return int(rng.choice(candidates))

    def corrupt_substitution(self, visits, rng) -> list[VisitRecord]:
        t = len(visits)
        k = max(1, int(round(self.config.fraud_intensity * t)))
        positions = set(int(p) for p in rng.choice(t, size=min(k, t), replace=False))
        out = list(visits)
        for pos in sorted(positions):
            prev = int(out[pos - 1].treatment_type_id) if pos > 0 else 0
            succ = None
            if pos + 1 < t and (pos + 1) not in positions:
                succ = int(out[pos + 1].treatment_id)
            out[pos] = self._visit_for(rng, self._rare_choice(rng, prev, succ))
        return out

    def corrupt_rare_insertion(self, visits, rng) -> list[VisitRecord]:
        t = len(visits)
        k = max(1, int(round(self.config.fraud_intensity * t)))
        slots = sorted(int(p) for p in rng.choice(t + 1, size=k, replace=True))
        out = list(visits)
        for offset, slot in enumerate(slots):
            pos = slot + offset
            prev = int(out[pos - 1].treatment_type_id) if pos > 0 else 0
            succ = int(out[pos].treatment_id) if pos < len(out) else None
            out.insert(pos, self._visit_for(rng, self._rare_choice(rng, prev, succ)))
        return out

    def corrupt_shuffle(self, visits, rng) -> list[VisitRecord]:
        t = len(visits)
        if t < 2:
            return list(visits)
        perm = rng.permutation(t)
        for _ in range(10):
            if not np.array_equal(perm, np.arange(t)):
                break
            perm = rng.permutation(t)
        else:
            perm = np.roll(np.arange(t), 1)
        return [visits[i] for i in perm]

    def corrupt(self, visits, rng) -> list[VisitRecord]:
        kind = self.config.fraud_kind
        if kind == "substitution":
            return self.corrupt_substitution(visits, rng)
        if kind == "rare_insertion":
            return self.corrupt_rare_insertion(visits, rng)
        return self.corrupt_shuffle(visits, rng)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "config": {
                "num_patients": cfg.num_patients,
                "dict_sizes": {
                    "treatment": cfg.dict_sizes.treatment,
                    "treatment_type": cfg.dict_sizes.treatment_type,
                    "cost_type": cfg.dict_sizes.cost_type,
                    "benefit_type": cfg.dict_sizes.benefit_type,
                },
                "mean_length": cfg.mean_length,
                "max_length": cfg.max_length,
                "fraud_rate": cfg.fraud_rate,
                "fraud_kind": cfg.fraud_kind,
                "fraud_intensity": cfg.fraud_intensity,
                "zipf_exponent": cfg.zipf_exponent,
                "rare_quantile": cfg.rare_quantile,
                "seed": cfg.seed,
            },
            "type_of": self.type_of.tolist(),
            "within_weight": self.within_weight.tolist(),
            "transition": self.transition.tolist(),
            "cost_given_type": self.cost_given_type.tolist(),
            "benefit_given_type": self.benefit_given_type.tolist(),
            "cost_mu": self.cost_mu.tolist(),
            "cost_sigma": self.cost_sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorModel":
        raw = dict(d["config"])
        raw["dict_sizes"] = DictSizes(**raw["dict_sizes"])
        config = GenConfig(**raw)
        return cls(
            config,
            np.asarray(d["type_of"], dtype=np.int64),
            np.asarray(d["within_weight"]),
            np.asarray(d["transition"]),
            np.asarray(d["cost_given_type"]),
            np.asarray(d["benefit_given_type"]),
            np.asarray(d["cost_mu"]),
            d["cost_sigma"],
        )


def save_generator(model: GeneratorModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def load_generator(path: str | Path) -> GeneratorModel:
    with open(path, encoding="utf-8") as fh:
        return GeneratorModel.from_dict(json.load(fh))


def _token_dictionaries(sizes: DictSizes, n_types_eff: int) -> dict[str, TokenDictionary]:
    return {
        "treatment": TokenDictionary("treatment", [f"t{i:04d}" for i in range(1, sizes.treatment + 1)]),
        "treatment_type": TokenDictionary(
            "treatment_type", [f"tt{i:02d}" for i in range(1, n_types_eff + 1)]
        ),
        "cost_type": TokenDictionary("cost_type", [f"ct{i:02d}" for i in range(1, sizes.cost_type + 1)]),
        "benefit_type": TokenDictionary(
            "benefit_type", [f"bt{i:02d}" for i in range(1, sizes.benefit_type + 1)]
        ),
    }


def gen_dataset(config: GenConfig) -> tuple[Dataset, GeneratorModel]:
    """Generate a labeled synthetic dataset plus its generator (the oracle).

    Exactly ``round(num_patients * fraud_rate)`` patients are labeled
    fraudulent and corrupted per ``fraud_kind``; if the product is below one,
    a warning is emitted and no patient is corrupted.
    """
    config.validate()
    model = GeneratorModel.build(config)
    n = config.num_patients
    expect = n * config.fraud_rate
    if 0 < expect < 1:
        warnings.warn(
            f"fraud_rate {config.fraud_rate} yields fewer than one fraud patient "
            f"out of {n}; generating none",
            stacklevel=2,
        )
        n_fraud = 0
    else:
        n_fraud = int(round(expect))
    fraud_idx = set()
    if n_fraud:
        pick = np.random.default_rng([config.seed, 1]).choice(n, size=n_fraud, replace=False)
        fraud_idx = set(int(i) for i in pick)

    sequences = []
    for i in range(n):
        rng = np.random.default_rng([config.seed, 2, i])
        visits, general = model.sample_patient(rng)
        label = 0
        if i in fraud_idx:
            visits = model.corrupt(visits, np.random.default_rng([config.seed, 3, i]))
            general = replace(general, total_invoice=round(sum(v.cost for v in visits), 2))
            label = 1
        sequences.append(PatientSequence(f"p{i:06d}", tuple(visits), general, label))

    ds = Dataset(sequences, _token_dictionaries(config.dict_sizes, model.n_types))
    ds.validate()
    return ds, model


@dataclass
class DatasetSummary:
    n_patients: int
    n_visits: int
    fraud_rate: float
    length_counts: dict[int, int]
    channel_frequencies: dict[str, np.ndarray]  # index 0 unused; 1..size counts
    type_imbalance: float  # top treatment-type frequency / median observed frequency


def describe_dataset(ds: Dataset) -> DatasetSummary:
    if not ds.sequences:
        raise ConfigurationError("cannot describe an empty dataset")
    lengths: dict[int, int] = {}
    freqs = {
        ch: np.zeros(d.size + 1, dtype=np.int64) for ch, d in ds.dictionaries.items()
    }
    n_visits = 0
    n_fraud = 0
    for seq in ds.sequences:
        t = seq.length
        lengths[t] = lengths.get(t, 0) + 1
        n_visits += t
        if seq.fraud_label:
            n_fraud += 1
        for ch in freqs:
            ids = seq.channel_ids(ch)[:t]
            np.add.at(freqs[ch], ids, 1)
    type_freq = np.sort(freqs["treatment_type"][1:])[::-1]
    observed = type_freq[type_freq > 0]
    imbalance = float(observed[0] / np.median(observed)) if observed.size else 0.0
    return DatasetSummary(
        n_patients=len(ds.sequences),
        n_visits=n_visits,
        fraud_rate=n_fraud / len(ds.sequences),
        length_counts=dict(sorted(lengths.items())),
        channel_frequencies=freqs,
        type_imbalance=imbalance,
    )

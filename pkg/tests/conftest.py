import numpy as np
import pytest

from fraudseq.data import (
    Dataset,
    GeneralFeatures,
    PatientSequence,
    TokenDictionary,
    VisitRecord,
)

GENERAL = GeneralFeatures(age=40.0, sex=0, insurance_type=0, total_invoice=100.0)


def make_visit(treatment=1, ttype=1, cost_type=1, benefit=1, cost=10.0):
    return VisitRecord(treatment, ttype, cost_type, benefit, 1, 1.0, cost)


def make_sequence(pid, treatments, ttypes=None, label=None, general=GENERAL):
    """Build a PatientSequence from 1-based treatment ids (types default to the
    treatment ids clipped into the type dictionary)."""
    ttypes = ttypes or list(treatments)
    visits = tuple(make_visit(t, ty) for t, ty in zip(treatments, ttypes))
    return PatientSequence(pid, visits, general, label)


def make_dataset(seqs, n_treat=None, n_types=None):
    n_treat = n_treat or max(max(v.treatment_id for v in s.visits) for s in seqs)
    n_types = n_types or max(max(v.treatment_type_id for v in s.visits) for s in seqs)
    dicts = {
        "treatment": TokenDictionary("treatment", [f"t{i:04d}" for i in range(1, n_treat + 1)]),
        "treatment_type": TokenDictionary(
            "treatment_type", [f"tt{i:02d}" for i in range(1, n_types + 1)]
        ),
        "cost_type": TokenDictionary("cost_type", ["ct01", "ct02"]),
        "benefit_type": TokenDictionary("benefit_type", ["bt01", "bt02"]),
    }
    return Dataset(list(seqs), dicts)


@pytest.fixture
def alternating_grammar():
    """Deterministic two-token grammar: sequences are A B A B ..., always
    starting with A.  Perfectly predictable at every position."""
    rng = np.random.default_rng(3)
    seqs = []
    for i in range(500):
        t = int(rng.integers(2, 9))
        treatments = [(j % 2) + 1 for j in range(t)]
        seqs.append(make_sequence(f"g{i:04d}", treatments, label=0))
    return make_dataset(seqs, n_treat=2, n_types=2)

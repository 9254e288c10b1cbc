import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraudseq.data import (
    CSV_COLUMNS,
    Dataset,
    TokenDictionary,
    load_dataset,
    load_dictionaries,
    pad_sequence,
    padded_length,
    save_dataset,
    save_dictionaries,
    split_dataset,
)
from fraudseq.errors import (
    ConfigurationError,
    EmptyInputError,
    SchemaError,
    VocabularyError,
)

from conftest import make_dataset, make_sequence


CSV_TWO_ROWS = """patient_id,visit_index,treatment,treatment_type,cost_type,benefit_type,treatment_number,factor,cost,age,sex,insurance_type,total_invoice,fraud_label
p1,0,A,x,c,b,1,1.0,10.0,40.0,0,0,20.0,
p1,1,B,x,c,b,1,1.0,10.0,40.0,0,0,20.0,
"""


class TestLoad:
    def test_two_row_single_patient(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text(CSV_TWO_ROWS)
        ds = load_dataset(f)
        assert len(ds.sequences) == 1
        assert ds.sequences[0].length == 2
        assert ds.dictionaries["treatment"].size == 2
        assert ds.dictionaries["treatment"].id_of("A") == 1

    def test_interleaved_patients_grouped_in_order(self, tmp_path):
        rows = [
            "p1,0,A,x,c,b,1,1.0,1.0,40.0,0,0,3.0,",
            "p2,0,B,x,c,b,1,1.0,1.0,41.0,1,0,2.0,",
            "p1,1,B,x,c,b,1,1.0,1.0,40.0,0,0,3.0,",
            "p1,2,A,x,c,b,1,1.0,1.0,40.0,0,0,3.0,",
        ]
        f = tmp_path / "d.csv"
        f.write_text(",".join(CSV_COLUMNS) + "\n" + "\n".join(rows) + "\n")
        ds = load_dataset(f)
        assert [s.patient_id for s in ds.sequences] == ["p1", "p2"]
        p1 = ds.sequences[0]
        ids = [ds.dictionaries["treatment"].token_of(v.treatment_id) for v in p1.visits]
        assert ids == ["A", "B", "A"]

    def test_missing_cost_column_names_it(self, tmp_path):
        header = ",".join(c for c in CSV_COLUMNS if c != "cost")
        f = tmp_path / "d.csv"
        f.write_text(header + "\n")
        with pytest.raises(SchemaError, match="cost"):
            load_dataset(f)

    def test_empty_file(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("")
        with pytest.raises(EmptyInputError):
            load_dataset(f)

    def test_header_only(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text(",".join(CSV_COLUMNS) + "\n")
        with pytest.raises(EmptyInputError):
            load_dataset(f)

    def test_frozen_dictionaries_reject_unknown_token(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text(CSV_TWO_ROWS)
        frozen = {
            "treatment": TokenDictionary("treatment", ["A"]),  # no B
            "treatment_type": TokenDictionary("treatment_type", ["x"]),
            "cost_type": TokenDictionary("cost_type", ["c"]),
            "benefit_type": TokenDictionary("benefit_type", ["b"]),
        }
        with pytest.raises(VocabularyError, match="'B'"):
            load_dataset(f, dictionaries=frozen)

    def test_round_trip_is_byte_identical(self, tmp_path):
        ds = make_dataset(
            [
                make_sequence("p1", [1, 2, 1], label=0),
                make_sequence("p2", [2], label=1),
            ]
        )
        f1 = tmp_path / "a.csv"
        f2 = tmp_path / "b.csv"
        save_dataset(ds, f1)
        save_dataset(load_dataset(f1), f2)
        assert f1.read_bytes() == f2.read_bytes()

    def test_dictionary_round_trip(self, tmp_path):
        ds = make_dataset([make_sequence("p1", [1, 2])])
        f = tmp_path / "dicts.json"
        save_dictionaries(ds.dictionaries, f)
        loaded = load_dictionaries(f)
        assert loaded == ds.dictionaries


class TestPad:
    def test_five_pads_to_eight(self):
        seq = make_sequence("p", [1, 2, 1, 2, 1])
        padded, mask = pad_sequence(seq)
        assert len(padded.visits) == 8
        assert mask.tolist() == [True] * 5 + [False] * 3
        assert all(v.is_pad for v in padded.visits[5:])

    def test_power_of_two_unchanged(self):
        seq = make_sequence("p", [1] * 8)
        padded, mask = pad_sequence(seq)
        assert len(padded.visits) == 8
        assert mask.all()

    def test_single_visit(self):
        padded, mask = pad_sequence(make_sequence("p", [1]))
        assert len(padded.visits) == 1
        assert mask.tolist() == [True]

    def test_idempotent(self):
        seq = make_sequence("p", [1, 2, 1])
        once, mask1 = pad_sequence(seq)
        twice, mask2 = pad_sequence(once)
        assert once == twice
        assert mask1.tolist() == mask2.tolist()

    @given(st.integers(min_value=1, max_value=1000))
    def test_padded_length_bounds(self, t):
        length = padded_length(t)
        assert length >= t
        assert length & (length - 1) == 0
        assert length < 2 * t or t == length


class TestSplit:
    def _dataset(self, n, n_fraud=0, seed=0):
        rng = np.random.default_rng(seed)
        labels = [1] * n_fraud + [0] * (n - n_fraud) if n_fraud else [None] * n
        seqs = [
            make_sequence(f"p{i}", [int(rng.integers(1, 5))], label=labels[i])
            for i in range(n)
        ]
        return make_dataset(seqs, n_treat=4, n_types=4)

    def test_documented_sizes(self):
        # independent enumeration: val = nearest(47.5, ties down) = 47,
        # test = nearest(50.0) = 50, train gets the remaining 903
        ds = self._dataset(1000)
        train, val, test = split_dataset(ds, (0.9025, 0.0475, 0.05), seed=7)
        assert (len(train.sequences), len(val.sequences), len(test.sequences)) == (903, 47, 50)

    def test_degenerate_all_train(self):
        ds = self._dataset(25)
        train, val, test = split_dataset(ds, (1.0, 0.0, 0.0), seed=1)
        assert len(train.sequences) == 25
        assert not val.sequences and not test.sequences

    def test_stratified_fraud_within_one_patient(self):
        ds = self._dataset(100, n_fraud=2)
        for split in split_dataset(ds, (0.5, 0.25, 0.25), seed=3):
            n = len(split.sequences)
            fraud = sum(1 for s in split.sequences if s.fraud_label)
            assert abs(fraud - 0.02 * n) <= 1.0

    def test_deterministic_and_partitioning(self):
        ds = self._dataset(211, n_fraud=11)
        a = split_dataset(ds, (0.6, 0.2, 0.2), seed=42)
        b = split_dataset(ds, (0.6, 0.2, 0.2), seed=42)
        ids_a = [[s.patient_id for s in part.sequences] for part in a]
        ids_b = [[s.patient_id for s in part.sequences] for part in b]
        assert ids_a == ids_b
        joined = sorted(pid for part in ids_a for pid in part)
        assert joined == sorted(s.patient_id for s in ds.sequences)
        flat = [pid for part in ids_a for pid in part]
        assert len(flat) == len(set(flat))

    def test_bad_fractions(self):
        ds = self._dataset(10)
        with pytest.raises(ConfigurationError):
            split_dataset(ds, (0.5, 0.6, -0.1), seed=0)
        with pytest.raises(ConfigurationError):
            split_dataset(ds, (0.5, 0.4, 0.2), seed=0)


class TestDictionary:
    def test_bijection(self):
        d = TokenDictionary("treatment", ["a", "b", "c"])
        assert [d.id_of(t) for t in d.tokens] == [1, 2, 3]
        assert [d.token_of(i) for i in (1, 2, 3)] == ["a", "b", "c"]

    def test_pad_is_reserved(self):
        d = TokenDictionary("treatment", ["a"])
        assert d.token_of(0) == ""
        with pytest.raises(VocabularyError):
            d.token_of(2)

    def test_unknown_token(self):
        d = TokenDictionary("treatment", ["a"])
        with pytest.raises(VocabularyError):
            d.id_of("zzz")

"""Feature model and file-format tests: normalization, splits, round trips."""

import math

import numpy as np
import pytest

from incshallow.errors import (
    FormatError,
    InsufficientSamplesError,
    ZeroVectorError,
)
from incshallow.features import (
    build_dataset,
    datasets_equal,
    l2_normalize,
    load_dataset,
    load_eval_set,
    pooled_validation,
    read_records,
    split_indices,
    write_dataset,
    write_eval_set,
    write_records,
)


def random_records(rng, classes, per_class, d):
    ids = np.repeat(np.arange(classes), per_class).astype(np.int64)
    values = rng.normal(size=(classes * per_class, d)).astype(np.float32)
    return ids, values


class TestL2Normalize:

    def test_pythagorean_pair(self):
        np.testing.assert_allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8])

    def test_already_unit(self):
        np.testing.assert_allclose(l2_normalize(np.array([0.0, 0.0, 1.0])), [0, 0, 1])

    def test_unit_norm_recomputed_independently(self):
        """Output norm re-derived by plain python arithmetic, not numpy."""
        rng = np.random.default_rng(11)
        v = rng.normal(size=24)
        v *= 7.3 / np.linalg.norm(v)
        out = l2_normalize(v)
        norm = math.sqrt(sum(float(x) * float(x) for x in out))
        assert abs(norm - 1.0) <= 1e-6

    def test_direction_preserved(self):
        v = np.array([2.0, -1.0, 0.5])
        out = l2_normalize(v)
        np.testing.assert_allclose(out * np.linalg.norm(v), v)

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVectorError):
            l2_normalize(np.zeros(5))
        with pytest.raises(ZeroVectorError):
            l2_normalize(np.full(4, 1e-13))


class TestSplit:

    def test_split_arithmetic(self):
        """2 classes x 25 vectors, 20 held out -> train sizes (5, 5)."""
        rng = np.random.default_rng(0)
        ids, values = random_records(rng, 2, 25, 8)
        ds = build_dataset(ids, values, validation_per_class=20, seed=3)
        assert [cf.train_index.size for cf in ds.classes] == [5, 5]
        assert [cf.val_index.size for cf in ds.classes] == [20, 20]

    def test_split_deterministic(self):
        rng = np.random.default_rng(1)
        ids, values = random_records(rng, 3, 30, 4)
        a = build_dataset(ids, values, validation_per_class=20, seed=7)
        b = build_dataset(ids, values, validation_per_class=20, seed=7)
        assert datasets_equal(a, b)

    def test_split_depends_on_seed(self):
        rng = np.random.default_rng(1)
        ids, values = random_records(rng, 1, 200, 4)
        a = build_dataset(ids, values, validation_per_class=20, seed=0)
        b = build_dataset(ids, values, validation_per_class=20, seed=1)
        assert not np.array_equal(a.classes[0].val_index, b.classes[0].val_index)

    def test_split_disjoint_and_complete(self):
        train, val = split_indices(30, 20, seed=5, class_id=2)
        merged = np.sort(np.concatenate([train, val]))
        np.testing.assert_array_equal(merged, np.arange(30))

    def test_insufficient_samples(self):
        rng = np.random.default_rng(2)
        ids, values = random_records(rng, 1, 20, 4)
        with pytest.raises(InsufficientSamplesError):
            build_dataset(ids, values, validation_per_class=20, seed=0)

    def test_all_loaded_vectors_unit_norm(self):
        rng = np.random.default_rng(3)
        ids, values = random_records(rng, 4, 25, 16)
        ds = build_dataset(ids, values, validation_per_class=20, seed=0)
        for cf in ds.classes:
            np.testing.assert_allclose(np.linalg.norm(cf.features, axis=1), 1.0,
                                       atol=1e-6)


class TestBinaryFormat:

    def test_round_trip_bit_exact(self, tmp_path):
        """load(write(D)) == D bit-exactly, fuzzed over dims and class counts."""
        rng = np.random.default_rng(42)
        for _ in range(25):
            d = int(rng.integers(2, 65))
            classes = int(rng.integers(1, 11))
            per_class = int(rng.integers(4, 12))
            ids, values = random_records(rng, classes, per_class, d)
            ds = build_dataset(ids, values, validation_per_class=3, seed=9)
            path = tmp_path / "ds.dsf"
            write_dataset(ds, path)
            back = load_dataset(path, validation_per_class=3, seed=9)
            assert datasets_equal(ds, back)

    def test_header_plus_one_record_byte_count(self, tmp_path):
        """With no hold-out, 1 class x 1 vector writes header + 1 record:
        (4+2+4+8) + (4 + 4*d) bytes."""
        d = 6
        ids = np.array([0])
        values = np.ones((1, d), dtype=np.float32)
        ds = build_dataset(ids, values, validation_per_class=0, seed=0)
        path = tmp_path / "one.dsf"
        write_dataset(ds, path)
        assert path.stat().st_size == 18 + 4 + 4 * d

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.dsf"
        p.write_bytes(b"NOPE" + bytes(14))
        with pytest.raises(FormatError, match="magic"):
            read_records(p)

    def test_bad_version(self, tmp_path):
        import struct
        p = tmp_path / "bad.dsf"
        p.write_bytes(struct.pack("<4sHIQ", b"DSF1", 9, 4, 0))
        with pytest.raises(FormatError, match="version"):
            read_records(p)

    def test_truncated_records(self, tmp_path):
        import struct
        p = tmp_path / "trunc.dsf"
        p.write_bytes(struct.pack("<4sHIQ", b"DSF1", 1, 4, 2) + bytes(10))
        with pytest.raises(FormatError, match="size"):
            read_records(p)

    def test_non_finite_names_record(self, tmp_path):
        values = np.ones((3, 4), dtype=np.float32)
        values[2, 1] = np.nan
        p = tmp_path / "nan.dsf"
        write_records(p, np.zeros(3, dtype=np.int32), values)
        with pytest.raises(FormatError, match="record 2"):
            read_records(p)

    def test_refuses_empty_write(self, tmp_path):
        with pytest.raises(FormatError):
            write_records(tmp_path / "e.dsf", np.empty(0, dtype=np.int32),
                          np.empty((0, 4), dtype=np.float32))


class TestCsvFormat:

    def test_round_trip_within_tolerance(self, tmp_path):
        rng = np.random.default_rng(5)
        ids, values = random_records(rng, 3, 8, 10)
        ds = build_dataset(ids, values, validation_per_class=2, seed=1)
        path = tmp_path / "ds.csv"
        write_dataset(ds, path, fmt="csv")
        back = load_dataset(path, fmt="csv", validation_per_class=2, seed=1)
        for ca, cb in zip(ds.classes, back.classes):
            np.testing.assert_allclose(ca.raw, cb.raw, atol=1e-6)

    def test_csv_round_trip_is_actually_exact(self, tmp_path):
        """%.9g preserves float32 exactly, so csv matches binary bit for bit."""
        rng = np.random.default_rng(6)
        ids, values = random_records(rng, 2, 5, 7)
        ds = build_dataset(ids, values, validation_per_class=1, seed=1)
        path = tmp_path / "ds.csv"
        write_dataset(ds, path, fmt="csv")
        back = load_dataset(path, fmt="csv", validation_per_class=1, seed=1)
        assert datasets_equal(ds, back)

    def test_short_row_names_record(self, tmp_path):
        d = 512
        header = "class_id," + ",".join(f"f{i}" for i in range(d))
        row = "0," + ",".join("1.0" for _ in range(d - 1))  # 511 values
        p = tmp_path / "short.csv"
        p.write_text(header + "\n" + row + "\n")
        with pytest.raises(FormatError, match="record 0"):
            read_records(p, fmt="csv")

    def test_bad_header(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text("label,f0\n0,1.0\n")
        with pytest.raises(FormatError, match="header"):
            read_records(p, fmt="csv")

    def test_non_numeric_value(self, tmp_path):
        p = tmp_path / "v.csv"
        p.write_text("class_id,f0,f1\n0,1.0,oops\n")
        with pytest.raises(FormatError, match="record 0"):
            read_records(p, fmt="csv")


class TestEvalSet:

    def test_load_normalizes(self, tmp_path):
        rng = np.random.default_rng(8)
        values = (rng.normal(size=(10, 5)) * 3).astype(np.float32)
        p = tmp_path / "eval.dsf"
        write_records(p, np.arange(10, dtype=np.int32) % 3, values)
        es = load_eval_set(p)
        np.testing.assert_allclose(np.linalg.norm(es.features, axis=1), 1.0, atol=1e-6)

    def test_write_read_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        values = rng.normal(size=(6, 4)).astype(np.float32)
        p = tmp_path / "eval.dsf"
        write_records(p, np.zeros(6, dtype=np.int32), values)
        es = load_eval_set(p)
        p2 = tmp_path / "eval2.dsf"
        write_eval_set(es, p2)
        assert p.read_bytes() == p2.read_bytes()

    def test_restrict(self):
        from incshallow.features import EvalSet
        es = EvalSet(np.eye(4), np.array([0, 1, 0, 2]))
        sub = es.restrict([0, 2])
        assert len(sub) == 3
        assert set(sub.labels.tolist()) == {0, 2}

    def test_pooled_validation(self):
        rng = np.random.default_rng(10)
        ids, values = random_records(rng, 3, 10, 4)
        ds = build_dataset(ids, values, validation_per_class=4, seed=0)
        pool = pooled_validation(ds, [0, 2])
        assert len(pool) == 8
        assert set(pool.labels.tolist()) == {0, 2}

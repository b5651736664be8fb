import numpy as np
import pytest

from netsynth.data import DatasetSpec, IngestError, ingest, make_blobs


def _write_csv(path, X, y, header=None):
    header = header or [f"f{i}" for i in range(X.shape[1])] + ["label"]
    lines = [",".join(header)] + [",".join(map(repr, map(float, r))) + f",{int(c)}" for r, c in zip(X, y)]
    path.write_text("\n".join(lines) + "\n")


class TestBlobs:
    def test_shapes_and_balance(self):
        X, y = make_blobs(48, 11, 1100, seed=0)
        assert X.shape == (1100, 48)
        assert np.bincount(y).tolist() == [100] * 11

    def test_deterministic(self):
        a, b = make_blobs(8, 3, 50, seed=4), make_blobs(8, 3, 50, seed=4)
        np.testing.assert_array_equal(a[0], b[0])
        assert not np.array_equal(a[0], make_blobs(8, 3, 50, seed=5)[0])


class TestFractional:
    def test_split_counts(self):
        splits, _ = ingest(DatasetSpec("builtin:blobs-6-3", rows=1000))
        assert (len(splits.train), len(splits.validation)) == (700, 150)
        assert len(splits.read_test()) == 150

    def test_exact_sizes(self):
        splits, _ = ingest(DatasetSpec("builtin:blobs-48-11", split_sizes=(600, 300, 200)))
        assert (len(splits.train), len(splits.validation), len(splits.read_test())) == (600, 300, 200)
        assert splits.train.width == 48 and splits.n_classes == 11

    def test_sizes_must_add_up(self, tmp_path):
        X, y = make_blobs(3, 2, 20)
        _write_csv(tmp_path / "d.csv", X, y)
        with pytest.raises(IngestError, match="add up"):
            ingest(DatasetSpec("d.csv", split_sizes=(10, 5, 4)), tmp_path)

    def test_zscore_from_train(self):
        splits, _ = ingest(DatasetSpec("builtin:blobs-5-2", rows=400))
        np.testing.assert_allclose(splits.train.features.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(splits.train.features.std(axis=0), 1)
        assert np.abs(splits.validation.features.mean(axis=0)).max() > 1e-6

    def test_no_normalization(self):
        raw, _ = ingest(DatasetSpec("builtin:blobs-5-2", rows=100, normalization="none"))
        X, _ = make_blobs(5, 2, 100)
        np.testing.assert_array_equal(raw.train.features, X[:70])

    def test_fingerprint(self):
        a = ingest(DatasetSpec("builtin:blobs-5-2", rows=100))[1]
        assert a == ingest(DatasetSpec("builtin:blobs-5-2", rows=100))[1]
        assert a != ingest(DatasetSpec("builtin:blobs-5-2", rows=100, seed=1))[1]

    def test_csv_source(self, tmp_path):
        X, y = make_blobs(4, 3, 60, seed=1)
        _write_csv(tmp_path / "d.csv", X, y)
        splits, _ = ingest(DatasetSpec("d.csv", split=(0.5, 0.25, 0.25), normalization="none"), tmp_path)
        got = np.vstack([splits.train.features, splits.validation.features, splits.read_test().features])
        # every row lands in exactly one split
        assert sorted(map(tuple, got)) == sorted(map(tuple, X))

    def test_test_reads_counted(self):
        splits, _ = ingest(DatasetSpec("builtin:blobs-5-2", rows=100))
        assert splits.test_reads == 0
        splits.read_test()
        splits.read_test(reference=True)
        assert (splits.test_reads, splits.reference_reads) == (1, 1)


class TestErrors:
    def test_missing_label(self, tmp_path):
        X, y = make_blobs(3, 2, 20)
        _write_csv(tmp_path / "d.csv", X, y, header=["a", "b", "c", "target"])
        with pytest.raises(ValueError, match="label"):
            ingest(DatasetSpec("d.csv"), tmp_path)

    def test_non_numeric(self, tmp_path):
        (tmp_path / "d.csv").write_text("f0,label\n1.0,0\nabc,1\n")
        with pytest.raises(ValueError, match="non-numeric"):
            ingest(DatasetSpec("d.csv"), tmp_path)

    def test_unseen_class(self, tmp_path):
        X, y = make_blobs(3, 2, 40)
        _write_csv(tmp_path / "tr.csv", X[:30], np.zeros(30, dtype=int))
        _write_csv(tmp_path / "te.csv", X[30:], np.ones(10, dtype=int))
        with pytest.raises(IngestError, match="not in train"):
            ingest(DatasetSpec(files={"train": "tr.csv", "test": "te.csv"}), tmp_path)

    def test_width_mismatch(self, tmp_path):
        X, y = make_blobs(3, 2, 40)
        _write_csv(tmp_path / "tr.csv", X[:30], y[:30])
        _write_csv(tmp_path / "te.csv", X[30:, :2], y[30:])
        with pytest.raises(IngestError, match="width"):
            ingest(DatasetSpec(files={"train": "tr.csv", "test": "te.csv"}), tmp_path)

    def test_unknown_builtin(self):
        with pytest.raises(IngestError):
            ingest(DatasetSpec("builtin:iris"))

    @pytest.mark.parametrize("kw", [{"split": (0.5, 0.2, 0.2)}, {"normalization": "minmax"}])
    def test_bad_spec(self, kw):
        with pytest.raises(IngestError):
            DatasetSpec("builtin:blobs-4-2", **kw)


class TestGivenFiles:
    def test_validation_carved_from_train(self, tmp_path):
        X, y = make_blobs(4, 2, 150, seed=2)
        _write_csv(tmp_path / "tr.csv", X[:100], y[:100])
        _write_csv(tmp_path / "te.csv", X[100:], y[100:])
        spec = DatasetSpec(files={"train": "tr.csv", "test": "te.csv"}, val_fraction=0.2)
        splits, _ = ingest(spec, tmp_path)
        assert (len(splits.train), len(splits.validation), len(splits.read_test())) == (80, 20, 50)

    def test_explicit_validation(self, tmp_path):
        X, y = make_blobs(4, 2, 90, seed=2)
        for name, sl in (("tr", slice(0, 50)), ("va", slice(50, 70)), ("te", slice(70, 90))):
            _write_csv(tmp_path / f"{name}.csv", X[sl], y[sl])
        spec = DatasetSpec(files={"train": "tr.csv", "validation": "va.csv", "test": "te.csv"},
                           normalization="none")
        splits, _ = ingest(spec, tmp_path)
        np.testing.assert_allclose(splits.validation.features, X[50:70])

    def test_needs_test_file(self, tmp_path):
        with pytest.raises(IngestError):
            ingest(DatasetSpec(files={"train": "tr.csv"}), tmp_path)

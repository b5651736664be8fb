"""Dataset ingestion: CSV files or builtin synthetic generators, split, z-scored."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from netsynth.candidate import SplitData
from netsynth.dimreduce import Standardizer, read_csv_split
from netsynth.nn import Dataset

_BLOBS = re.compile(r"^blobs-(\d+)-(\d+)$")


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    """Where the data comes from and how it is split.

    ``source`` is a CSV path, ``builtin:<id>``, or ``None`` when ``files`` names
    the (train, validation, test) CSVs directly. A missing validation file is
    carved out of the training file using ``val_fraction``.
    """

    source: str | None = None
    files: dict = field(default_factory=dict)
    label_column: str = "label"
    split: tuple = (0.7, 0.15, 0.15)
    split_sizes: tuple | None = None
    val_fraction: float = 0.2
    rows: int = 1000
    normalization: str = "zscore"
    seed: int = 0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.normalization not in ("zscore", "none"):
            raise IngestError(f"unknown normalization {self.normalization!r}")
        if self.split_sizes is None and abs(sum(self.split) - 1.0) > 1e-9:
            raise IngestError("split fractions must sum to 1")
        if any(f < 0 for f in self.split):
            raise IngestError("split fractions must be non-negative")

    @property
    def split_mode(self) -> str:
        return "given_files" if self.files else "fractional"


def make_blobs(n_features: int, n_classes: int, n_rows: int, seed: int = 0,
               informative: int | None = None, centers_per_class: int = 2,
               spread: float = 1.0, separation: float = 2.5):
    """Gaussian clusters in an informative subspace, padded with pure-noise features.

    Each class owns ``centers_per_class`` centers so classes are not linearly
    separable in general. Rows are assigned to classes round-robin, then shuffled.
    """
    rng = np.random.default_rng(seed)
    m = informative or max(2, min(n_features, n_features // 2))
    centers = rng.normal(0.0, separation, size=(n_classes, centers_per_class, m))
    labels = np.arange(n_rows) % n_classes
    which = rng.integers(0, centers_per_class, n_rows)
    X = np.empty((n_rows, n_features))
    X[:, :m] = centers[labels, which] + rng.normal(0.0, spread, size=(n_rows, m))
    X[:, m:] = rng.normal(0.0, 1.0, size=(n_rows, n_features - m))
    mix = np.linalg.qr(rng.normal(size=(n_features, n_features)))[0]
    X = X @ mix  # rotate so informative directions are spread over all columns
    order = rng.permutation(n_rows)
    return X[order], labels[order]


def _split_counts(n, spec: DatasetSpec):
    if spec.split_sizes is not None:
        sizes = tuple(int(s) for s in spec.split_sizes)
        if sum(sizes) != n:
            raise IngestError(f"split sizes {sizes} do not add up to {n} rows")
        return sizes
    n_train = int(round(spec.split[0] * n))
    n_val = int(round(spec.split[1] * n))
    return n_train, n_val, n - n_train - n_val


def _fingerprint(parts) -> str:
    h = hashlib.sha256()
    for X, y in parts:
        h.update(np.ascontiguousarray(X, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(y, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


def _load_source(spec: DatasetSpec, base: Path):
    src = spec.source
    if src.startswith("builtin:"):
        name = src.split(":", 1)[1]
        m = _BLOBS.match(name)
        if not m:
            raise IngestError(f"unknown builtin dataset {name!r}")
        d, C = int(m.group(1)), int(m.group(2))
        n = sum(spec.split_sizes) if spec.split_sizes is not None else spec.rows
        X, y = make_blobs(d, C, n, seed=spec.seed, **spec.options)
        return X, y, C
    ds = read_csv_split(base / src, spec.label_column)
    return ds.features, ds.labels, ds.n_classes


def ingest(spec: DatasetSpec, base_dir=".") -> tuple:
    """Return ``(SplitData, fingerprint)``; normalization statistics come from train only."""
    base = Path(base_dir)
    rng = np.random.default_rng(spec.seed + 1)
    if spec.split_mode == "given_files":
        f = spec.files
        if "train" not in f or "test" not in f:
            raise IngestError("given_files mode needs at least train and test files")
        tr = read_csv_split(base / f["train"], spec.label_column)
        te = read_csv_split(base / f["test"], spec.label_column)
        if "validation" in f:
            va = read_csv_split(base / f["validation"], spec.label_column)
            raw = [(tr.features, tr.labels), (va.features, va.labels), (te.features, te.labels)]
        else:
            order = rng.permutation(len(tr))
            n_val = int(round(spec.val_fraction * len(tr)))
            vi, ti = order[:n_val], order[n_val:]
            raw = [(tr.features[ti], tr.labels[ti]), (tr.features[vi], tr.labels[vi]),
                   (te.features, te.labels)]
    else:
        if not spec.source:
            raise IngestError("dataset needs a source or files")
        X, y, _ = _load_source(spec, base)
        n_tr, n_va, n_te = _split_counts(len(y), spec)
        if spec.source.startswith("builtin:"):
            idx = np.arange(len(y))  # generator output is already shuffled
        else:
            idx = rng.permutation(len(y))
        parts = (idx[:n_tr], idx[n_tr:n_tr + n_va], idx[n_tr + n_va:])
        raw = [(X[p], y[p]) for p in parts]
    widths = {X.shape[1] for X, _ in raw}
    if len(widths) != 1:
        raise IngestError(f"splits disagree on feature width: {sorted(widths)}")
    train_classes = set(np.unique(raw[0][1]).tolist())
    for name, (_, y) in zip(("validation", "test"), raw[1:]):
        extra = set(np.unique(y).tolist()) - train_classes
        if extra:
            raise IngestError(f"classes {sorted(extra)} appear in {name} but not in train")
    C = int(max(int(y.max()) for _, y in raw if len(y)) + 1)
    sets = [Dataset(X, y, C, tag) for (X, y), tag in zip(raw, ("train", "validation", "test"))]
    if spec.normalization == "zscore":
        z = Standardizer.fit(sets[0])
        sets = [z.transform(s) for s in sets]
    return SplitData(*sets), _fingerprint(raw)

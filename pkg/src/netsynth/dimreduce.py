"""Feature reduction (random projections, PCA, precomputed files) and weight quantization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from netsynth.nn import Dataset, SparseNetwork

RP_METHODS = ("rp_gauss_scaled", "rp_gauss_unit", "rp_sign", "rp_sparse")
METHODS = RP_METHODS + ("pca", "precomputed", "none")

# grid id -> method; ids 6..11 stand in for DR methods only available as files
DR_METHOD_IDS = {1: "rp_gauss_scaled", 2: "rp_gauss_unit", 3: "rp_sign", 4: "rp_sparse", 5: "pca",
                 **{i: "precomputed" for i in range(6, 12)}}


@dataclass(frozen=True)
class DrConfig:
    method: str
    ratio: float = 1.0
    seed: int = 0
    alias: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown DR method {self.method!r}")
        if not self.ratio >= 1:
            raise ValueError("DR ratio must be >= 1")

    def target_dim(self, d: int) -> int:
        # round-half-even like the builtin, floored at 1
        return min(d, max(1, round(d / self.ratio)))


@dataclass(frozen=True)
class QuantSpec:
    bits: int = 32

    def __post_init__(self):
        if self.bits not in (4, 8, 16, 32):
            raise ValueError(f"unsupported bit width {self.bits}")


def rp_matrix(d: int, k: int, variant: str, seed: int) -> np.ndarray:
    """d x k random projection matrix for one of the four RP variants."""
    if k < 1 or k > d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    rng = np.random.default_rng(seed)
    if variant == "rp_gauss_scaled":
        return rng.normal(0.0, math.sqrt(1.0 / k), size=(d, k))
    if variant == "rp_gauss_unit":
        return rng.normal(0.0, 1.0, size=(d, k))
    if variant == "rp_sign":
        return np.where(rng.random((d, k)) < 0.5, 1.0, -1.0)
    if variant == "rp_sparse":
        u = rng.random((d, k))
        s = math.sqrt(3.0 / k)
        return np.where(u < 1 / 6, s, np.where(u < 5 / 6, 0.0, -s))
    raise ValueError(f"unknown projection variant {variant!r}")


def project(dataset: Dataset, matrix) -> Dataset:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.size == 0:
        raise ValueError("projection matrix must be a non-empty 2-D array")
    if matrix.shape[0] != dataset.width:
        raise ValueError(f"matrix has {matrix.shape[0]} rows, dataset width is {dataset.width}")
    return dataset.with_features(dataset.features @ matrix)


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # d x k, orthonormal columns
    eigenvalues: np.ndarray


def _power_eigs(cov, k, tol=1e-10, max_iter=20000, seed=0):
    """Top-k eigenpairs of a symmetric PSD matrix by deflated power iteration."""
    d = cov.shape[0]
    rng = np.random.default_rng(seed)
    vecs, vals = [], []
    A = cov.copy()
    scale = max(float(np.abs(cov).max()), 1e-300)
    for _ in range(k):
        v = rng.standard_normal(d)
        basis = np.array(vecs).T if vecs else np.zeros((d, 0))
        v -= basis @ (basis.T @ v)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = A @ v
            w -= basis @ (basis.T @ w)
            nrm = np.linalg.norm(w)
            if nrm <= 1e-14 * scale:
                break  # remaining spectrum is zero; any orthogonal v is an eigenvector
            w /= nrm
            if w @ v < 0:
                w = -w
            done = np.linalg.norm(w - v) < tol
            v = w
            if done:
                break
        lam = max(float(v @ cov @ v), 0.0)
        vecs.append(v)
        vals.append(lam)
        A = A - lam * np.outer(v, v)
    order = np.argsort(-np.array(vals), kind="stable")
    return np.array(vals)[order], np.array(vecs).T[:, order]


def pca_fit(train_set: Dataset, k: int) -> PcaModel:
    d = train_set.width
    if k < 1 or k > d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    X = train_set.features
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(len(X) - 1, 1)
    vals, vecs = _power_eigs(cov, k)
    return PcaModel(mean, vecs, vals)


def pca_transform(model: PcaModel, dataset: Dataset) -> Dataset:
    if dataset.width != model.mean.shape[0]:
        raise ValueError("dataset width does not match the fitted PCA model")
    return dataset.with_features((dataset.features - model.mean) @ model.components)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, train_set: Dataset) -> "Standardizer":
        sd = train_set.features.std(axis=0)
        return cls(train_set.features.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def transform(self, dataset: Dataset) -> Dataset:
        return dataset.with_features((dataset.features - self.mean) / self.scale)


def reduce_splits(config: DrConfig, train_set, val_set, test_set=None, precomputed=None):
    """Apply one DR transform, fitted on the training split only, to every split.

    ``precomputed`` maps grid alias -> (train, val, test) paths for the file-backed methods.
    """
    splits = [train_set, val_set] + ([test_set] if test_set is not None else [])
    method = config.method
    if method == "none":
        return tuple(splits)
    if method == "precomputed":
        files = (precomputed or {}).get(config.alias) or (precomputed or {}).get(str(config.alias))
        if not files:
            raise FileNotFoundError(f"no precomputed dataset supplied for DR method {config.alias}")
        loaded = load_precomputed(*files, n_classes=train_set.n_classes)
        for orig, new in zip(splits, loaded):
            if len(orig) != len(new):
                raise ValueError("precomputed split row count differs from the original split")
        return loaded[:len(splits)]
    k = config.target_dim(train_set.width)
    if method == "pca":
        model = pca_fit(train_set, k)
        return tuple(pca_transform(model, s) for s in splits)
    M = rp_matrix(train_set.width, k, method, config.seed)
    return tuple(project(s, M) for s in splits)


def quantize(net: SparseNetwork, spec: QuantSpec | int) -> SparseNetwork:
    """Symmetric uniform quantization of every weight block.

    Step is ``max|w| / (2**(bits-1) - 1)``; the extreme weights keep their exact
    value so that re-quantizing reproduces the same step (idempotence).
    """
    bits = spec.bits if isinstance(spec, QuantSpec) else int(spec)
    QuantSpec(bits)
    out = net.copy()
    if bits == 32:
        return out
    levels = 2 ** (bits - 1) - 1
    for key, w in out.weights.items():
        peak = float(np.abs(w).max()) if w.size else 0.0
        if peak == 0.0:
            continue
        delta = peak / levels
        q = np.round(w / delta)
        qw = q * delta
        qw[q == levels] = peak
        qw[q == -levels] = -peak
        out.weights[key] = qw * out.masks[key]
    return out


def quant_step(weights, bits: int) -> float:
    peak = float(np.abs(weights).max()) if np.size(weights) else 0.0
    return peak / (2 ** (bits - 1) - 1)


def save_split_csv(path, dataset: Dataset) -> None:
    header = [f"f{i}" for i in range(dataset.width)] + ["label"]
    rows = np.column_stack([dataset.features, dataset.labels])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) for v in r[:-1]) + f",{int(r[-1])}\n")


def read_csv_split(path, label_column="label", n_classes=None, split_tag="train"):
    """Read a UTF-8 CSV with a header row and a label column."""
    import csv

    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if label_column not in header:
            raise ValueError(f"{path}: missing label column {label_column!r}")
        li = header.index(label_column)
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric cell") from exc
            labels.append(int(vals[li]))
            feats.append(vals[:li] + vals[li + 1:])
    names = tuple(h for i, h in enumerate(header) if i != li)
    X = np.array(feats, dtype=np.float64).reshape(len(feats), len(names))
    C = n_classes if n_classes is not None else (max(labels) + 1 if labels else 1)
    return Dataset(X, np.array(labels, dtype=np.int64), C, split_tag, names)


def load_precomputed(path_train, path_val, path_test, n_classes=None):
    """Load an externally reduced (train, validation, test) triple from CSV files."""
    paths = [Path(p) for p in (path_train, path_val, path_test)]
    tags = ("train", "validation", "test")
    raw = [read_csv_split(p, n_classes=n_classes, split_tag=t) for p, t in zip(paths, tags)]
    C = n_classes or max(r.n_classes for r in raw)
    out = tuple(Dataset(r.features, r.labels, C, r.split_tag, r.feature_names) for r in raw)
    widths = {d.width for d in out}
    if len(widths) != 1:
        raise ValueError(f"precomputed splits disagree on width: {sorted(widths)}")
    return out

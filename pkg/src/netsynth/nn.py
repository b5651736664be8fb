"""Sparse feed-forward classifiers: construction, forward/backward passes, training.

Every ordered layer pair ``(i, j)`` with ``i < j`` owns a weight block and a
boolean mask block of shape ``(n_i, n_j)``. Adjacent-only networks simply keep
the non-adjacent masks empty, so growth can later switch skip connections on.
Weights are kept at exactly zero wherever the mask is off.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
CONNECTIVITY = ("dense_adjacent", "dense_all_pairs")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    split_tag: str = "train"
    feature_names: tuple | None = None

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.labels, copy=True)
        if X.ndim != 2:
            raise ValueError("features must be an N x d matrix")
        if X.shape[0] < 1:
            raise ValueError("dataset must contain at least one row")
        if y.shape != (X.shape[0],):
            raise ValueError("labels must have one entry per row")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite values")
        if y.size and (np.any(y < 0) or np.any(y >= self.n_classes) or np.any(y != np.round(y))):
            raise ValueError(f"labels must be integers in [0, {self.n_classes})")
        if self.split_tag not in ("train", "validation", "test"):
            raise ValueError(f"unknown split tag {self.split_tag!r}")
        X.setflags(write=False)
        y = y.astype(np.int64)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]

    def with_features(self, features) -> "Dataset":
        return Dataset(features, self.labels, self.n_classes, self.split_tag)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-3
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class SparseNetwork:
    layer_sizes: list
    weights: dict
    masks: dict
    biases: list
    activation: str = "relu"

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes)

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "SparseNetwork":
        return copy.deepcopy(self)

    def active_blocks(self) -> list:
        return [k for k in sorted(self.masks) if self.masks[k].any()]

    def active_connections(self) -> int:
        return int(sum(int(m.sum()) for m in self.masks.values()))

    # Parameter counts in reports are mask population counts.
    param_count = active_connections

    def check_masks(self) -> None:
        for k, w in self.weights.items():
            if np.any(w[~self.masks[k]] != 0):
                raise AssertionError(f"block {k}: non-zero weight under a cleared mask")

    def to_dict(self) -> dict:
        blocks = []
        for (i, j) in sorted(self.weights):
            r, c = np.nonzero(self.masks[(i, j)])
            w = self.weights[(i, j)][r, c]
            blocks.append({"src": i, "dst": j,
                           "entries": [[int(a), int(b), float(v)] for a, b, v in zip(r, c, w)]})
        return {"format_version": FORMAT_VERSION, "layer_sizes": list(self.layer_sizes),
                "activation": self.activation, "blocks": blocks,
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, data: dict) -> "SparseNetwork":
        if data.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported network format {data.get('format_version')!r}")
        sizes = [int(s) for s in data["layer_sizes"]]
        net = _empty(sizes, data.get("activation", "relu"))
        for blk in data["blocks"]:
            key = (int(blk["src"]), int(blk["dst"]))
            for r, c, v in blk["entries"]:
                net.masks[key][r, c] = True
                net.weights[key][r, c] = v
        net.biases = [np.asarray(b, dtype=np.float64) for b in data["biases"]]
        return net

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SparseNetwork":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _empty(layer_sizes, activation="relu") -> SparseNetwork:
    weights, masks = {}, {}
    for j in range(1, len(layer_sizes)):
        for i in range(j):
            weights[(i, j)] = np.zeros((layer_sizes[i], layer_sizes[j]))
            masks[(i, j)] = np.zeros((layer_sizes[i], layer_sizes[j]), dtype=bool)
    biases = [np.zeros(n) for n in layer_sizes[1:]]
    return SparseNetwork(list(layer_sizes), weights, masks, biases, activation)


def build_network(layer_sizes, connectivity: str = "dense_adjacent", seed: int = 0) -> SparseNetwork:
    """Dense network over ``layer_sizes`` with uniform(-a, a), a = sqrt(6/fan_in), weights."""
    layer_sizes = [int(n) for n in layer_sizes]
    if len(layer_sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    if min(layer_sizes) < 1:
        raise ValueError("every layer needs at least one neuron")
    if connectivity not in CONNECTIVITY:
        raise ValueError(f"unknown connectivity {connectivity!r}")
    rng = np.random.default_rng(seed)
    net = _empty(layer_sizes)
    for j in range(1, len(layer_sizes)):
        sources = [j - 1] if connectivity == "dense_adjacent" else list(range(j))
        a = math.sqrt(6.0 / sum(layer_sizes[i] for i in sources))
        for i in sources:
            net.masks[(i, j)][:] = True
            net.weights[(i, j)] = rng.uniform(-a, a, size=(layer_sizes[i], layer_sizes[j]))
    return net


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_width(net, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.d_in:
        raise ValueError(f"batch width {X.shape[-1] if X.ndim else None} != network input {net.d_in}")
    return X


def _forward(net, X, blocks):
    """Return (pre-activations, activations) per layer; layer 0 is the input."""
    acts = [X]
    pres = [X]
    by_dst = {}
    for i, j in blocks:
        by_dst.setdefault(j, []).append(i)
    last = net.n_layers - 1
    for j in range(1, net.n_layers):
        z = np.broadcast_to(net.biases[j - 1], (X.shape[0], net.layer_sizes[j])).copy()
        for i in by_dst.get(j, ()):
            z += acts[i] @ net.weights[(i, j)]
        pres.append(z)
        acts.append(z if j == last else np.maximum(z, 0.0))
    return pres, acts


def forward(net: SparseNetwork, batch, probabilities: bool = False) -> np.ndarray:
    """Class scores (logits) for ``batch``; softmax probabilities on request."""
    X = _check_width(net, batch)
    _, acts = _forward(net, X, net.active_blocks())
    return softmax(acts[-1]) if probabilities else acts[-1]


def predict(net: SparseNetwork, batch) -> np.ndarray:
    # np.argmax returns the lowest index among ties
    return np.argmax(forward(net, batch), axis=1)


def evaluate(net: SparseNetwork, dataset: Dataset) -> float:
    return float(np.count_nonzero(predict(net, dataset.features) == dataset.labels)) / len(dataset)


def _backward(net, pres, acts, y, blocks):
    """Gradients of mean cross-entropy for the given blocks (dense, unmasked)."""
    n = y.shape[0]
    probs = softmax(acts[-1])
    loss = -np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-300)))
    dz = probs
    dz[np.arange(n), y] -= 1.0
    dz /= n
    last = net.n_layers - 1
    by_dst = {}
    for i, j in blocks:
        by_dst.setdefault(j, []).append(i)
    d_act = [None] * net.n_layers
    dzs = [None] * net.n_layers
    dzs[last] = dz
    gw, gb = {}, [None] * (net.n_layers - 1)
    for j in range(last, 0, -1):
        if j != last:
            da = d_act[j] if d_act[j] is not None else np.zeros_like(pres[j])
            dzs[j] = da * (pres[j] > 0)
        dz = dzs[j]
        gb[j - 1] = dz.sum(axis=0)
        for i in by_dst.get(j, ()):
            gw[(i, j)] = acts[i].T @ dz
            if i > 0:
                back = dz @ net.weights[(i, j)].T
                d_act[i] = back if d_act[i] is None else d_act[i] + back
    return loss, gw, gb


@dataclass
class Gradient:
    """Mean cross-entropy gradient; weight entries under cleared masks are inactive."""

    loss: float
    weights: dict
    biases: list
    masks: dict = field(repr=False)

    def flat(self) -> np.ndarray:
        parts = [self.weights[k].ravel() for k in sorted(self.weights)]
        return np.concatenate(parts + list(self.biases))

    def active(self) -> np.ndarray:
        parts = [self.masks[k].ravel() for k in sorted(self.weights)]
        return np.concatenate(parts + [np.ones(b.shape, dtype=bool) for b in self.biases])


def gradient(net: SparseNetwork, batch, labels=None, blocks=None) -> Gradient:
    """Gradient over every weight block (masked or not) and every bias.

    ``batch`` may be a ``Dataset``, an ``(X, y)`` pair, or a feature matrix with
    ``labels`` given. ``blocks`` limits the computation to those weight blocks.
    """
    if isinstance(batch, Dataset):
        X, y = batch.features, batch.labels
    elif isinstance(batch, tuple):
        X, y = batch[0], np.asarray(batch[1], dtype=np.int64)
    else:
        X, y = batch, np.asarray(labels, dtype=np.int64)
    X = _check_width(net, X)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    blocks = sorted(net.weights) if blocks is None else sorted(set(blocks))
    pres, acts = _forward(net, X, blocks)
    loss, gw, gb = _backward(net, pres, acts, y, blocks)
    return Gradient(loss, gw, gb, net.masks)


def train(net: SparseNetwork, train_set: Dataset, val_set: Dataset, config: TrainConfig):
    """Train a copy of ``net``; return the best-validation snapshot and its accuracy.

    Loss is mean cross-entropy plus ``weight_decay / 2 * ||w||^2`` over unmasked weights.
    Raises ``TrainingDiverged`` on a non-finite loss.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    for ds in (train_set, val_set):
        if ds.width != net.d_in:
            raise ValueError(f"dataset width {ds.width} != network input {net.d_in}")
        if ds.n_classes > net.n_classes:
            raise ValueError("dataset has more classes than the output layer")
    net = net.copy()
    rng = np.random.default_rng(config.seed)
    blocks = net.active_blocks()
    masks = {k: net.masks[k].astype(np.float64) for k in blocks}
    params = [("w", k) for k in blocks] + [("b", j) for j in range(len(net.biases))]

    def get(p):
        return net.weights[p[1]] if p[0] == "w" else net.biases[p[1]]

    m1 = {p: np.zeros_like(get(p)) for p in params}
    m2 = {p: np.zeros_like(get(p)) for p in params} if config.optimizer == "adam" else None
    lr, wd = config.learning_rate, config.weight_decay
    b1, b2, eps = 0.9, 0.999, 1e-8
    X, Y = train_set.features, train_set.labels
    n, step = len(train_set), 0
    best_acc, best_net = -1.0, None
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            pres, acts = _forward(net, X[idx], blocks)
            loss, gw, gb = _backward(net, pres, acts, Y[idx], blocks)
            if wd:
                loss += 0.5 * wd * sum(float(np.sum(net.weights[k] ** 2)) for k in blocks)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            step += 1
            for p in params:
                if p[0] == "w":
                    g = gw[p[1]] * masks[p[1]] + wd * net.weights[p[1]]
                else:
                    g = gb[p[1]]
                if m2 is None:
                    m1[p] = config.momentum * m1[p] + g
                    upd = lr * m1[p]
                else:
                    m1[p] = b1 * m1[p] + (1 - b1) * g
                    m2[p] = b2 * m2[p] + (1 - b2) * g * g
                    mh = m1[p] / (1 - b1 ** step)
                    vh = m2[p] / (1 - b2 ** step)
                    upd = lr * mh / (np.sqrt(vh) + eps)
                if p[0] == "w":
                    net.weights[p[1]] = (net.weights[p[1]] - upd) * masks[p[1]]
                else:
                    net.biases[p[1]] = net.biases[p[1]] - upd
        if not all(np.all(np.isfinite(net.weights[k])) for k in blocks):
            raise TrainingDiverged("non-finite weights")
        acc = evaluate(net, val_set)
        if acc > best_acc:
            best_acc, best_net = acc, net.copy()
    return best_net, best_acc

"""Grow-and-prune refinement of a trained network: connection growth, neuron growth,
magnitude pruning, and the iterative local search that alternates them with fine-tuning.

Every operation returns an ``OpResult`` holding a new network; the input network
is never modified. ``changed=False`` flags a no-op (nothing to grow, or a prune
that would disconnect the network).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from netsynth.candidate import derive_seed
from netsynth.dimreduce import QuantSpec, quantize
from netsynth.nn import SparseNetwork, TrainConfig, TrainingDiverged, evaluate, gradient, train

log = logging.getLogger(__name__)

OPS = ("grow_conn", "grow_neuron", "prune_conn")
DEFAULT_SCHEDULES = {
    "A": ("grow_neuron", "grow_conn", "grow_neuron", "grow_conn", "prune_conn"),
    "B": ("grow_conn", "prune_conn"),
    "C": ("grow_conn", "prune_conn"),
}


@dataclass(frozen=True)
class LocalSearchConfig:
    scheme: str = "B"
    max_iterations: int = 20
    op_schedule: tuple | None = None
    grow_conn_count: float = 0.02  # >= 1: absolute count; < 1: fraction of active connections
    prune_fraction: float = 0.3
    prune_decay: float = 0.7  # prune fraction multiplier per schedule cycle
    prune_mode: str = "small_weight"
    neuron_growth_mode: str = "duplicate"
    epochs_per_iteration: int = 10
    growth_batch: int = 256
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.scheme not in DEFAULT_SCHEDULES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.prune_fraction < 1:
            raise ValueError("prune_fraction must lie in (0, 1)")
        if not self.grow_conn_count > 0:
            raise ValueError("grow_conn_count must be positive")
        if self.prune_mode not in ("small_weight", "large_weight"):
            raise ValueError(f"unknown prune mode {self.prune_mode!r}")
        if self.neuron_growth_mode not in ("duplicate", "random"):
            raise ValueError(f"unknown neuron growth mode {self.neuron_growth_mode!r}")
        bad = [op for op in self.schedule if op not in OPS]
        if bad:
            raise ValueError(f"unknown operations in schedule: {bad}")

    @property
    def schedule(self) -> tuple:
        return tuple(self.op_schedule) if self.op_schedule else DEFAULT_SCHEDULES[self.scheme]

    @property
    def adjacent_only(self) -> bool:
        return self.scheme == "C"


@dataclass
class OpResult:
    net: SparseNetwork
    changed: bool
    note: str = ""
    removed: int = 0
    threshold: float | None = None


def _eligible(key, adjacent_only) -> bool:
    return not adjacent_only or key[1] == key[0] + 1


def connection_growth(net: SparseNetwork, batch, count: int, adjacent_only: bool = False,
                      learning_rate: float = 0.01) -> OpResult:
    """Activate the ``count`` inactive connections with the largest |dL/dw| on ``batch``.

    New weights start at ``learning_rate * sign(-dL/dw)``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    keys = [k for k in sorted(net.weights) if _eligible(k, adjacent_only)]
    inactive = {k: np.flatnonzero(~net.masks[k].ravel()) for k in keys}
    if not any(v.size for v in inactive.values()):
        return OpResult(net.copy(), False, "no inactive connections")
    g = gradient(net, batch, blocks=[k for k in keys if inactive[k].size] + net.active_blocks())
    cand_key, cand_pos, cand_g = [], [], []
    for n, k in enumerate(keys):
        if inactive[k].size:
            cand_key.append(np.full(inactive[k].size, n))
            cand_pos.append(inactive[k])
            cand_g.append(g.weights[k].ravel()[inactive[k]])
    ck, cp, cg = map(np.concatenate, (cand_key, cand_pos, cand_g))
    pick = np.argsort(-np.abs(cg), kind="stable")[:count]
    out = net.copy()
    for p in pick:
        k = keys[ck[p]]
        r, c = divmod(int(cp[p]), net.layer_sizes[k[1]])
        out.masks[k][r, c] = True
        out.weights[k][r, c] = learning_rate * np.sign(-cg[p])
    return OpResult(out, True, f"grew {len(pick)} connections", removed=-len(pick))


def neuron_growth(net: SparseNetwork, layer: int, mode: str, rng: np.random.Generator,
                  noise_scale: float = 0.01, split: bool = False,
                  adjacent_only: bool = False) -> OpResult:
    """Append one neuron to hidden ``layer`` by duplicating a random neuron or from scratch.

    Duplicates carry Gaussian noise with std ``noise_scale * |w|`` per weight.
    ``split=True`` halves the outgoing weights of the original and the copy so
    that, with zero noise, the network function is unchanged.
    """
    if not 1 <= layer < net.n_layers - 1:
        raise ValueError(f"layer {layer} is not a hidden layer")
    out = net.copy()
    j = layer
    ins = [(i, j) for i in range(j)]
    outs = [(j, k) for k in range(j + 1, net.n_layers)]
    if mode == "duplicate":
        u = int(rng.integers(net.layer_sizes[j]))
        new_in = {k: (net.weights[k][:, u].copy(), net.masks[k][:, u].copy()) for k in ins}
        new_out = {k: (net.weights[k][u, :].copy(), net.masks[k][u, :].copy()) for k in outs}
        if split:
            for k in outs:
                out.weights[k][u, :] *= 0.5
                new_out[k] = (new_out[k][0] * 0.5, new_out[k][1])
        for store in (new_in, new_out):
            for k, (w, m) in store.items():
                w += rng.normal(0.0, 1.0, w.shape) * noise_scale * np.abs(w)
                w[~m] = 0.0
        bias = float(net.biases[j - 1][u])
    elif mode == "random":
        new_in = _random_links(net, [k for k in ins if _eligible(k, adjacent_only)], ins, axis=0, rng=rng)
        new_out = _random_links(net, [k for k in outs if _eligible(k, adjacent_only)], outs, axis=1, rng=rng)
        bias = 0.0
    else:
        raise ValueError(f"unknown neuron growth mode {mode!r}")
    for k in ins:
        out.weights[k] = np.column_stack([out.weights[k], new_in[k][0]])
        out.masks[k] = np.column_stack([out.masks[k], new_in[k][1]])
    for k in outs:
        out.weights[k] = np.vstack([out.weights[k], new_out[k][0]])
        out.masks[k] = np.vstack([out.masks[k], new_out[k][1]])
    out.biases[j - 1] = np.append(out.biases[j - 1], bias)
    out.layer_sizes[j] += 1
    added = sum(int(m.sum()) for _, m in new_in.values()) + sum(int(m.sum()) for _, m in new_out.values())
    return OpResult(out, True, f"{mode} neuron in layer {j}", removed=-added)


def _random_links(net, eligible, allkeys, axis, rng):
    """Fresh connections for a new neuron at the density of the currently active blocks."""
    active = [k for k in eligible if net.masks[k].any()] or eligible
    links = {}
    for k in allkeys:
        n_other = net.layer_sizes[k[0]] if axis == 0 else net.layer_sizes[k[1]]
        links[k] = (np.zeros(n_other), np.zeros(n_other, dtype=bool))
    possible = sum(net.masks[k].size for k in active)
    density = sum(int(net.masks[k].sum()) for k in active) / possible if possible else 1.0
    for k in active:
        links[k][1][:] = rng.random(links[k][1].size) < density
    if not any(links[k][1].any() for k in active):
        k = active[int(rng.integers(len(active)))]
        links[k][1][int(rng.integers(links[k][1].size))] = True
    for k in active:
        fan_in = net.layer_sizes[k[0]] if axis == 0 else max(1.0, net.masks[k].sum(axis=0).mean())
        a = math.sqrt(6.0 / max(1.0, fan_in))
        w = rng.uniform(-a, a, links[k][0].size)
        links[k] = (np.where(links[k][1], w, 0.0), links[k][1])
    return links


def _degrees(net, j):
    din = sum(net.masks[(i, j)].sum(axis=0) for i in range(j))
    dout = sum(net.masks[(j, k)].sum(axis=1) for k in range(j + 1, net.n_layers))
    return din, dout


def _drop_neurons(net, j, dead):
    keep = ~dead
    for i in range(j):
        net.weights[(i, j)] = net.weights[(i, j)][:, keep]
        net.masks[(i, j)] = net.masks[(i, j)][:, keep]
    for k in range(j + 1, net.n_layers):
        net.weights[(j, k)] = net.weights[(j, k)][keep, :]
        net.masks[(j, k)] = net.masks[(j, k)][keep, :]
    net.biases[j - 1] = net.biases[j - 1][keep]
    net.layer_sizes[j] = int(keep.sum())


def remove_isolated(net: SparseNetwork) -> int:
    """Drop hidden neurons with no inputs or no outputs, repeatedly; returns edges removed.

    A neuron without inputs emits the constant relu(bias); that constant is folded
    into the downstream biases before the neuron is removed.
    """
    before = net.active_connections()
    while True:
        removed_any = False
        for j in range(1, net.n_layers - 1):
            din, dout = _degrees(net, j)
            dead = (din == 0) | (dout == 0)
            if not dead.any() or dead.all():
                if dead.all():
                    return -1
                continue
            const = np.maximum(net.biases[j - 1], 0.0) * ((din == 0) & (dout > 0))
            for k in range(j + 1, net.n_layers):
                net.biases[k - 1] = net.biases[k - 1] + const @ net.weights[(j, k)]
            _drop_neurons(net, j, dead)
            removed_any = True
        if not removed_any:
            return before - net.active_connections()


def connected(net: SparseNetwork) -> bool:
    """True when at least one active path runs from an input to an output neuron."""
    reach = [np.ones(net.d_in, dtype=bool)]
    for j in range(1, net.n_layers):
        r = np.zeros(net.layer_sizes[j], dtype=bool)
        for i in range(j):
            r |= (reach[i].astype(np.int64) @ net.masks[(i, j)]) > 0
        reach.append(r)
    return bool(reach[-1].any())


def connection_pruning(net: SparseNetwork, fraction: float | None = None,
                       mode: str = "small_weight", threshold: float | None = None) -> OpResult:
    """Deactivate ceil(fraction * active) connections by magnitude, or all past ``threshold``.

    ``small_weight`` removes the smallest |w| (or |w| <= threshold); ``large_weight``
    the largest (or |w| >= threshold). Isolated hidden neurons are then removed.
    """
    if mode not in ("small_weight", "large_weight"):
        raise ValueError(f"unknown prune mode {mode!r}")
    keys = [k for k in sorted(net.masks) if net.masks[k].any()]
    pos = {k: np.flatnonzero(net.masks[k].ravel()) for k in keys}
    if not keys:
        return OpResult(net.copy(), False, "no active connections")
    kk = np.concatenate([np.full(pos[k].size, n) for n, k in enumerate(keys)])
    pp = np.concatenate([pos[k] for k in keys])
    mag = np.concatenate([np.abs(net.weights[k].ravel()[pos[k]]) for k in keys])
    if threshold is None:
        if fraction is None or not 0 < fraction < 1:
            raise ValueError("fraction must lie in (0, 1)")
        m = math.ceil(fraction * mag.size)
        order = np.argsort(mag if mode == "small_weight" else -mag, kind="stable")
        cut = order[:m]
        threshold = float(mag[cut[-1]])
    else:
        cut = np.flatnonzero(mag <= threshold if mode == "small_weight" else mag >= threshold)
    if cut.size == 0:
        return OpResult(net.copy(), False, "nothing beyond threshold", threshold=threshold)
    out = net.copy()
    for c in cut:
        k = keys[kk[c]]
        r, col = divmod(int(pp[c]), net.layer_sizes[k[1]])
        out.masks[k][r, col] = False
        out.weights[k][r, col] = 0.0
    cascade = remove_isolated(out)
    if cascade < 0 or not connected(out):
        return OpResult(net.copy(), False, "pruning would disconnect the network", threshold=threshold)
    return OpResult(out, True, f"pruned {cut.size} (+{cascade} cascaded)",
                    removed=int(cut.size) + cascade, threshold=threshold)


@dataclass
class LocalSearchResult:
    network: SparseNetwork
    val_accuracy: float
    best_iteration: int
    trace: list


def _score(net, val_set, quant):
    return evaluate(quantize(net, quant) if quant is not None else net, val_set)


def local_search(initial_net: SparseNetwork, dataset, config: LocalSearchConfig = LocalSearchConfig(),
                 quant: QuantSpec | None = None) -> LocalSearchResult:
    """Alternate architecture-changing operations with fine-tuning; keep the best validation snapshot.

    ``dataset`` is a (train, validation) pair in the network's input space. Ties in
    validation accuracy go to the snapshot with fewer active connections, then the earlier one.
    """
    train_set, val_set = dataset
    rng = np.random.default_rng(config.seed)
    gb = rng.permutation(len(train_set))[:config.growth_batch]
    growth_X, growth_y = train_set.features[gb], train_set.labels[gb]
    schedule = config.schedule
    net = initial_net.copy()
    acc = _score(net, val_set, quant)
    best = (acc, net, 0)
    trace = [_row(0, "initial", net, acc, True)]
    idle = 0
    for it in range(1, config.max_iterations + 1):
        op = schedule[(it - 1) % len(schedule)]
        cycle = (it - 1) // len(schedule)
        if op == "grow_conn":
            c = config.grow_conn_count
            count = int(c) if c >= 1 else max(1, math.ceil(c * net.active_connections()))
            res = connection_growth(net, (growth_X, growth_y), count, config.adjacent_only,
                                    config.train.learning_rate)
        elif op == "grow_neuron":
            if net.n_layers < 3:
                res = OpResult(net.copy(), False, "no hidden layer")
            else:
                layer = int(rng.integers(1, net.n_layers - 1))
                res = neuron_growth(net, layer, config.neuron_growth_mode, rng,
                                    adjacent_only=config.adjacent_only)
        else:
            frac = config.prune_fraction * config.prune_decay ** cycle
            res = connection_pruning(net, frac, config.prune_mode)
        if not res.changed:
            idle += 1
            trace.append(_row(it, op, net, acc, False))
            if idle >= len(schedule):
                log.info("every operation was a no-op for a full cycle; stopping at %d", it)
                break
            continue
        idle = 0
        tcfg = replace(config.train, epochs=config.epochs_per_iteration,
                       seed=derive_seed(config.seed, it))
        try:
            net, _ = train(res.net, train_set, val_set, tcfg)
        except TrainingDiverged as exc:
            log.warning("fine-tuning diverged after %s (%s); keeping previous network", op, exc)
            trace.append(_row(it, op, net, acc, False))
            continue
        net.check_masks()
        acc = _score(net, val_set, quant)
        trace.append(_row(it, op, net, acc, True))
        if acc > best[0] or (acc == best[0] and net.active_connections() < best[1].active_connections()):
            best = (acc, net, it)
    return LocalSearchResult(best[1], best[0], best[2], trace)


def _row(it, op, net, acc, changed):
    return {"iteration": it, "op": op, "active_connections": net.active_connections(),
            "neurons": "-".join(map(str, net.layer_sizes)), "val_accuracy": acc, "changed": changed}


def write_trace(path, rows) -> None:
    fields = ["iteration", "op", "active_connections", "neurons", "val_accuracy", "changed"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})

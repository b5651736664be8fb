"""Oracles, synthetic surfaces and the acceptance-criteria harness.

``run_acceptance("fast")`` executes every criterion that needs no external data;
``"full"`` additionally attempts the UCI reproduction when the CSVs are present
(see ``scripts/fetch_uci.py``). Results come back ordered by criterion id.
"""

from __future__ import annotations

import json
import math
import os
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from netsynth.candidate import derive_seed
from netsynth.dimreduce import quant_step, quantize
from netsynth.evolve import EvolveConfig, search
from netsynth.nn import build_network, gradient
from netsynth.predictor import AccuracyRecord, fit_boosted, fit_ridge, fit_tree, loo_mse
from netsynth.qmc import sobol_points
from netsynth.space import general_space

ORACLE_LIMIT = 4096


# ---------------------------------------------------------------- surfaces and oracles

@dataclass(frozen=True)
class SyntheticSurface:
    """Accuracy-like response over gene indices, pure in ``(gene, seed)``.

    ``generator`` picks the shape: ``"nonlinear"`` mimics trained-architecture
    accuracy (layer/width interaction, per-method offsets, ratio cliffs, a
    quantization penalty); ``"separable"`` is a sum of per-coordinate concave
    bumps with a known optimum.
    """

    generator: str = "nonlinear"
    noise: float = 0.02
    sizes: tuple = field(default_factory=lambda: general_space().grid_sizes)
    shape_seed: int = 1234

    def __post_init__(self):
        if self.generator not in ("nonlinear", "separable"):
            raise ValueError(f"unknown surface generator {self.generator!r}")

    def _clean(self, G: np.ndarray) -> np.ndarray:
        sizes = np.asarray(self.sizes, dtype=np.float64)
        x = G / np.maximum(sizes - 1, 1)
        if self.generator == "separable":
            return 0.9 - 0.4 * np.mean((x - self.optimum_x()) ** 2, axis=1)
        rng = np.random.default_rng(self.shape_seed)
        n_slots = len(self.sizes) - 4
        method_offset = rng.uniform(-0.08, 0.04, int(self.sizes[-3]))
        cliff = rng.uniform(0.3, 0.9, int(self.sizes[-3]))
        layers = G[:, 0] + 1
        slot = np.arange(n_slots)
        active = slot[None, :] < layers[:, None]
        width = np.where(active, x[:, 1:1 + n_slots], 0.0).sum(axis=1) / layers
        depth_term = -0.06 * (layers - 2.5) ** 2 / 6.25
        width_term = 0.12 * np.tanh(3 * width) * np.where(layers > 3, 0.7, 1.0)
        ratio = x[:, -2]
        method = G[:, -3].astype(np.int64)
        ratio_term = -0.15 * (ratio > cliff[method]) * (ratio - cliff[method])
        quant_term = np.array([-0.06, -0.01, 0.0, 0.0])[np.minimum(G[:, -1], 3).astype(np.int64)]
        return 0.8 + depth_term + width_term + method_offset[method] + ratio_term + quant_term

    def optimum_x(self) -> np.ndarray:
        rng = np.random.default_rng(self.shape_seed)
        return rng.uniform(0.0, 1.0, len(self.sizes))

    def __call__(self, genes, seed: int = 0) -> np.ndarray:
        G = np.atleast_2d(np.asarray(genes, dtype=np.int64))
        clean = self._clean(G.astype(np.float64))
        if self.noise:
            eps = np.array([np.random.default_rng(derive_seed(seed, *g)).normal() for g in G])
            clean = clean + self.noise * eps
        return np.clip(clean, 0.0, 1.0)

    def records(self, n: int, seed: int = 0) -> list:
        """``n`` distinct uniformly drawn genes with their noisy responses."""
        rng = np.random.default_rng(seed)
        seen, genes = set(), []
        while len(genes) < n:
            g = tuple(int(v) for v in rng.integers(0, self.sizes))
            if g not in seen:
                seen.add(g)
                genes.append(g)
        acc = self(genes, seed)
        return [AccuracyRecord(g, float(a), "initial_random") for g, a in zip(genes, acc)]


def enumerate_space(sizes) -> np.ndarray:
    sizes = tuple(int(s) for s in sizes)
    if not sizes or min(sizes) < 1:
        raise ValueError("empty space")
    total = math.prod(sizes)
    if total > ORACLE_LIMIT:
        raise ValueError(f"space of {total} genes exceeds the oracle limit {ORACLE_LIMIT}")
    return np.indices(sizes).reshape(len(sizes), -1).T


def oracle_exhaustive(space, objective) -> tuple:
    """Exact maximizer over an enumerable grid; ties go to the lexicographically smallest gene.

    ``space`` is a ``SearchSpace`` or a tuple of grid sizes; ``objective`` maps an
    (n, L) index matrix to n values.
    """
    sizes = space.grid_sizes if hasattr(space, "grid_sizes") else space
    G = enumerate_space(sizes)
    values = np.asarray(objective(G), dtype=np.float64)
    best = int(np.argmax(values))  # enumeration order is lexicographic
    return tuple(int(v) for v in G[best]), float(values[best])


def separable_objective(sizes, seed: int):
    """Sum of per-coordinate random tables; the argmax is the per-coordinate argmax."""
    rng = np.random.default_rng(seed)
    tables = [rng.normal(size=int(s)) for s in sizes]

    def f(G):
        G = np.asarray(G, dtype=np.int64)
        return sum(t[G[:, i]] for i, t in enumerate(tables))
    return f


def quadratic_objective(sizes, seed: int, coupling: float = 0.3):
    """Concave quadratic with mild cross terms, centred on a random interior point."""
    rng = np.random.default_rng(seed)
    L = len(sizes)
    A = rng.normal(size=(L, L)) * coupling
    H = np.eye(L) + 0.5 * (A + A.T) * (1 - np.eye(L))
    H = H @ H.T  # positive definite
    c = rng.uniform(0.0, 1.0, L)
    scale = np.maximum(np.asarray(sizes, dtype=np.float64) - 1, 1)

    def f(G):
        d = np.asarray(G, dtype=np.float64) / scale - c
        return -np.einsum("ni,ij,nj->n", d, H, d)
    return f


def box_discrepancy(points: np.ndarray, grid: int = 10) -> float:
    """Max |fraction inside - area| over the fixed grid x grid anchored boxes [0,a) x [0,b)."""
    edges = np.arange(1, grid + 1) / grid
    worst = 0.0
    for a in edges:
        inside_a = points[:, 0] < a
        for b in edges:
            frac = np.mean(inside_a & (points[:, 1] < b))
            worst = max(worst, abs(frac - a * b))
    return worst


def van_der_corput(i: int) -> float:
    """Base-2 radical inverse by string reversal; independent of the direction-number code."""
    return int(bin(i)[2:][::-1], 2) / 2 ** len(bin(i)[2:])


def sobol_dim1_reference(i: int) -> float:
    """Point ``i`` of the first Sobol coordinate in Gray-code order."""
    return van_der_corput(i ^ (i >> 1))


# ---------------------------------------------------------------- acceptance harness

@dataclass
class CriterionResult:
    id: int
    name: str
    status: str  # pass | fail | skip
    detail: str
    seconds: float = 0.0
    measured: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"criterion {self.id} [{self.status.upper()}] {self.name}: {self.detail} ({self.seconds:.1f}s)"

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "status": self.status, "detail": self.detail,
                "seconds": round(self.seconds, 3), "measured": self.measured}


def _rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def _random_sparse_net(rng):
    sizes = [int(rng.integers(2, 6)), int(rng.integers(1, 9)), int(rng.integers(1, 9)),
             int(rng.integers(2, 5))]
    if rng.random() < 0.3:
        sizes = [sizes[0], sizes[1], sizes[3]]
    net = build_network(sizes, "dense_all_pairs", seed=int(rng.integers(2 ** 31)))
    for k in net.masks:
        keep = rng.random(net.masks[k].shape) < 0.6
        net.masks[k] &= keep
        net.weights[k] *= net.masks[k]
    for b in net.biases:
        b[:] = rng.normal(0.0, 0.5, b.shape)
    return net


def criterion_gradient(n_nets: int = 20, seed: int = 0, h: float = 1e-5):
    """Backprop against central differences on random sparse nets up to [5,8,8,4]."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_nets):
        net = _random_sparse_net(rng)
        X = rng.normal(size=(7, net.d_in))
        y = rng.integers(0, net.n_classes, 7)
        g = gradient(net, X, y)
        fd_w, bp_w = [], []
        for k in net.active_blocks():
            for r, c in zip(*np.nonzero(net.masks[k])):
                orig = net.weights[k][r, c]
                net.weights[k][r, c] = orig + h
                up = gradient(net, X, y).loss
                net.weights[k][r, c] = orig - h
                down = gradient(net, X, y).loss
                net.weights[k][r, c] = orig
                fd_w.append((up - down) / (2 * h))
                bp_w.append(g.weights[k][r, c])
        for j, b in enumerate(net.biases):
            for u in range(b.size):
                orig = b[u]
                b[u] = orig + h
                up = gradient(net, X, y).loss
                b[u] = orig - h
                down = gradient(net, X, y).loss
                b[u] = orig
                fd_w.append((up - down) / (2 * h))
                bp_w.append(g.biases[j][u])
        worst = max(worst, _rel_error(np.array(bp_w), np.array(fd_w)))
    ok = worst < 1e-4
    return ok, f"max relative error {worst:.2e} over {n_nets} nets (threshold 1e-4)", {"max_rel_error": worst}


def criterion_predictor(n_seeds: int = 10, n_records: int = 300, loo_stages: int = 50):
    """Leave-one-out MSE ordering: boosted below single tree and ridge."""
    surface = SyntheticSurface("nonlinear")
    wins, rows = 0, []
    for s in range(n_seeds):
        recs = surface.records(n_records, seed=s)
        boosted = loo_mse(lambda r: fit_boosted(r, 5, loo_stages, seed=s), recs)
        tree = loo_mse(lambda r: fit_tree(r, max_depth=5), recs)
        ridge = loo_mse(lambda r: fit_ridge(r, alpha=1.0), recs)
        rows.append({"seed": s, "boosted": boosted, "tree": tree, "ridge": ridge})
        wins += boosted < tree and boosted < ridge
    ok = wins >= 9
    mean = {k: float(np.mean([r[k] for r in rows])) for k in ("boosted", "tree", "ridge")}
    detail = (f"boosted best in {wins}/{n_seeds} seeds (need 9); mean LOO MSE boosted "
              f"{mean['boosted']:.2e}, tree {mean['tree']:.2e}, ridge {mean['ridge']:.2e}; "
              f"boosted LOO budget {loo_stages} stages")
    return ok, detail, {"wins": wins, "per_seed": rows, "loo_stages": loo_stages}


def criterion_sobol(n: int = 1024, draws: int = 20):
    pts = sobol_points(2, n)
    d_sobol = box_discrepancy(pts)
    d_rand = [box_discrepancy(np.random.default_rng(s).random((n, 2))) for s in range(draws)]
    med = float(np.median(d_rand))
    first = sobol_points(1, 64)[:, 0]
    ref = np.array([sobol_dim1_reference(i) for i in range(1, 65)])
    exact = bool(np.array_equal(first, ref))
    ok = d_sobol < med and exact
    detail = (f"100-box discrepancy {d_sobol:.4f} vs random median {med:.4f}; "
              f"dimension-1 points {'match' if exact else 'DIFFER from'} the radical-inverse reference")
    return ok, detail, {"sobol": d_sobol, "random_median": med, "dim1_exact": exact}


def evolve_trials(n_trials: int = 100):
    """(space sizes, objective, seed) triples for the evolve-optimality criterion."""
    shapes = [(8, 8, 8, 8), (16, 16, 16), (4, 4, 4, 4, 4, 4), (3, 8, 8, 4, 4)]
    out = []
    for t in range(n_trials):
        sizes = shapes[t % len(shapes)]
        make = separable_objective if t % 2 == 0 else quadratic_objective
        out.append((sizes, make(sizes, seed=1000 + t), t))
    return out


def criterion_evolve(n_trials: int = 100):
    cfg = dict(population=100, max_iterations=200, mutation_prob=0.4)
    hits = 0
    for sizes, f, t in evolve_trials(n_trials):
        best, _ = oracle_exhaustive(sizes, f)
        found, _ = search(sizes, f, EvolveConfig(seed=t, **cfg))
        hits += found == best
    ok = hits >= 95
    return ok, f"oracle optimum found in {hits}/{n_trials} trials (need 95)", {"hits": hits}


class _Interrupt(BaseException):
    """Simulated kill; not an Exception so per-gene error handling cannot swallow it."""


class _CountingTrainer:
    def __init__(self, trainer, stop_after=None):
        self.trainer = trainer
        self.calls = 0
        self.stop_after = stop_after

    def __call__(self, gene):
        if self.stop_after is not None and self.calls >= self.stop_after:
            raise _Interrupt()
        self.calls += 1
        return self.trainer(gene)


def criterion_selector(workdir: Path, stop_after: int = 150):
    from netsynth.pipeline import Pipeline, bundled_config, load_config
    from netsynth.qmc import pool_from_sobol
    from netsynth.selector import select_and_fit

    cfg = load_config(bundled_config())
    pipe = Pipeline(cfg, workdir / "selector-ref")
    pool = pool_from_sobol(cfg.space, cfg.selector.pool_count)
    ref_trainer = _CountingTrainer(pipe.trainer)
    ref_model, ref_records = select_and_fit(cfg.space, pool, ref_trainer, cfg.selector,
                                            records_path=workdir / "ref.csv")
    genes = [r.gene for r in ref_records]
    distinct = len(set(genes))
    part = workdir / "resume.csv"
    try:
        select_and_fit(cfg.space, pool, _CountingTrainer(pipe.trainer, stop_after), cfg.selector,
                       records_path=part)
    except _Interrupt:
        pass
    resumed = _CountingTrainer(pipe.trainer)
    model, records = select_and_fit(cfg.space, pool, resumed, cfg.selector, records_path=part)
    same = json.dumps(model.to_dict()) == json.dumps(ref_model.to_dict())
    ok = (len(ref_records) == 400 and distinct == 400 and ref_trainer.calls == 400
          and resumed.calls == 400 - stop_after and same)
    detail = (f"{len(ref_records)} records, {distinct} distinct, {ref_trainer.calls} trainings; "
              f"resume after {stop_after} retrained {resumed.calls}; final predictor "
              f"{'identical' if same else 'DIFFERENT'}")
    return ok, detail, {"records": len(ref_records), "distinct": distinct,
                        "resumed_trainings": resumed.calls, "identical_predictor": same}


def _end_to_end(config_path, run_dir, seed, workers=1) -> dict:
    from netsynth.pipeline import run_end_to_end

    return run_end_to_end(config_path, run_dir, workers=workers, seed=seed)


def criterion_dominance(workdir: Path, seeds=range(5), config_path=None):
    from netsynth.pipeline import bundled_config

    config_path = config_path or bundled_config()
    good, rows = 0, []
    for s in seeds:
        rep = _end_to_end(config_path, workdir / f"dominance-{s}", s)
        gs, ls = rep["rows"]["gs"], rep["rows"]["gsls"]
        acc_ok = ls["val_accuracy"] >= gs["val_accuracy"] - 0.001
        size_ok = ls["params"] <= 0.5 * gs["params"]
        good += acc_ok and size_ok
        rows.append({"seed": s, "gs_val": gs["val_accuracy"], "gsls_val": ls["val_accuracy"],
                     "gs_params": gs["params"], "gsls_params": ls["params"]})
    ok = good >= 4
    ratios = ", ".join(f"{r['gsls_params'] / r['gs_params']:.2f}" for r in rows)
    detail = f"{good}/{len(rows)} seeds dominate (need 4); GS+LS/GS params: {ratios}"
    return ok, detail, {"good": good, "per_seed": rows}


def criterion_quantization(quantizer=quantize, n_nets: int = 10, seed: int = 0):
    """Per-weight error within half a step for 4/8/16 bits; 32 bits is the identity."""
    rng = np.random.default_rng(seed)
    worst_ratio, identity = 0.0, True
    for _ in range(n_nets):
        net = _random_sparse_net(rng)
        for k in net.weights:
            net.weights[k] *= rng.uniform(0.1, 10.0)
        for bits in (4, 8, 16):
            q = quantizer(net, bits)
            for k, w in net.weights.items():
                delta = quant_step(w, bits)
                if delta == 0:
                    continue
                err = np.abs(q.weights[k] - w)
                worst_ratio = max(worst_ratio, float(err.max() / delta))
        q32 = quantizer(net, 32)
        identity &= all(np.array_equal(q32.weights[k], w) for k, w in net.weights.items())
    ok = worst_ratio <= 0.5 and identity
    detail = (f"max error {worst_ratio:.4f} steps (bound 0.5); 32-bit "
              f"{'bit-identical' if identity else 'CHANGED weights'}")
    return ok, detail, {"max_error_in_steps": worst_ratio, "identity_32": identity}


def criterion_determinism(workdir: Path, seed: int = 0, config_path=None):
    from netsynth.pipeline import bundled_config

    config_path = config_path or bundled_config()
    a = _end_to_end(config_path, workdir / "det-w1", seed, workers=1)
    b = _end_to_end(config_path, workdir / "det-w4", seed, workers=4)
    ba = (workdir / "det-w1" / "report.json").read_bytes()
    bb = (workdir / "det-w4" / "report.json").read_bytes()
    same = ba == bb
    return same, f"report.json {'bit-identical' if same else 'DIFFERS'} with 1 vs 4 workers", {
        "identical": same, "gsls_val": a["rows"]["gsls"]["val_accuracy"]}


def data_dir() -> Path:
    return Path(os.environ.get("NETSYNTH_DATA", "data"))


def criterion_reproduction(workdir: Path, workers: int = 4):
    """Pendigits GS+LS test >= 97.5% with <= 10k params; Letter GS test >= 96.0%."""
    from netsynth.pipeline import bundled_config

    root = data_dir()
    need = [root / "pendigits" / "train.csv", root / "pendigits" / "test.csv", root / "letter" / "letter.csv"]
    missing = [str(p) for p in need if not p.exists()]
    if missing:
        return None, f"datasets absent ({', '.join(missing)}); run scripts/fetch_uci.py", {}
    results = {}
    for name in ("pendigits", "letter"):
        run_dir = workdir / f"repro-{name}"
        cfg_path = run_dir.parent / f"{name}.toml"
        text = bundled_config(name).read_text(encoding="utf-8").replace("@DATA@", str(root.resolve()))
        cfg_path.write_text(text, encoding="utf-8")
        results[name] = _end_to_end(cfg_path, run_dir, 0, workers)
    pen = results["pendigits"]["rows"]["gsls"]
    let = results["letter"]["rows"]["gs"]
    ok = pen["test_accuracy"] >= 0.975 and pen["params"] <= 10_000 and let["test_accuracy"] >= 0.960
    detail = (f"Pendigits GS+LS test {100 * pen['test_accuracy']:.2f}% with {pen['params']} params "
              f"(need >= 97.5%, <= 10k); Letter GS test {100 * let['test_accuracy']:.2f}% (need >= 96.0%)")
    return ok, detail, {"pendigits": pen, "letter": let}


CRITERIA = {
    1: ("gradient correctness", "fast"),
    2: ("predictor ordering", "fast"),
    3: ("Sobol quality", "fast"),
    4: ("evolve optimality", "fast"),
    5: ("sample-selection accounting", "fast"),
    6: ("GS+LS dominance", "fast"),
    7: ("desk-scale UCI reproduction", "full"),
    8: ("quantization bound", "fast"),
    9: ("determinism across worker counts", "fast"),
}


def run_criterion(cid: int, workdir: Path, quantizer=quantize) -> CriterionResult:
    name, _ = CRITERIA[cid]
    start = time.perf_counter()
    calls = {
        1: lambda: criterion_gradient(),
        2: lambda: criterion_predictor(),
        3: lambda: criterion_sobol(),
        4: lambda: criterion_evolve(),
        5: lambda: criterion_selector(workdir),
        6: lambda: criterion_dominance(workdir),
        7: lambda: criterion_reproduction(workdir),
        8: lambda: criterion_quantization(quantizer),
        9: lambda: criterion_determinism(workdir),
    }
    ok, detail, measured = calls[cid]()
    status = "skip" if ok is None else ("pass" if ok else "fail")
    return CriterionResult(cid, name, status, detail, time.perf_counter() - start, measured)


def run_acceptance(profile: str = "fast", only=None, quantizer=quantize, workdir=None) -> list:
    """Run the criteria of ``profile``; the fast profile skips the dataset-gated one."""
    if profile not in ("fast", "full"):
        raise ValueError(f"unknown profile {profile!r}")
    ids = sorted(only) if only else sorted(CRITERIA)
    own = workdir is None
    work = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="netsynth-accept-"))
    results = []
    try:
        for cid in ids:
            if CRITERIA[cid][1] == "full" and profile == "fast":
                results.append(CriterionResult(cid, CRITERIA[cid][0], "skip", "full profile only"))
                continue
            results.append(run_criterion(cid, work, quantizer))
    finally:
        if own:
            shutil.rmtree(work, ignore_errors=True)
    return results


def doubled_step_quantizer(net, bits):
    """Deliberately broken quantizer (step twice too large) for mutation testing."""
    bits = int(bits)
    out = net.copy()
    if bits == 32:
        return out
    for k, w in out.weights.items():
        delta = 2 * quant_step(w, bits)
        if delta:
            out.weights[k] = np.round(w / delta) * delta * out.masks[k]
    return out


__all__ = ["SyntheticSurface", "oracle_exhaustive", "enumerate_space", "run_acceptance",
           "CriterionResult", "CRITERIA", "box_discrepancy", "van_der_corput",
           "doubled_step_quantizer"]

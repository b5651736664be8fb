"""Predictor-guided genetic search over the gene grid (mutation-only by default)."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EvolveConfig:
    population: int = 100
    max_iterations: int = 200
    mutation_prob: float = 0.4
    crossover_enabled: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.population < 1:
            raise ValueError("population must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must lie in [0, 1]")


def _sizes(space) -> np.ndarray:
    return np.asarray(space.grid_sizes if hasattr(space, "grid_sizes") else space, dtype=np.int64)


def mutate(gene, space, rng: np.random.Generator) -> tuple:
    """Resample one uniformly chosen (non-degenerate) coordinate to a different grid index."""
    sizes = _sizes(space)
    free = np.flatnonzero(sizes > 1)
    gene = [int(g) for g in gene]
    if free.size == 0:
        warnings.warn("every coordinate has a single grid point; gene unchanged", stacklevel=2)
        return tuple(gene)
    c = int(free[rng.integers(free.size)])
    r = int(rng.integers(sizes[c] - 1))
    gene[c] = r if r < gene[c] else r + 1
    return tuple(gene)


def crossover(a, b, rng: np.random.Generator) -> tuple:
    take = rng.random(len(a)) < 0.5
    return tuple(int(x) if t else int(y) for x, y, t in zip(a, b, take))


def _scorer(model):
    fn = model.predict if hasattr(model, "predict") else model
    return lambda G: np.asarray(fn(np.asarray(G)), dtype=np.float64).reshape(-1)


def search(space, model, config: EvolveConfig = EvolveConfig(), trace: list | None = None):
    """Return ``(best_gene, best_reward)`` maximizing the model's predicted reward.

    Each iteration copies every parent, mutates each copy with probability
    ``mutation_prob``, pools children with parents, stable-sorts by reward
    (children first on ties) and keeps the top ``population``.
    ``trace`` (if given) receives one dict per iteration.
    """
    score = _scorer(model)
    sizes = _sizes(space)
    rng = np.random.default_rng(config.seed)
    pop = config.population
    parents = rng.integers(0, sizes, size=(pop, sizes.size))
    rewards = score(parents)
    first = int(np.argmax(rewards))  # lowest index on ties
    best_gene, best_reward = tuple(int(v) for v in parents[first]), float(rewards[first])
    if trace is not None:
        trace.append(_trace_row(0, best_reward, rewards, best_gene))
    for it in range(1, config.max_iterations + 1):
        children = parents.copy()
        if config.crossover_enabled:
            mates = rng.integers(0, pop, size=pop)
            for r in range(pop):
                children[r] = crossover(children[r], parents[mates[r]], rng)
        flips = rng.random(pop) < config.mutation_prob
        for r in np.flatnonzero(flips):
            children[r] = mutate(children[r], sizes, rng)
        changed = np.any(children != parents, axis=1)
        child_rewards = rewards.copy()
        if changed.any():
            child_rewards[changed] = score(children[changed])
        genes = np.vstack([children, parents])
        allr = np.concatenate([child_rewards, rewards])
        order = np.argsort(-allr, kind="stable")
        parents, rewards = genes[order[:pop]], allr[order[:pop]]
        if rewards[0] > best_reward:
            best_gene, best_reward = tuple(int(v) for v in parents[0]), float(rewards[0])
        if trace is not None:
            trace.append(_trace_row(it, best_reward, rewards, best_gene))
    return best_gene, best_reward


def _trace_row(it, best, rewards, gene):
    return {"iteration": it, "best_reward": best, "mean_reward": float(np.mean(rewards)),
            "best_gene": " ".join(map(str, gene))}


def write_trace(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["iteration", "best_reward", "mean_reward", "best_gene"])
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def finalize(best_gene, trainer):
    """Train the winning gene once and score it on validation and test splits."""
    return trainer.finalize(best_gene)

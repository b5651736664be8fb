"""Iterative sample selection over a gene pool while refitting the accuracy predictor."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from netsynth.candidate import derive_seed
from netsynth.predictor import AccuracyRecord, fit_boosted

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectorConfig:
    pool_count: int = 2048
    iter_count: int = 100
    max_iterations: int = 3
    seed: int = 0
    max_depth: int = 5
    max_stages: int = 500

    def __post_init__(self):
        if self.pool_count < 1 or self.iter_count < 1 or self.max_iterations < 0:
            raise ValueError("pool_count and iter_count must be positive, max_iterations >= 0")
        if self.iter_count * (self.max_iterations + 1) > self.pool_count:
            raise ValueError("iter_count * (max_iterations + 1) exceeds pool_count")


def predictor_seed(config: SelectorConfig, n_records: int) -> int:
    """Boosting seed for a fit over ``n_records`` accumulated records."""
    return derive_seed(config.seed, 7, n_records)


_WORKER_TRAINER = None


def _init_worker(trainer):
    global _WORKER_TRAINER
    _WORKER_TRAINER = trainer


def _safe_score(trainer, gene) -> float:
    try:
        return float(trainer(gene))
    except Exception as exc:  # a failed candidate must not stop the search
        log.warning("training gene %s failed: %s; recording 0.0", gene, exc)
        return 0.0


def _worker_score(gene):
    return _safe_score(_WORKER_TRAINER, gene)


class BatchRunner:
    """Evaluates genes serially or in a process pool; results keep input order."""

    def __init__(self, trainer, workers: int = 1):
        self.trainer = trainer
        self.workers = max(1, int(workers))
        self._pool = None

    def __enter__(self):
        if self.workers > 1:
            self._pool = ProcessPoolExecutor(self.workers, initializer=_init_worker,
                                             initargs=(self.trainer,))
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown()

    def __call__(self, genes) -> list:
        return list(self.iter(genes))

    def iter(self, genes):
        """Scores in input order, yielded as soon as each is available."""
        if self._pool is None:
            return (_safe_score(self.trainer, g) for g in genes)
        return self._pool.map(_worker_score, genes)


def save_records(path, records, seed: int) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    n = len(records[0].gene) if records else 0
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"g{i}" for i in range(n)] + ["accuracy", "source_tag", "seed"])
        for r in records:
            w.writerow(list(r.gene) + [repr(float(r.accuracy)), r.source_tag, seed])
    os.replace(tmp, path)


def load_records(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        gene = tuple(int(v) for k, v in row.items() if k.startswith("g"))
        out.append(AccuracyRecord(gene, float(row["accuracy"]), row["source_tag"]))
    return out


def select_and_fit(space, pool, trainer, config: SelectorConfig = SelectorConfig(),
                   records_path=None, workers: int = 1, fit_last: bool = True):
    """Train an initial random batch, then repeatedly train the top-predicted remaining genes.

    Returns ``(model, records)``. Records already present in ``records_path`` are
    reused instead of retrained, so an interrupted run resumes where it stopped.
    With ``fit_last=False`` the final refit is skipped and ``model`` is None; the
    caller refits with ``predictor_seed(config, len(records))`` to get the same model.
    """
    pool = [space.validate(g) for g in pool] if hasattr(space, "validate") else [tuple(g) for g in pool]
    if len(set(pool)) != len(pool):
        raise ValueError("pool contains duplicate genes")
    if len(pool) < config.iter_count:
        raise ValueError(f"pool of {len(pool)} cannot supply {config.iter_count} initial samples")
    known = {}
    if records_path is not None and Path(records_path).exists():
        known = {r.gene: r for r in load_records(records_path)}
        log.info("resuming with %d recorded genes", len(known))
    rng = np.random.default_rng(config.seed)
    records = []

    with BatchRunner(trainer, workers) as run:
        def train_batch(indices, tag):
            genes = [pool[i] for i in sorted(indices)]
            todo = [g for g in genes if g not in known]
            done = []
            for g, acc in zip(todo, run.iter(todo)):
                known[g] = AccuracyRecord(g, acc, tag)
                done.append(known[g])
                if records_path is not None:
                    # checkpoint every trained gene so a kill loses at most one training
                    save_records(records_path, records + done, config.seed)
            records.extend(known[g] for g in genes)
            if records_path is not None:
                save_records(records_path, records, config.seed)

        def fit():
            return fit_boosted(records, config.max_depth, config.max_stages,
                               predictor_seed(config, len(records)))

        sampled = set(int(i) for i in rng.choice(len(pool), config.iter_count, replace=False))
        train_batch(sampled, "initial_random")
        model = None
        for it in range(1, config.max_iterations + 1):
            remaining = [i for i in range(len(pool)) if i not in sampled]
            if not remaining:
                log.info("pool exhausted before iteration %d", it)
                break
            model = model or fit()
            pred = model.predict(np.array([pool[i] for i in remaining]))
            order = np.argsort(-pred, kind="stable")  # ties -> lower pool index
            take = [remaining[o] for o in order[:config.iter_count]]
            if len(take) < config.iter_count:
                log.warning("pool exhausted: only %d candidates left", len(take))
            sampled.update(take)
            train_batch(take, f"iteration_{it}")
            model = None
        if fit_last:
            model = fit()
    return model, records

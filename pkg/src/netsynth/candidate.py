"""Turn a gene into a trained, reduced, quantized network and score it."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from netsynth.dimreduce import QuantSpec, quantize, reduce_splits
from netsynth.nn import Dataset, SparseNetwork, TrainConfig, TrainingDiverged, build_network, evaluate, train
from netsynth.space import CandidateConfig, SearchSpace, decode

log = logging.getLogger(__name__)


class SplitData:
    """Train/validation/test triple; reads of the test split are counted."""

    def __init__(self, train: Dataset, validation: Dataset, test: Dataset):
        self.train = train
        self.validation = validation
        self._test = test
        self.test_reads = 0
        self.reference_reads = 0

    def read_test(self, reference: bool = False) -> Dataset:
        """Hand out the test split; ``reference=True`` marks a baseline measurement."""
        if reference:
            self.reference_reads += 1
        else:
            self.test_reads += 1
        return self._test

    @property
    def n_classes(self) -> int:
        return self.train.n_classes


def derive_seed(*parts) -> int:
    """Deterministic 63-bit seed from integer parts."""
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


@dataclass
class FinalResult:
    gene: tuple
    config: CandidateConfig
    network: SparseNetwork          # full precision weights
    inference_network: SparseNetwork  # quantized for inference
    val_accuracy: float
    test_accuracy: float | None
    reduced: tuple = field(repr=False, default=())  # (train, validation) after DR

    @property
    def params(self) -> int:
        return self.inference_network.param_count()


class GeneTrainer:
    """Callable gene -> validation accuracy; ``finalize`` adds the one test evaluation."""

    def __init__(self, space: SearchSpace, splits: SplitData, train_config: TrainConfig,
                 seed: int = 0, precomputed: dict | None = None):
        self.space = space
        self.splits = splits
        self.train_config = train_config
        self.seed = int(seed)
        self.precomputed = precomputed or {}

    def gene_seed(self, gene) -> int:
        return derive_seed(self.seed, *gene)

    def _fit(self, gene, with_test: bool):
        gene = self.space.validate(gene)
        gseed = self.gene_seed(gene)
        cfg = decode(self.space, gene, dr_seed=derive_seed(gseed, 1))
        test = self.splits.read_test() if with_test else None
        reduced = reduce_splits(cfg.dr, self.splits.train, self.splits.validation, test,
                                precomputed=self.precomputed)
        tr, va = reduced[0], reduced[1]
        sizes = [tr.width, *cfg.neurons, self.splits.n_classes]
        net = build_network(sizes, cfg.connectivity, seed=derive_seed(gseed, 2))
        tcfg = replace(self.train_config, seed=derive_seed(gseed, 3))
        net, _ = train(net, tr, va, tcfg)
        qnet = quantize(net, cfg.quant)
        return gene, cfg, net, qnet, reduced

    def __call__(self, gene) -> float:
        try:
            _, _, _, qnet, reduced = self._fit(gene, with_test=False)
        except TrainingDiverged as exc:
            log.warning("gene %s diverged (%s); scoring 0.0", tuple(gene), exc)
            return 0.0
        return evaluate(qnet, reduced[1])

    def finalize(self, gene) -> FinalResult:
        try:
            gene, cfg, net, qnet, reduced = self._fit(gene, with_test=True)
        except TrainingDiverged as exc:
            raise TrainingDiverged(f"gene {tuple(gene)}: {exc}") from exc
        return FinalResult(gene, cfg, net, qnet, evaluate(qnet, reduced[1]),
                           evaluate(qnet, reduced[2]), reduced[:2])

    def decode(self, gene) -> CandidateConfig:
        gene = self.space.validate(gene)
        return decode(self.space, gene, dr_seed=derive_seed(self.gene_seed(gene), 1))

    def reduced(self, gene) -> tuple:
        """(train, validation) after the gene's feature reduction; the test split is untouched."""
        cfg = self.decode(gene)
        return reduce_splits(cfg.dr, self.splits.train, self.splits.validation,
                             precomputed=self.precomputed)

    def test_accuracy(self, gene, network: SparseNetwork) -> float:
        """Quantize ``network`` per the gene and score it on the (reduced) test split."""
        gene = self.space.validate(gene)
        gseed = self.gene_seed(gene)
        cfg = decode(self.space, gene, dr_seed=derive_seed(gseed, 1))
        reduced = reduce_splits(cfg.dr, self.splits.train, self.splits.validation,
                                self.splits.read_test(), precomputed=self.precomputed)
        return evaluate(quantize(network, cfg.quant), reduced[2])


def quantized_eval(net: SparseNetwork, dataset: Dataset, quant: QuantSpec | None) -> float:
    return evaluate(quantize(net, quant) if quant is not None else net, dataset)

import numpy as np
import pytest

from netsynth.bench import SyntheticSurface
from netsynth.predictor import fit_boosted
from netsynth.qmc import pool_from_sobol
from netsynth.selector import (SelectorConfig, load_records, predictor_seed, save_records,
                               select_and_fit)
from netsynth.space import HyperParam, SearchSpace

SIZES = (3, 8, 8, 8, 5, 7, 4)


def _space():
    return SearchSpace({
        "layers": HyperParam("layers", 1, 3, 1),
        "neurons": HyperParam("neurons", 8, 64, 8),
        "dr_method": HyperParam("dr_method", 1, 5, 1, "categorical"),
        "dr_ratio": HyperParam("dr_ratio", 1.0, 4.0, 0.5, "real"),
        "quant": HyperParam("quant", 1, 4, 1, "categorical"),
    })


class SurfaceTrainer:
    """Deterministic stand-in for gene training; counts calls."""

    def __init__(self, fail=(), stop_after=None):
        self.surface = SyntheticSurface(sizes=SIZES)
        self.calls = 0
        self.fail = set(fail)
        self.stop_after = stop_after

    def __call__(self, gene):
        if self.stop_after is not None and self.calls >= self.stop_after:
            raise KeyboardInterrupt
        self.calls += 1
        if tuple(gene) in self.fail:
            raise RuntimeError("diverged")
        return float(self.surface([gene], seed=0)[0])


CFG = SelectorConfig(pool_count=600, iter_count=50, max_iterations=3, seed=1, max_stages=30)


@pytest.fixture(scope="module")
def pool():
    return pool_from_sobol(_space(), CFG.pool_count)


@pytest.fixture(scope="module")
def reference(pool, tmp_path_factory):
    path = tmp_path_factory.mktemp("sel") / "records.csv"
    trainer = SurfaceTrainer()
    model, records = select_and_fit(_space(), pool, trainer, CFG, records_path=path)
    return model, records, trainer, path


class TestAccounting:
    def test_counts(self, reference):
        _, records, trainer, _ = reference
        assert len(records) == 200
        assert len({r.gene for r in records}) == 200
        assert trainer.calls == 200

    def test_tags(self, reference):
        tags = [r.source_tag for r in reference[1]]
        assert tags[:50] == ["initial_random"] * 50
        assert tags[-50:] == ["iteration_3"] * 50

    def test_records_file(self, reference):
        _, records, _, path = reference
        assert load_records(path) == records

    def test_zero_iterations(self, pool):
        cfg = SelectorConfig(pool_count=600, iter_count=50, max_iterations=0, max_stages=10)
        model, records = select_and_fit(_space(), pool, SurfaceTrainer(), cfg)
        assert len(records) == 50
        assert {r.source_tag for r in records} == {"initial_random"}
        assert model is not None

    def test_pool_fully_consumed(self, pool):
        cfg = SelectorConfig(pool_count=200, iter_count=50, max_iterations=3, max_stages=10)
        _, records = select_and_fit(_space(), pool[:200], SurfaceTrainer(), cfg)
        assert sorted(r.gene for r in records) == sorted(pool[:200])

    def test_config_rejects_overdraw(self):
        with pytest.raises(ValueError):
            SelectorConfig(pool_count=100, iter_count=50, max_iterations=2)

    def test_duplicate_pool(self, pool):
        with pytest.raises(ValueError, match="duplicate"):
            select_and_fit(_space(), pool[:300] + pool[:1], SurfaceTrainer(), CFG)


class TestSelection:
    def test_batch_is_top_predicted(self, pool, reference):
        records = reference[1]
        first = records[:50]
        model = fit_boosted(first, CFG.max_depth, CFG.max_stages, predictor_seed(CFG, 50))
        seen = {r.gene for r in first}
        remaining = [g for g in pool if g not in seen]
        pred = model.predict(np.array(remaining))
        order = np.argsort(-pred, kind="stable")[:50]
        assert sorted(remaining[i] for i in order) == sorted(r.gene for r in records[50:100])

    def test_final_model_seed(self, reference):
        model, records = reference[0], reference[1]
        refit = fit_boosted(records, CFG.max_depth, CFG.max_stages, predictor_seed(CFG, len(records)))
        assert refit.to_dict() == model.to_dict()

    def test_fit_last_false(self, pool):
        model, records = select_and_fit(_space(), pool, SurfaceTrainer(), CFG, fit_last=False)
        assert model is None and len(records) == 200

    def test_failures_score_zero(self, pool, reference):
        bad = {r.gene for r in reference[1][:3]}
        _, records = select_and_fit(_space(), pool, SurfaceTrainer(fail=bad), CFG)
        got = {r.gene: r.accuracy for r in records}
        assert all(got[g] == 0.0 for g in bad)
        assert len(records) == 200


class TestResume:
    def test_resume_after_kill(self, pool, reference, tmp_path):
        ref_model, ref_records = reference[0], reference[1]
        path = tmp_path / "records.csv"
        with pytest.raises(KeyboardInterrupt):
            select_and_fit(_space(), pool, SurfaceTrainer(stop_after=75), CFG, records_path=path)
        assert len(load_records(path)) == 75
        trainer = SurfaceTrainer()
        model, records = select_and_fit(_space(), pool, trainer, CFG, records_path=path)
        assert trainer.calls == 125
        assert records == ref_records
        assert model.to_dict() == ref_model.to_dict()

    def test_complete_file_trains_nothing(self, pool, reference):
        trainer = SurfaceTrainer()
        _, records = select_and_fit(_space(), pool, trainer, CFG, records_path=reference[3])
        assert trainer.calls == 0
        assert records == reference[1]

    def test_save_load_roundtrip(self, tmp_path, reference):
        save_records(tmp_path / "r.csv", reference[1][:5], seed=3)
        assert load_records(tmp_path / "r.csv") == reference[1][:5]


class TestWorkers:
    def test_parallel_matches_serial(self, pool, reference):
        cfg = SelectorConfig(pool_count=600, iter_count=50, max_iterations=1, seed=1, max_stages=30)
        _, serial = select_and_fit(_space(), pool, SurfaceTrainer(), cfg)
        _, parallel = select_and_fit(_space(), pool, SurfaceTrainer(), cfg, workers=2)
        assert serial == parallel

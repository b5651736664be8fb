import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from netsynth.bench import oracle_exhaustive, separable_objective
from netsynth.evolve import EvolveConfig, crossover, mutate, search, write_trace

SIZES = (4, 6, 5, 3)


class TestMutate:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000))
    def test_hamming_one(self, seed):
        rng = np.random.default_rng(seed)
        gene = tuple(int(v) for v in rng.integers(0, SIZES))
        child = mutate(gene, SIZES, rng)
        assert sum(a != b for a, b in zip(gene, child)) == 1
        assert all(0 <= c < s for c, s in zip(child, SIZES))

    def test_uniform_over_alternatives(self):
        rng = np.random.default_rng(0)
        gene = (0, 2, 0, 0)
        coord, value = np.zeros(4), np.zeros(6)
        for _ in range(8000):
            child = mutate(gene, SIZES, rng)
            c = next(i for i in range(4) if child[i] != gene[i])
            coord[c] += 1
            if c == 1:
                value[child[1]] += 1
        assert chisquare(coord).pvalue > 0.001
        assert value[2] == 0
        assert chisquare(np.delete(value, 2)).pvalue > 0.001

    def test_binary_flips(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            child = mutate((0, 1, 0), (2, 2, 2), rng)
            assert sum(a != b for a, b in zip((0, 1, 0), child)) == 1

    def test_skips_degenerate_coordinates(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            child = mutate((0, 0, 0), (1, 3, 1), rng)
            assert child[0] == 0 and child[2] == 0 and child[1] != 0

    def test_all_degenerate_warns(self):
        with pytest.warns(UserWarning):
            assert mutate((0, 0), (1, 1), np.random.default_rng(0)) == (0, 0)


class TestCrossover:
    def test_coordinates_from_parents(self):
        rng = np.random.default_rng(0)
        a, b = (0, 1, 2, 3), (3, 2, 1, 0)
        for _ in range(30):
            c = crossover(a, b, rng)
            assert all(x in (p, q) for x, p, q in zip(c, a, b))

    def test_enabled_search_runs(self):
        obj = separable_objective(SIZES, seed=1)
        cfg = EvolveConfig(population=20, max_iterations=30, crossover_enabled=True, seed=0)
        gene, reward = search(SIZES, obj, cfg)
        assert reward == pytest.approx(float(obj(np.array([gene]))[0]))


class TestSearch:
    def test_zero_iterations_returns_initial_best(self):
        obj = separable_objective(SIZES, seed=1)
        cfg = EvolveConfig(population=10, max_iterations=0, seed=3)
        initial = np.random.default_rng(3).integers(0, SIZES, size=(10, 4))
        gene, reward = search(SIZES, obj, cfg)
        r = obj(initial)
        assert gene == tuple(int(v) for v in initial[np.argmax(r)])
        assert reward == r.max()

    def test_no_mutation_only_reselects(self):
        # copies compete with parents, so the population concentrates on the initial best
        obj = separable_objective(SIZES, seed=1)
        trace = []
        cfg = EvolveConfig(population=10, max_iterations=20, mutation_prob=0.0, seed=3)
        gene, _ = search(SIZES, obj, cfg, trace)
        initial = {tuple(int(v) for v in g) for g in np.random.default_rng(3).integers(0, SIZES, size=(10, 4))}
        assert gene in initial
        assert len({row["best_reward"] for row in trace}) == 1
        means = [row["mean_reward"] for row in trace]
        assert all(b >= a for a, b in zip(means, means[1:]))
        assert means[-1] == pytest.approx(trace[-1]["best_reward"])

    def test_elitism(self):
        obj = separable_objective(SIZES, seed=4)
        trace = []
        search(SIZES, obj, EvolveConfig(population=8, max_iterations=40, seed=0), trace)
        best = [row["best_reward"] for row in trace]
        assert len(trace) == 41
        assert all(b >= a for a, b in zip(best, best[1:]))

    def test_finds_oracle_optimum(self):
        obj = separable_objective(SIZES, seed=2)
        opt_gene, opt_val = oracle_exhaustive(SIZES, obj)
        gene, reward = search(SIZES, obj, EvolveConfig(population=30, max_iterations=100, seed=0))
        assert reward == pytest.approx(opt_val)

    def test_deterministic(self):
        obj = separable_objective(SIZES, seed=5)
        cfg = EvolveConfig(population=12, max_iterations=15, seed=9)
        t1, t2 = [], []
        assert search(SIZES, obj, cfg, t1) == search(SIZES, obj, cfg, t2)
        assert t1 == t2

    def test_model_with_predict(self):
        class Model:
            def predict(self, G):
                return -np.abs(G - 1).sum(axis=1).astype(float)

        gene, reward = search(SIZES, Model(), EvolveConfig(population=20, max_iterations=60))
        assert gene == (1, 1, 1, 1) and reward == 0.0

    @pytest.mark.parametrize("kw", [{"population": 0}, {"max_iterations": -1}, {"mutation_prob": 1.5}])
    def test_bad_config(self, kw):
        with pytest.raises(ValueError):
            EvolveConfig(**kw)

    def test_trace_csv(self, tmp_path):
        trace = []
        search(SIZES, separable_objective(SIZES, 0), EvolveConfig(population=4, max_iterations=3), trace)
        write_trace(tmp_path / "t.csv", trace)
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "iteration,best_reward,mean_reward,best_gene"
        assert len(lines) == 5

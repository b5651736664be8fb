import numpy as np
import pytest

from netsynth.bench import (CRITERIA, CriterionResult, SyntheticSurface, box_discrepancy,
                            criterion_quantization, doubled_step_quantizer, enumerate_space,
                            evolve_trials, oracle_exhaustive, quadratic_objective, run_acceptance,
                            separable_objective, sobol_dim1_reference, van_der_corput)


class TestOracle:
    def test_separable_8x8(self):
        f = separable_objective((8, 8), seed=0)
        G = enumerate_space((8, 8))
        vals = f(G).reshape(8, 8)
        gene, val = oracle_exhaustive((8, 8), f)
        assert gene == tuple(int(v) for v in np.unravel_index(np.argmax(vals), (8, 8)))
        assert val == vals.max()

    def test_tie_goes_to_smallest(self):
        gene, val = oracle_exhaustive((3, 3), lambda G: np.zeros(len(G)))
        assert gene == (0, 0) and val == 0.0

    def test_empty_space(self):
        with pytest.raises(ValueError, match="empty space"):
            enumerate_space((3, 0))
        with pytest.raises(ValueError, match="empty space"):
            enumerate_space(())

    def test_limit(self):
        with pytest.raises(ValueError, match="limit"):
            enumerate_space((100, 100))

    def test_enumeration_order(self):
        assert enumerate_space((2, 3)).tolist() == [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2]]

    def test_quadratic_interior_optimum(self):
        sizes = (9, 9, 9)
        gene, _ = oracle_exhaustive(sizes, quadratic_objective(sizes, seed=3))
        assert all(0 <= g < 9 for g in gene)

    def test_trial_spaces_enumerable(self):
        for sizes, _, _ in evolve_trials(8):
            enumerate_space(sizes)


class TestSurface:
    def test_pure(self):
        s = SyntheticSurface()
        genes = [r.gene for r in s.records(20, seed=1)]
        np.testing.assert_array_equal(s(genes, seed=1), s(genes, seed=1))
        # a gene's value does not depend on which other genes are evaluated with it
        np.testing.assert_array_equal(s(genes[:5], seed=1), s(genes, seed=1)[:5])

    def test_noise_seeded(self):
        s = SyntheticSurface()
        g = [r.gene for r in s.records(10)]
        assert not np.array_equal(s(g, seed=0), s(g, seed=1))
        np.testing.assert_array_equal(SyntheticSurface(noise=0)(g, 0), SyntheticSurface(noise=0)(g, 1))

    def test_range(self):
        vals = np.array([r.accuracy for r in SyntheticSurface().records(500)])
        assert vals.min() >= 0 and vals.max() <= 1
        assert vals.std() > 0.02  # signal well above the noise level

    def test_records_distinct(self):
        recs = SyntheticSurface(sizes=(2, 3, 3, 2)).records(18)
        assert len({r.gene for r in recs}) == 18

    def test_unknown_generator(self):
        with pytest.raises(ValueError):
            SyntheticSurface("wavy")


class TestReferences:
    def test_van_der_corput(self):
        assert [van_der_corput(i) for i in range(1, 8)] == [0.5, 0.25, 0.75, 0.125, 0.625, 0.375, 0.875]

    def test_gray_order(self):
        assert [sobol_dim1_reference(i) for i in range(1, 5)] == [0.5, 0.75, 0.25, 0.375]

    def test_discrepancy_of_grid(self):
        g = (np.arange(10) + 0.5) / 10
        pts = np.array([(x, y) for x in g for y in g])
        assert box_discrepancy(pts) == pytest.approx(0.0, abs=1e-12)
        assert box_discrepancy(np.zeros((10, 2))) == pytest.approx(0.99)


class TestHarness:
    def test_tampered_quantizer_fails(self):
        ok, detail, measured = criterion_quantization(doubled_step_quantizer)
        assert not ok
        assert measured["max_error_in_steps"] > 0.5

    def test_real_quantizer_passes(self):
        ok, _, measured = criterion_quantization()
        assert ok and measured["identity_32"]

    def test_fast_profile_skips_datasets(self):
        res = run_acceptance("fast", only=[7])
        assert res[0].status == "skip"

    def test_unknown_profile(self):
        with pytest.raises(ValueError):
            run_acceptance("slow")

    def test_result_line(self):
        r = CriterionResult(3, "Sobol quality", "pass", "fine", 1.25)
        assert r.line() == "criterion 3 [PASS] Sobol quality: fine (1.2s)"
        assert r.to_dict()["status"] == "pass"

    def test_catalogue(self):
        assert sorted(CRITERIA) == list(range(1, 10))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netsynth.nn import (Dataset, SparseNetwork, TrainConfig, TrainingDiverged, build_network,
                         evaluate, forward, gradient, predict, softmax, train)


def _naive_forward(net, X):
    """Straight-line reference: loop over neurons, sum over every incoming block."""
    acts = [np.asarray(X, dtype=np.float64)]
    L = net.n_layers
    for j in range(1, L):
        out = np.zeros((X.shape[0], net.layer_sizes[j]))
        for n in range(X.shape[0]):
            for u in range(net.layer_sizes[j]):
                s = net.biases[j - 1][u]
                for i in range(j):
                    for r in range(net.layer_sizes[i]):
                        if net.masks[(i, j)][r, u]:
                            s += acts[i][n, r] * net.weights[(i, j)][r, u]
                out[n, u] = s if j == L - 1 else max(s, 0.0)
        acts.append(out)
    z = acts[-1]
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _sparsify(net, rng, keep=0.6):
    for k in net.masks:
        net.masks[k] &= rng.random(net.masks[k].shape) < keep
        net.weights[k] *= net.masks[k]
    for b in net.biases:
        b[:] = rng.normal(0, 0.3, b.shape)
    return net


class TestBuild:
    def test_dense_adjacent_counts(self):
        net = build_network([2, 2, 1], "dense_adjacent")
        assert net.active_connections() == 6
        assert not net.masks[(0, 2)].any()

    def test_dense_all_pairs_counts(self):
        assert build_network([2, 2, 1], "dense_all_pairs").active_connections() == 8

    @pytest.mark.parametrize("sizes", [[5], [], [3, 0, 2]])
    def test_degenerate_layers(self, sizes):
        with pytest.raises(ValueError):
            build_network(sizes)

    def test_init_bound(self):
        net = build_network([50, 20, 3], seed=1)
        assert np.abs(net.weights[(0, 1)]).max() <= np.sqrt(6 / 50)
        assert np.abs(net.weights[(1, 2)]).max() <= np.sqrt(6 / 20)

    def test_serialization_roundtrip(self, tmp_path):
        net = _sparsify(build_network([4, 5, 3, 2], "dense_all_pairs", seed=3), np.random.default_rng(0))
        net.save(tmp_path / "n.json")
        back = SparseNetwork.load(tmp_path / "n.json")
        assert back.layer_sizes == net.layer_sizes
        for k in net.weights:
            np.testing.assert_array_equal(back.weights[k], net.weights[k])
            np.testing.assert_array_equal(back.masks[k], net.masks[k])
        X = np.random.default_rng(1).normal(size=(6, 4))
        np.testing.assert_array_equal(forward(back, X), forward(net, X))


class TestForward:
    def test_zero_weights_uniform(self):
        net = build_network([3, 4, 5])
        for k in net.weights:
            net.weights[k][:] = 0
        p = forward(net, np.random.default_rng(0).normal(size=(7, 3)), probabilities=True)
        np.testing.assert_allclose(p, 1 / 5)

    def test_identity_chain(self):
        # relu is the identity on positive inputs, so one unit-weight path copies the input
        net = build_network([1, 1, 1])
        net.weights[(0, 1)][:] = 1.0
        net.weights[(1, 2)][:] = 1.0
        x = np.array([[0.25], [3.0]])
        np.testing.assert_allclose(forward(net, x), x)

    def test_matches_naive(self):
        rng = np.random.default_rng(5)
        net = _sparsify(build_network([4, 6, 5, 3], "dense_all_pairs", seed=2), rng)
        X = rng.normal(size=(9, 4))
        np.testing.assert_allclose(forward(net, X, probabilities=True), _naive_forward(net, X), atol=1e-10)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            forward(build_network([3, 2, 2]), np.zeros((1, 4)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_softmax_rows_sum_to_one(self, seed):
        z = np.random.default_rng(seed).normal(0, 50, size=(5, 7))
        np.testing.assert_allclose(softmax(z).sum(axis=1), 1.0, atol=1e-6)


class TestEvaluate:
    def test_constant_class(self):
        net = build_network([2, 3, 3])
        for k in net.weights:
            net.weights[k][:] = 0
        net.biases[-1][:] = [0.0, 2.0, 0.0]
        ds = Dataset(np.ones((5, 2)), np.full(5, 1), 3)
        assert evaluate(net, ds) == 1.0

    def test_ties_go_to_lowest_class(self):
        net = build_network([2, 3, 4])
        for k in net.weights:
            net.weights[k][:] = 0
        ds = Dataset(np.random.default_rng(0).normal(size=(8, 2)), np.zeros(8, dtype=int), 4)
        assert evaluate(net, ds) == 1.0

    def test_matches_recount(self):
        rng = np.random.default_rng(11)
        net = build_network([6, 12, 10], seed=4)
        X = rng.normal(size=(100, 6))
        y = rng.integers(0, 10, 100)
        scores = forward(net, X)
        correct = 0
        for n in range(100):
            best = 0
            for c in range(10):
                if scores[n, c] > scores[n, best]:
                    best = c
            correct += best == y[n]
        assert evaluate(net, Dataset(X, y, 10)) == correct / 100


class TestGradient:
    def test_finite_differences(self):
        rng = np.random.default_rng(0)
        net = build_network([3, 4, 2], seed=0)
        for b in net.biases:
            b[:] = rng.normal(0, 0.3, b.shape)
        X, y = rng.normal(size=(6, 3)), rng.integers(0, 2, 6)
        g = gradient(net, X, y)
        h, worst = 1e-5, 0.0
        for k in net.active_blocks():
            for idx in np.ndindex(net.weights[k].shape):
                o = net.weights[k][idx]
                net.weights[k][idx] = o + h
                up = gradient(net, X, y).loss
                net.weights[k][idx] = o - h
                dn = gradient(net, X, y).loss
                net.weights[k][idx] = o
                fd = (up - dn) / (2 * h)
                worst = max(worst, abs(fd - g.weights[k][idx]) / max(abs(fd), abs(g.weights[k][idx]), 1e-6))
        assert worst < 1e-4

    def test_symmetric_coordinates(self):
        net = build_network([2, 2, 2])
        for k in net.weights:
            net.weights[k][:] = 0
        g = gradient(net, np.array([[1.0, 1.0]]), np.array([0]))
        assert g.biases[0][0] == g.biases[0][1]
        assert g.weights[(0, 1)][0, 0] == g.weights[(0, 1)][1, 0]

    def test_duplicated_row(self):
        net = build_network([3, 4, 2], seed=1)
        x, y = np.array([[0.3, -1.0, 2.0]]), np.array([1])
        a = gradient(net, x, y)
        b = gradient(net, np.vstack([x, x]), np.array([1, 1]))
        np.testing.assert_allclose(a.flat(), b.flat(), rtol=1e-12, atol=1e-15)

    def test_masked_entries_computed(self):
        net = build_network([3, 4, 2], seed=1)
        net.masks[(0, 1)][0, 0] = False
        net.weights[(0, 1)][0, 0] = 0.0
        g = gradient(net, np.array([[1.0, 1.0, 1.0]]), np.array([0]), blocks=[(0, 1), (1, 2), (0, 2)])
        assert (0, 2) in g.weights  # inactive block still scored for growth
        assert g.active().size == g.flat().size
        assert g.active().sum() == net.active_connections() + sum(b.size for b in net.biases)

    def test_accepts_dataset_and_tuple(self):
        net = build_network([3, 4, 2], seed=1)
        X, y = np.ones((2, 3)), np.array([0, 1])
        np.testing.assert_array_equal(gradient(net, Dataset(X, y, 2)).flat(), gradient(net, (X, y)).flat())


class TestTrain:
    XOR = Dataset(np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float), np.array([0, 1, 1, 0]), 2)

    def test_xor(self):
        net = build_network([2, 4, 2], seed=0)
        cfg = TrainConfig(epochs=500, batch_size=4, weight_decay=0.0, seed=0)
        best, acc = train(net, self.XOR, self.XOR, cfg)
        assert acc == 1.0
        assert np.array_equal(predict(best, self.XOR.features), self.XOR.labels)

    def test_zero_epochs_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)

    def test_empty_training_set(self):
        # emptiness is rejected when the split is built, before training can start
        with pytest.raises(ValueError, match="at least one row"):
            Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.normal(size=(60, 5)), rng.integers(0, 3, 60), 3)
        net = build_network([5, 8, 3], seed=2)
        a, acc_a = train(net, ds, ds, TrainConfig(epochs=5, seed=9))
        b, acc_b = train(net, ds, ds, TrainConfig(epochs=5, seed=9))
        assert acc_a == acc_b
        for k in a.weights:
            np.testing.assert_array_equal(a.weights[k], b.weights[k])

    def test_masks_respected(self):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.normal(size=(60, 5)), rng.integers(0, 3, 60), 3)
        net = _sparsify(build_network([5, 8, 6, 3], "dense_all_pairs", seed=2), rng)
        trained, _ = train(net, ds, ds, TrainConfig(epochs=3, optimizer="sgd_momentum"))
        trained.check_masks()
        assert trained.active_connections() == net.active_connections()

    def test_input_not_modified(self):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.normal(size=(30, 4)), rng.integers(0, 2, 30), 2)
        net = build_network([4, 5, 2], seed=2)
        before = net.copy()
        train(net, ds, ds, TrainConfig(epochs=2))
        for k in net.weights:
            np.testing.assert_array_equal(net.weights[k], before.weights[k])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises(self):
        ds = Dataset(np.array([[1e200, -1e200]] * 8), np.array([0, 1] * 4), 2)
        with pytest.raises(TrainingDiverged):
            train(build_network([2, 3, 2], seed=0), ds, ds, TrainConfig(epochs=2, learning_rate=1.0,
                                                                       optimizer="sgd_momentum"))

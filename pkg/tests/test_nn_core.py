import numpy as np
import pytest

from fedccea.datasets import LabeledDataset
from fedccea.nn_core import (
    MLPParams,
    MLPSpec,
    cross_entropy_loss,
    evaluate_accuracy,
    forward,
    init_mlp,
    loss_gradients,
    params_equal,
    sgd_train,
)
from fedccea.rng import RngStream


def make_dataset(rng, n, dim, classes):
    return LabeledDataset(rng.random((n, dim)), rng.integers(0, classes, n), classes)


def zero_params(spec):
    p = init_mlp(spec, RngStream(0))
    return MLPParams([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])


class TestSpecValidation:
    def test_too_short(self):
        with pytest.raises(ValueError):
            MLPSpec((4,))

    def test_nonpositive_size(self):
        with pytest.raises(ValueError):
            MLPSpec((4, 0, 2))

    def test_unknown_activation(self):
        with pytest.raises(ValueError):
            MLPSpec((4, 2), hidden_activation="tanh")


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_mlp(MLPSpec((2, 3, 2)), RngStream(7))
        b = init_mlp(MLPSpec((2, 3, 2)), RngStream(7))
        assert params_equal(a, b)

    def test_biases_zero(self):
        p = init_mlp(MLPSpec((5, 4, 3)), RngStream(3))
        assert all((b == 0).all() for b in p.biases)

    def test_different_seeds_differ(self):
        a = init_mlp(MLPSpec((4, 5)), RngStream(1))
        b = init_mlp(MLPSpec((4, 5)), RngStream(2))
        assert not np.array_equal(a.weights[0], b.weights[0])

    def test_glorot_bound(self):
        p = init_mlp(MLPSpec((10, 20)), RngStream(5))
        bound = np.sqrt(6.0 / 30.0)
        assert np.abs(p.weights[0]).max() <= bound


class TestForward:
    def test_zero_net_uniform_rows(self):
        p = zero_params(MLPSpec((4, 3, 5)))
        out = forward(p, np.arange(8.0).reshape(2, 4))
        assert np.allclose(out, 0.2)

    def test_identity_single_layer_argmax_tracks_input(self):
        # one linear layer with identity weights: softmax is monotone in logits,
        # so the argmax must follow the largest feature
        p = MLPParams([np.eye(3)], [np.zeros(3)])
        x = np.array([[0.2, 0.9, 0.1]])
        out = forward(p, x)
        assert out.argmax() == 1
        manual = np.exp(x[0]) / np.exp(x[0]).sum()
        assert np.allclose(out[0], manual)

    def test_rows_sum_to_one(self):
        rng = RngStream(11)
        p = init_mlp(MLPSpec((6, 8, 4)), rng)
        out = forward(p, rng.random((50, 6)))
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-9
        assert (out >= 0).all()

    def test_shape_mismatch(self):
        p = init_mlp(MLPSpec((6, 4)), RngStream(0))
        with pytest.raises(ValueError):
            forward(p, np.zeros((3, 5)))


def finite_difference_grads(params, X, y, eps=1e-5):
    """Central-difference gradient of the cross-entropy loss, entry by entry."""
    dws, dbs = [], []
    for arrs, grads in ((params.weights, dws), (params.biases, dbs)):
        for arr in arrs:
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + eps
                up = cross_entropy_loss(params, X, y)
                arr[idx] = orig - eps
                down = cross_entropy_loss(params, X, y)
                arr[idx] = orig
                g[idx] = (up - down) / (2 * eps)
            grads.append(g)
    return dws, dbs


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


class TestGradients:
    def test_backprop_matches_finite_differences(self):
        rng = RngStream(1234)
        p = init_mlp(MLPSpec((5, 7, 4, 3)), rng)
        X = rng.random((10, 5))
        y = rng.integers(0, 3, 10)
        _, dws, dbs = loss_gradients(p, X, y)
        fd_w, fd_b = finite_difference_grads(p, X, y)
        assert max_rel_error(dws, fd_w) < 1e-4
        assert max_rel_error(dbs, fd_b) < 1e-4


class TestSgdTrain:
    def test_empty_dataset_rejected(self):
        p = init_mlp(MLPSpec((2, 2)), RngStream(0))
        empty = LabeledDataset(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), 2)
        with pytest.raises(ValueError):
            sgd_train(p, empty, 1, 4, 0.1)

    def test_zero_epochs_rejected(self):
        rng = RngStream(0)
        p = init_mlp(MLPSpec((2, 2)), rng)
        data = make_dataset(rng, 10, 2, 2)
        with pytest.raises(ValueError):
            sgd_train(p, data, 0, 4, 0.1)

    def test_lr_zero_is_identity(self):
        rng = RngStream(8)
        p = init_mlp(MLPSpec((3, 4, 2)), rng)
        data = make_dataset(rng, 12, 3, 2)
        out = sgd_train(p, data, 3, 4, 0.0)
        assert params_equal(out, p)

    def test_input_params_not_mutated(self):
        rng = RngStream(8)
        p = init_mlp(MLPSpec((3, 4, 2)), rng)
        snapshot = p.copy()
        data = make_dataset(rng, 12, 3, 2)
        sgd_train(p, data, 2, 4, 0.5)
        assert params_equal(p, snapshot)

    def test_learns_separable_blobs(self):
        # two well-separated 2-D blobs, 200 samples; 50 single-epoch calls
        rng = RngStream(21)
        a = rng.normal(0.25, 0.05, (100, 2))
        b = rng.normal(0.75, 0.05, (100, 2))
        feats = np.clip(np.concatenate([a, b]), 0, 1)
        labels = np.array([0] * 100 + [1] * 100, dtype=np.int64)
        order = rng.permutation(200)
        data = LabeledDataset(feats[order], labels[order], 2)
        params = init_mlp(MLPSpec((2, 8, 2)), RngStream(3))
        for _ in range(50):
            params = sgd_train(params, data, 1, 32, 0.1)
        assert evaluate_accuracy(params, data) >= 0.95

    def test_deterministic(self):
        rng = RngStream(5)
        data = make_dataset(rng, 30, 4, 3)
        p = init_mlp(MLPSpec((4, 6, 3)), RngStream(9))
        out1 = sgd_train(p, data, 2, 8, 0.05)
        out2 = sgd_train(p, data, 2, 8, 0.05)
        assert params_equal(out1, out2)


class TestEvaluateAccuracy:
    def test_perfect_predictor(self):
        # one-layer net with huge diagonal sends each one-hot feature to its class
        p = MLPParams([np.eye(3) * 100.0], [np.zeros(3)])
        data = LabeledDataset(np.eye(3), np.arange(3), 3)
        assert evaluate_accuracy(p, data) == 1.0

    def test_zero_net_balanced_ties_to_class_zero(self):
        classes = 4
        p = zero_params(MLPSpec((5, classes)))
        rng = RngStream(2)
        feats = rng.random((40, 5))
        labels = np.tile(np.arange(classes), 10)
        data = LabeledDataset(feats, labels, classes)
        assert evaluate_accuracy(p, data) == 1.0 / classes

    def test_matches_brute_force_recount(self):
        rng = RngStream(77)
        p = init_mlp(MLPSpec((6, 5, 4)), rng)
        data = make_dataset(rng, 60, 6, 4)
        probs = forward(p, data.features)
        correct = sum(
            int(int(np.argmax(probs[i])) == int(data.labels[i])) for i in range(len(data))
        )
        assert evaluate_accuracy(p, data) == correct / len(data)

    def test_empty_test_rejected(self):
        p = init_mlp(MLPSpec((2, 2)), RngStream(0))
        empty = LabeledDataset(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), 2)
        with pytest.raises(ValueError):
            evaluate_accuracy(p, empty)


class TestRngStream:
    def test_same_seed_same_draws(self):
        assert np.array_equal(RngStream(42).random(10), RngStream(42).random(10))

    def test_children_independent_of_siblings(self):
        base = RngStream(9)
        c1 = base.child(1).random(5)
        base2 = RngStream(9)
        base2.child(2).random(100)  # consuming a sibling must not affect child 1
        assert np.array_equal(c1, base2.child(1).random(5))

    def test_seed_range_validation(self):
        with pytest.raises(ValueError):
            RngStream(-1)
        with pytest.raises(ValueError):
            RngStream(2**64)

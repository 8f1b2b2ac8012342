import numpy as np
import pytest

from fedccea.datasets import PartitionSpec, generate_synthetic, partition
from fedccea.errors import DegenerateRoundError
from fedccea.fl_engine import (
    FLConfig,
    fed_avg,
    local_update,
    run_round,
    train_federated,
)
from fedccea.nn_core import MLPParams, MLPSpec, evaluate_accuracy, init_mlp, params_equal, sgd_train
from fedccea.rng import RngStream


def constant_params(spec, value):
    p = init_mlp(spec, RngStream(0))
    return MLPParams(
        [np.full_like(w, value) for w in p.weights],
        [np.full_like(b, value) for b in p.biases],
    )


@pytest.fixture(scope="module")
def problem():
    data = generate_synthetic(4, 60, 6, 0.1, seed=50)
    train = data.prefix(4 * 50)
    test = data.subset(np.arange(4 * 50, len(data)))
    parts = partition(train, PartitionSpec(4, None, 40, seed=51))
    cfg = FLConfig(4, 3, 2, 16, 0.1, MLPSpec((6, 8, 4)), seed=52)
    return parts, test, cfg


class TestFLConfig:
    def test_invariants(self):
        spec = MLPSpec((2, 2))
        with pytest.raises(ValueError):
            FLConfig(1, 3, 1, 1, 0.1, spec, 0)
        with pytest.raises(ValueError):
            FLConfig(2, 0, 1, 1, 0.1, spec, 0)
        with pytest.raises(ValueError):
            FLConfig(2, 3, 1, 1, 0.0, spec, 0)


class TestLocalUpdate:
    def test_zero_size_returns_global_bitwise(self, problem):
        parts, _, cfg = problem
        g = init_mlp(cfg.model_spec, RngStream(1))
        out = local_update(g, parts[0], 0, cfg)
        assert params_equal(out, g)

    def test_full_size_delegates_to_sgd(self, problem):
        parts, _, cfg = problem
        g = init_mlp(cfg.model_spec, RngStream(1))
        via_engine = local_update(g, parts[0], len(parts[0].dataset), cfg)
        direct = sgd_train(g, parts[0].dataset, cfg.local_epochs, cfg.batch_size, cfg.lr)
        assert params_equal(via_engine, direct)

    def test_prefix_subset_used(self, problem):
        parts, _, cfg = problem
        g = init_mlp(cfg.model_spec, RngStream(1))
        d = 10
        via_engine = local_update(g, parts[0], d, cfg)
        direct = sgd_train(g, parts[0].dataset.prefix(d), cfg.local_epochs, cfg.batch_size, cfg.lr)
        assert params_equal(via_engine, direct)

    def test_oversize_rejected(self, problem):
        parts, _, cfg = problem
        g = init_mlp(cfg.model_spec, RngStream(1))
        with pytest.raises(ValueError):
            local_update(g, parts[0], len(parts[0].dataset) + 1, cfg)

    def test_deterministic(self, problem):
        parts, _, cfg = problem
        g = init_mlp(cfg.model_spec, RngStream(1))
        a = local_update(g, parts[1], 17, cfg)
        b = local_update(g, parts[1], 17, cfg)
        assert params_equal(a, b)


class TestFedAvg:
    def test_equal_weights_average(self):
        spec = MLPSpec((3, 2))
        agg = fed_avg([constant_params(spec, 0.0), constant_params(spec, 2.0)], [1, 1])
        assert np.allclose(agg.weights[0], 1.0)

    def test_weighted_mean_hand_evaluated(self):
        # (1/4)*0 + (3/4)*4 = 3
        spec = MLPSpec((3, 2))
        agg = fed_avg([constant_params(spec, 0.0), constant_params(spec, 4.0)], [1, 3])
        assert np.allclose(agg.weights[0], 3.0)
        assert np.allclose(agg.biases[0], 3.0)

    def test_zero_weight_client_excluded(self):
        spec = MLPSpec((3, 2))
        a, b = constant_params(spec, 5.0), constant_params(spec, -7.0)
        agg = fed_avg([a, b], [5, 0])
        assert params_equal(agg, a)

    def test_all_zero_sizes_degenerate(self):
        spec = MLPSpec((3, 2))
        with pytest.raises(DegenerateRoundError):
            fed_avg([constant_params(spec, 1.0)], [0])

    def test_length_mismatch(self):
        spec = MLPSpec((3, 2))
        with pytest.raises(ValueError):
            fed_avg([constant_params(spec, 1.0)], [1, 2])

    def test_brute_force_oracle_on_random_fixtures(self):
        rng = RngStream(99)
        spec = MLPSpec((4, 5, 3))
        for trial in range(100):
            k = int(rng.integers(2, 6))
            locals_ = []
            for j in range(k):
                p = init_mlp(spec, RngStream(1000 + trial * 10 + j))
                locals_.append(p)
            d = rng.integers(0, 50, k)
            if d.sum() == 0:
                d[0] = 1
            agg = fed_avg(locals_, d)
            w = d / d.sum()
            for layer in range(len(agg.weights)):
                expect = sum(w[j] * locals_[j].weights[layer] for j in range(k))
                assert np.abs(agg.weights[layer] - expect).max() < 1e-12

    def test_permutation_equivariance_and_zero_neutrality(self):
        rng = RngStream(7)
        spec = MLPSpec((3, 4, 2))
        locals_ = [init_mlp(spec, RngStream(i)) for i in range(4)]
        d = [3, 1, 4, 2]
        base = fed_avg(locals_, d)
        perm = [2, 0, 3, 1]
        permuted = fed_avg([locals_[i] for i in perm], [d[i] for i in perm])
        for la, lb in zip(base.weights, permuted.weights):
            assert np.abs(la - lb).max() < 1e-12
        extra = fed_avg(locals_ + [init_mlp(spec, RngStream(9))], d + [0])
        for la, lb in zip(base.weights, extra.weights):
            assert np.abs(la - lb).max() < 1e-12

    def test_linearity_and_convex_hull(self):
        rng = RngStream(13)
        spec = MLPSpec((3, 3))
        locals_ = [init_mlp(spec, RngStream(20 + i)) for i in range(3)]
        d = [2, 5, 3]
        agg = fed_avg(locals_, d)
        scaled = fed_avg(
            [MLPParams([3.0 * w for w in p.weights], [3.0 * b for b in p.biases]) for p in locals_],
            d,
        )
        assert np.abs(scaled.weights[0] - 3.0 * agg.weights[0]).max() < 1e-12
        stack = np.stack([p.weights[0] for p in locals_])
        assert (agg.weights[0] >= stack.min(axis=0) - 1e-15).all()
        assert (agg.weights[0] <= stack.max(axis=0) + 1e-15).all()


class TestRunRound:
    def test_symmetric_clients_agree_with_local(self, problem):
        parts, test, cfg = problem
        g = init_mlp(cfg.model_spec, RngStream(2))
        twin = [parts[0], parts[0]]
        outcome = run_round(g, twin, [20, 20], test, cfg)
        single = local_update(g, parts[0], 20, cfg)
        assert params_equal(outcome.global_params, single)

    def test_accuracy_in_range(self, problem):
        parts, test, cfg = problem
        g = init_mlp(cfg.model_spec, RngStream(2))
        outcome = run_round(g, parts, [10, 20, 30, 40], test, cfg)
        assert 0.0 <= outcome.accuracy <= 1.0

    def test_compositional_oracle(self, problem):
        parts, test, cfg = problem
        g = init_mlp(cfg.model_spec, RngStream(2))
        d = [5, 0, 25, 40]
        outcome = run_round(g, parts, d, test, cfg)
        locals_ = [local_update(g, p, di, cfg) for p, di in zip(parts, d)]
        manual = fed_avg(locals_, d)
        assert params_equal(outcome.global_params, manual)
        assert outcome.accuracy == evaluate_accuracy(manual, test)

    def test_all_zero_round_carries_global(self, problem):
        parts, test, cfg = problem
        g = init_mlp(cfg.model_spec, RngStream(2))
        outcome = run_round(g, parts, [0, 0, 0, 0], test, cfg)
        assert params_equal(outcome.global_params, g)
        assert outcome.accuracy == evaluate_accuracy(g, test)


class TestTrainFederated:
    def test_single_round_equals_run_round(self, problem):
        parts, test, cfg = problem
        one_round = FLConfig(cfg.n_clients, 1, cfg.local_epochs, cfg.batch_size, cfg.lr,
                             cfg.model_spec, cfg.seed)
        result = train_federated(parts, None, test, one_round)
        fresh = init_mlp(cfg.model_spec, RngStream(cfg.seed))
        outcome = run_round(fresh, parts, [len(p.dataset) for p in parts], test, one_round)
        assert result.accuracies == (outcome.accuracy,)
        assert params_equal(result.final_params, outcome.global_params)

    def test_deterministic_trace(self, problem):
        parts, test, cfg = problem
        a = train_federated(parts, None, test, cfg)
        b = train_federated(parts, None, test, cfg)
        assert a.accuracies == b.accuracies

    def test_schedule_validation(self, problem):
        parts, test, cfg = problem
        with pytest.raises(ValueError):
            train_federated(parts, [[1, 2, 3, 4]], test, cfg)  # wrong round count
        with pytest.raises(ValueError):
            train_federated(parts, [[1, 2]] * cfg.rounds, test, cfg)  # wrong width

    def test_full_schedule_matches_explicit(self, problem):
        parts, test, cfg = problem
        full = [[len(p.dataset) for p in parts]] * cfg.rounds
        assert train_federated(parts, None, test, cfg).accuracies == \
            train_federated(parts, full, test, cfg).accuracies

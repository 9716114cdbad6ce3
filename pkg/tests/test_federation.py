import numpy as np
import pytest

from conftest import SMALL_ARCH, sine_partitions
from fedad.compression import CompressorConfig, SparseUpdate, broadcast_size, encoded_size, keep_count
from fedad.exceptions import EmptyPartition, LengthMismatch, MixedRounds
from fedad.federation import (
    Aggregator,
    EdgeNode,
    FederationConfig,
    aggregate,
    build_nodes,
    local_train,
    node_rng,
    run_round,
    run_training,
    sample_batch,
)
from fedad.model import network
from fedad.model.params import ArchConfig, ParameterSet, init_params, param_count
from fedad.timeseries import NodePartition, stack_windows


def _cfg(**kw):
    comp = kw.pop("compressor", CompressorConfig(rho=100, momentum=0.0, clip_norm=None))
    base = dict(n_nodes=2, eta=0.1, rounds=5, batch_size=16, seed=0, compressor=comp)
    base.update(kw)
    return FederationConfig(**base)


TINY_ARCH = ArchConfig(input_dims=1, window=1, cnn_layers=((1, 1),), pool_widths=(1,), attention=False, lstm_hidden=1)


class TestLocalTrain:
    def test_zero_gradient_at_fixed_point(self):
        (p,) = sine_partitions(1)
        # constant target equal to the output bias is a minimum of the loss
        for w in p.train:
            w.horizon[...] = 0.25
        params = ParameterSet(SMALL_ARCH)
        params["out.bias"][...] = 0.25
        node = EdgeNode(0, p, SMALL_ARCH, seed=0)
        grad, loss = local_train(node, params, _cfg())
        assert loss == 0.0
        assert not grad.any()

    def test_deterministic(self):
        (p,) = sine_partitions(1)
        params = init_params(SMALL_ARCH, 1)
        g1, _ = local_train(EdgeNode(0, p, SMALL_ARCH, 7), params, _cfg())
        g2, _ = local_train(EdgeNode(0, p, SMALL_ARCH, 7), params, _cfg())
        np.testing.assert_array_equal(g1, g2)

    def test_single_window_equals_backward(self):
        (p,) = sine_partitions(1)
        one = NodePartition(0, p.train[:1], [], [])
        params = init_params(SMALL_ARCH, 2)
        grad, loss = local_train(EdgeNode(0, one, SMALL_ARCH, 0), params, _cfg())
        x, y = stack_windows(one.train)
        ref_loss, ref_grad = network.loss_and_grad(x, y, params)
        np.testing.assert_array_equal(grad, ref_grad)
        assert loss == ref_loss

    def test_global_params_untouched(self):
        (p,) = sine_partitions(1)
        params = init_params(SMALL_ARCH, 3)
        before = params.flatten()
        local_train(EdgeNode(0, p, SMALL_ARCH, 0), params, _cfg(local_steps=3))
        np.testing.assert_array_equal(params.flat, before)

    def test_empty_partition(self):
        node = EdgeNode(0, NodePartition(0, [], [], []), SMALL_ARCH, 0)
        with pytest.raises(EmptyPartition):
            local_train(node, init_params(SMALL_ARCH), _cfg())

    def test_batch_sampler(self):
        idx = sample_batch(node_rng(0, 0), 10, 128)
        assert sorted(idx.tolist()) == list(range(10))
        idx = sample_batch(node_rng(0, 0), 100, 8)
        assert len(set(idx.tolist())) == 8


def _params(values):
    return ParameterSet(TINY_ARCH, np.asarray(values, dtype=float))


class TestAggregate:
    def test_example(self):
        L = param_count(TINY_ARCH)
        w = _params(np.ones(L))
        ups = [
            SparseUpdate(0, 0, L, np.array([0]), np.array([2.0])),
            SparseUpdate(0, 1, L, np.array([1]), np.array([4.0])),
        ]
        out = aggregate(ups, w, eta=0.5)
        np.testing.assert_array_equal(out.flat, [0.5, 0.0] + [1.0] * (L - 2))

    def test_single_node(self):
        L = param_count(TINY_ARCH)
        w = _params(np.zeros(L))
        out = aggregate([SparseUpdate(0, 0, L, np.array([0]), np.array([1.0]))], w, eta=0.1)
        assert out.flat[0] == pytest.approx(-0.1)

    def test_empty(self):
        with pytest.raises(MixedRounds):
            aggregate([], _params(np.zeros(param_count(TINY_ARCH))), 0.1)

    def test_mixed_rounds(self):
        L = param_count(TINY_ARCH)
        ups = [SparseUpdate(r, r, L, np.array([0]), np.array([1.0])) for r in (0, 1)]
        with pytest.raises(MixedRounds):
            aggregate(ups, _params(np.zeros(param_count(TINY_ARCH))), 0.1)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            aggregate([SparseUpdate(0, 0, 3, np.array([0]), np.array([1.0]))], _params(np.zeros(param_count(TINY_ARCH))), 0.1)


class TestRunRound:
    def test_dense_bytes(self):
        parts = sine_partitions(3)
        nodes = build_nodes(parts, SMALL_ARCH, _cfg(n_nodes=3))
        agg = Aggregator(init_params(SMALL_ARCH))
        report = run_round(nodes, agg, _cfg(n_nodes=3))
        L = param_count(SMALL_ARCH)
        assert report.uplink_bytes == 3 * (16 + 12 * L)
        assert report.downlink_bytes == 3 * broadcast_size(L) == 3 * (16 + 8 * L)
        assert report.entries_sent == 3 * L
        assert agg.round == 1 and agg.total_uplink == report.uplink_bytes

    def test_sparse_entries(self):
        parts = sine_partitions(2)
        cfg = _cfg(compressor=CompressorConfig(rho=1))
        nodes = build_nodes(parts, SMALL_ARCH, cfg)
        report = run_round(nodes, Aggregator(init_params(SMALL_ARCH)), cfg)
        k = keep_count(param_count(SMALL_ARCH), 1)
        assert report.entries_sent == 2 * k
        assert report.uplink_bytes == 2 * encoded_size(k)

    def test_broadcast_reaches_every_node(self):
        parts = sine_partitions(3)
        nodes = build_nodes(parts, SMALL_ARCH, _cfg(n_nodes=3))
        agg = Aggregator(init_params(SMALL_ARCH))
        run_round(nodes, agg, _cfg(n_nodes=3))
        for n in nodes:
            assert n.params == agg.params
            assert n.params is not agg.params

    def test_on_update_sees_every_upload(self):
        parts = sine_partitions(2)
        seen = []
        nodes = build_nodes(parts, SMALL_ARCH, _cfg())
        report = run_round(nodes, Aggregator(init_params(SMALL_ARCH)), _cfg(), on_update=seen.append)
        assert sorted(u.node_id for u in seen) == [0, 1]
        assert sum(len(u.encode()) for u in seen) == report.uplink_bytes


class TestRunTraining:
    def test_deterministic(self):
        parts = sine_partitions(2)
        cfg = _cfg(compressor=CompressorConfig(rho=10))
        a, ra = run_training(parts, SMALL_ARCH, cfg)
        b, rb = run_training(parts, SMALL_ARCH, cfg)
        assert a == b
        assert [r.loss for r in ra] == [r.loss for r in rb]

    def test_single_round_composition(self):
        parts = sine_partitions(2)
        cfg = _cfg(rounds=1)
        params = init_params(SMALL_ARCH, 5)
        out, _ = run_training(parts, SMALL_ARCH, cfg, params=params)
        grads = []
        for p in parts:
            x, y = stack_windows(p.train)
            idx = sample_batch(node_rng(0, p.node_id), len(x), cfg.batch_size)
            grads.append(network.loss_and_grad(x[idx], y[idx], params)[1])
        expected = params.flat - cfg.eta * (np.sum(grads, axis=0) / 2)
        np.testing.assert_array_equal(out.flat, expected)

    def test_single_node_matches_sgd(self):
        (p,) = sine_partitions(1)
        cfg = _cfg(n_nodes=1, rounds=40, eta=0.5)
        out, _ = run_training([p], SMALL_ARCH, cfg)
        w = init_params(SMALL_ARCH, 0)
        x, y = stack_windows(p.train)
        rng = node_rng(0, 0)
        for _ in range(40):
            idx = sample_batch(rng, len(x), cfg.batch_size)
            w = w.with_flat(w.flat - cfg.eta * network.loss_and_grad(x[idx], y[idx], w)[1])
        assert np.max(np.abs(out.flat - w.flat)) <= 1e-12

    @pytest.mark.parametrize("m", [0.0, 0.9])
    def test_dense_is_momentum_sgd(self, m):
        parts = sine_partitions(2)
        cfg = _cfg(rounds=20, compressor=CompressorConfig(rho=100, momentum=m, clip_norm=None))
        out, _ = run_training(parts, SMALL_ARCH, cfg)
        w = init_params(SMALL_ARCH, 0)
        data = [stack_windows(p.train) for p in parts]
        rngs = [node_rng(0, p.node_id) for p in parts]
        vel = [np.zeros(len(w)) for _ in parts]
        for _ in range(20):
            for i, (x, y) in enumerate(data):
                idx = sample_batch(rngs[i], len(x), cfg.batch_size)
                vel[i] = m * vel[i] + network.loss_and_grad(x[idx], y[idx], w)[1]
            w = w.with_flat(w.flat - cfg.eta * (np.sum(vel, axis=0) / 2))
        np.testing.assert_array_equal(out.flat, w.flat)

    def test_loss_decreases(self):
        parts = sine_partitions(2, n_points=400)
        cfg = _cfg(rounds=120, eta=1.0, compressor=CompressorConfig(rho=10, momentum=0.9, clip_norm=1.0))
        _, reports = run_training(parts, SMALL_ARCH, cfg)
        losses = np.array([r.loss for r in reports])
        assert losses[-20:].mean() < 0.5 * losses[:5].mean()

    def test_bytes_monotone_in_rho(self):
        parts = sine_partitions(2)
        totals = []
        for rho in (1, 10, 50, 100):
            cfg = _cfg(rounds=3, compressor=CompressorConfig(rho=rho))
            _, reports = run_training(parts, SMALL_ARCH, cfg)
            totals.append(sum(r.uplink_bytes for r in reports))
        assert totals == sorted(totals) and len(set(totals)) == 4

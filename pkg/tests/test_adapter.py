import math
from dataclasses import replace

import numpy as np
import pytest

from retroknn.adapter import (
    AdapterFusion,
    adapter_forward,
    adapter_neighbors,
    adapter_shapes,
    context_loss,
    context_loss_and_grads,
    contexts_loss,
    gin_forward,
    gin_layer,
    init_adapter,
    load_adapter,
    save_adapter,
    train_adapter,
    zero_adapter,
)
from retroknn.config import derive_rng
from retroknn.errors import ConfigurationError, FormatError, TrainingError
from retroknn.harness import bench_latency
from retroknn.optim import Adam
from retroknn.retrieve import FixedFusion, predict_topk

H = 8
K = 4


def _perturbed(params, name, idx, delta):
    tensors = {k: v.copy() for k, v in params.tensors.items()}
    tensors[name][idx] += delta
    return params.with_tensors(tensors)


class TestForward:
    def test_zero_parameters(self):
        params = zero_adapter(H, K)
        assert adapter_forward("atom", np.ones(H), np.arange(K, dtype=float), params) == (1.0, 0.5)
        assert adapter_forward("bond", (np.ones(H), -np.ones(H)), np.zeros(K), params) == (1.0, 0.5)

    @pytest.mark.parametrize("bias, expected", [(1000.0, 100.0), (-1000.0, 1.0), (37.5, 37.5)])
    def test_temperature_clamp(self, bias, expected):
        params = zero_adapter(H, K)
        params.tensors["b_ta"][:] = bias
        temperature, _ = adapter_forward("atom", np.ones(H), np.zeros(K), params)
        assert temperature == expected

    @pytest.mark.parametrize("bias, expected", [(1000.0, 1.0), (-1000.0, 0.0)])
    def test_lambda_saturates(self, bias, expected):
        params = zero_adapter(H, K)
        params.tensors["b_lb"][:] = bias
        _, lam = adapter_forward("bond", (np.ones(H), np.ones(H)), np.zeros(K), params)
        assert lam == pytest.approx(expected, abs=1e-12)

    def test_disabled_heads_use_fixed_values(self):
        params = init_adapter(H, K, np.random.default_rng(0), adapt_temperature=False, adapt_lambda=False,
                              fixed_temperature=7.0, fixed_lambda=0.2)
        assert adapter_forward("atom", np.ones(H), np.zeros(K), params) == (7.0, 0.2)

    def test_wrong_neighbor_count(self):
        with pytest.raises(ConfigurationError):
            adapter_forward("atom", np.ones(H), np.zeros(K + 1), zero_adapter(H, K))

    def test_wrong_state_width(self):
        with pytest.raises(ConfigurationError):
            adapter_forward("bond", np.ones(H), np.zeros(K), zero_adapter(H, K))

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            adapter_forward("ring", np.ones(H), np.zeros(K), zero_adapter(H, K))

    def test_site_parameters_in_range(self, val_contexts):
        params = init_adapter(H, K, np.random.default_rng(1))
        for ctx in val_contexts[:4]:
            sp = AdapterFusion(params).site_parameters(ctx)
            assert sp.atom_temperature.shape == (ctx.record.n_nodes,)
            assert sp.bond_lambda.shape == (ctx.record.n_edges,)
            for t in (sp.atom_temperature, sp.bond_temperature):
                assert np.all((t >= 1.0) & (t <= 100.0))
            for lam in (sp.atom_lambda, sp.bond_lambda):
                assert np.all((lam >= 0.0) & (lam <= 1.0))


class TestGin:
    def _identity(self):
        params = zero_adapter(2, 1)
        params.tensors["W_vg"][:] = np.eye(2)
        return params

    def test_isolated_node(self):
        np.testing.assert_array_equal(gin_forward(np.array([1.0, -2.0]), [], self._identity()), [1.0, -2.0])

    def test_negative_messages_vanish(self):
        out = gin_forward(np.array([1.0, -2.0]), [(None, np.array([-5.0, -5.0]))], self._identity())
        np.testing.assert_array_equal(out, [1.0, -2.0])

    def test_epsilon_scales_self_term(self):
        params = self._identity()
        params.tensors["eps"][:] = 0.5
        out = gin_forward(np.array([2.0, 0.0]), [(None, np.array([1.0, 1.0]))], params)
        np.testing.assert_allclose(out, [3.0 + 3.0, 1.0])

    def test_layer_matches_single_node(self, val_contexts):
        params = init_adapter(H, K, np.random.default_rng(2))
        ctx = val_contexts[0]
        h, h_e = ctx.emb.node_embeddings, ctx.emb.edge_embeddings
        layer = gin_layer(h, h_e, ctx.record.edge_index, params)
        for v in range(ctx.record.n_nodes):
            incident = [(None, h_e[i]) for i, (a, b, _) in enumerate(ctx.record.edges) if v in (a, b)]
            np.testing.assert_allclose(layer[v], gin_forward(h[v], incident, params), rtol=1e-12, atol=1e-12)


class TestGradients:
    def test_match_finite_differences(self, val_contexts):
        params = init_adapter(H, K, np.random.default_rng(3))
        ctx = next(c for c in val_contexts if c.record.n_edges >= 2)
        loss, grads = context_loss_and_grads(ctx, params)
        assert loss == pytest.approx(context_loss(ctx, params))
        rng = np.random.default_rng(4)
        h = 1e-6
        for name, shape in adapter_shapes(H, K).items():
            size = int(np.prod(shape))
            for flat in rng.choice(size, size=min(3, size), replace=False):
                idx = np.unravel_index(flat, shape)
                up = context_loss(ctx, _perturbed(params, name, idx, h))
                down = context_loss(ctx, _perturbed(params, name, idx, -h))
                np.testing.assert_allclose(grads[name][idx], (up - down) / (2 * h), rtol=1e-4, atol=1e-7,
                                           err_msg=name)

    def test_saturated_temperature_gets_no_gradient(self, val_contexts):
        params = init_adapter(H, K, np.random.default_rng(3))
        params.tensors["b_ta"][:] = 1000.0
        _, grads = context_loss_and_grads(val_contexts[0], params)
        np.testing.assert_array_equal(grads["W_ta"], 0.0)
        np.testing.assert_array_equal(grads["b_ta"], 0.0)

    def test_disabled_heads_get_no_gradient(self, val_contexts):
        params = init_adapter(H, K, np.random.default_rng(3), adapt_temperature=False, adapt_lambda=False)
        _, grads = context_loss_and_grads(val_contexts[0], params)
        for name in params.frozen:
            np.testing.assert_array_equal(grads[name], 0.0)

    def test_frozen_names(self):
        params = zero_adapter(H, K, adapt_lambda=False)
        assert params.frozen == {"W_la", "b_la", "W_lb", "b_lb"}
        assert zero_adapter(H, K).frozen == frozenset()


def test_adam_skips_frozen():
    params = {"a": np.ones(2), "b": np.ones(2)}
    Adam(lr=0.1).step(params, {"a": np.ones(2), "b": np.ones(2)}, frozen=frozenset({"b"}))
    np.testing.assert_allclose(params["a"], 0.9)
    np.testing.assert_array_equal(params["b"], 1.0)


def test_adam_minimizes_quadratic():
    params = {"x": np.array([3.0, -2.0])}
    opt = Adam(lr=0.1)
    for _ in range(500):
        opt.step(params, {"x": 2.0 * params["x"]})
    np.testing.assert_allclose(params["x"], 0.0, atol=0.05)


def test_neighbor_count_capped_by_store(stores):
    atom, bond = stores
    assert adapter_neighbors(4, atom, bond) == 4
    assert adapter_neighbors(10**9, atom, bond) == min(len(atom), len(bond))


class TestTraining:
    def test_keeps_lowest_loss(self, val_set, backbone, stores, val_contexts, small_cfg):
        atom, bond = stores
        history = []
        params = train_adapter(val_set, backbone, atom, bond, small_cfg, history, contexts=val_contexts)
        assert [h.epoch for h in history] == [0, 1, 2]
        assert params.is_finite()
        assert contexts_loss(val_contexts, params) == pytest.approx(min(h.val_loss for h in history))
        assert contexts_loss(val_contexts, params) <= history[0].val_loss

    def test_seeded(self, val_set, backbone, stores, val_contexts, small_cfg):
        atom, bond = stores
        a = train_adapter(val_set, backbone, atom, bond, small_cfg, contexts=val_contexts)
        b = train_adapter(val_set, backbone, atom, bond, small_cfg, contexts=val_contexts)
        for name in a.names():
            np.testing.assert_array_equal(a[name], b[name])

    def test_frozen_heads_keep_initial_values(self, val_set, backbone, stores, val_contexts, small_cfg):
        atom, bond = stores
        small_cfg.adapter.adapt_lambda = False
        params = train_adapter(val_set, backbone, atom, bond, small_cfg, contexts=val_contexts)
        initial = init_adapter(H, K, derive_rng(small_cfg.seed, "adapter-init"), small_cfg.adapter.init_temperature)
        for name in ("W_la", "b_la", "W_lb", "b_lb"):
            np.testing.assert_array_equal(params[name], initial[name])

    def test_retrieves_when_no_contexts_given(self, val_set, backbone, stores, small_cfg):
        atom, bond = stores
        small_cfg.adapter.epochs = 1
        params = train_adapter(val_set.subset(range(3)), backbone, atom, bond, small_cfg)
        assert params.k == K and params.hidden == H

    def test_empty_validation_set(self, val_set, backbone, stores, small_cfg):
        atom, bond = stores
        with pytest.raises(TrainingError):
            train_adapter(val_set.with_records([]), backbone, atom, bond, small_cfg)


class TestCheckpoint:
    def test_save_load(self, tmp_path):
        params = init_adapter(H, K, np.random.default_rng(5), adapt_temperature=False, fixed_temperature=12.5)
        save_adapter(params, tmp_path / "adapter.rkad")
        loaded = load_adapter(tmp_path / "adapter.rkad")
        assert (loaded.hidden, loaded.k, loaded.adapt_temperature, loaded.adapt_lambda) == (H, K, False, True)
        assert loaded.fixed_temperature == 12.5
        for name in params.names():
            np.testing.assert_array_equal(loaded[name], params[name])

    def test_truncated(self, tmp_path):
        path = tmp_path / "adapter.rkad"
        save_adapter(zero_adapter(H, K), path)
        path.write_bytes(path.read_bytes()[:40])
        with pytest.raises(FormatError):
            load_adapter(path)


def _scalar_heads(params, kind, state, dist):
    """(T, lambda) of one site, one dense layer at a time."""
    w_k, b_k, w_o, b_o, w_t, b_t, w_l, b_l = (
        ("W_vk", "b_vk", "W_vo", "b_vo", "W_ta", "b_ta", "W_la", "b_la") if kind == "atom"
        else ("W_ek", "b_ek", "W_eo", "b_eo", "W_tb", "b_tb", "W_lb", "b_lb"))
    hk = [sum(params[w_k][i, j] * dist[j] for j in range(len(dist))) + params[b_k][i] for i in range(H)]
    a = [max(x, 0.0) for x in list(state) + hk]
    ho = [max(sum(params[w_o][i, j] * a[j] for j in range(len(a))) + params[b_o][i], 0.0) for i in range(H)]
    t = sum(params[w_t][0, i] * ho[i] for i in range(H)) + params[b_t][0]
    s = sum(params[w_l][0, i] * ho[i] for i in range(H)) + params[b_l][0]
    return min(max(t, 1.0), 100.0), 1.0 / (1.0 + math.exp(-s))


class TestHeads:
    def test_site_values_match_scalar_evaluation(self, val_contexts):
        params = init_adapter(H, K, np.random.default_rng(6), init_temperature=20.0)
        ctx = next(c for c in val_contexts if c.record.n_edges >= 2)
        h, h_e = ctx.emb.node_embeddings, ctx.emb.edge_embeddings
        edges = ctx.record.edges
        hg = [gin_forward(h[v], [(None, h_e[i]) for i, (a, b, _) in enumerate(edges) if v in (a, b)], params)
              for v in range(ctx.record.n_nodes)]
        sp = AdapterFusion(params).site_parameters(ctx)
        for v in range(ctx.record.n_nodes):
            t, lam = _scalar_heads(params, "atom", hg[v], ctx.atom_distances[v])
            assert sp.atom_temperature[v] == pytest.approx(t, rel=1e-10)
            assert sp.atom_lambda[v] == pytest.approx(lam, rel=1e-10)
        for i, (s, t_node, _) in enumerate(edges):
            assert s < t_node
            t, lam = _scalar_heads(params, "bond", np.concatenate([hg[s], hg[t_node]]), ctx.bond_distances[i])
            assert sp.bond_temperature[i] == pytest.approx(t, rel=1e-10)
            assert sp.bond_lambda[i] == pytest.approx(lam, rel=1e-10)

    def test_confident_classifier_costs_nothing(self, val_contexts):
        ctx = val_contexts[0]
        g = ctx.record
        perfect = replace(ctx, gnn_atom=np.eye(ctx.gnn_atom.shape[1])[g.atom_targets],
                          gnn_bond=np.eye(ctx.gnn_bond.shape[1])[g.bond_targets])
        params = init_adapter(H, K, np.random.default_rng(7), adapt_lambda=False, fixed_lambda=1.0)
        loss, _ = context_loss_and_grads(perfect, params)
        assert loss == 0.0
        assert context_loss(perfect, params) == 0.0


class TestAdapterNeighborCount:
    def test_prediction_uses_adapter_k(self, val_set, backbone, stores):
        atom, bond = stores
        fusion = AdapterFusion(init_adapter(H, K, np.random.default_rng(8)))
        for g in val_set.records[:3]:
            assert predict_topk(g, backbone, atom, bond, fusion, k_neighbors=32, top_n=20) == \
                predict_topk(g, backbone, atom, bond, fusion, k_neighbors=K, top_n=20)

    def test_bench_ignores_configured_k(self, val_set, backbone, stores, small_cfg):
        atom, bond = stores
        small_cfg.retrieval.k_neighbors = 32
        fusion = AdapterFusion(init_adapter(H, K, np.random.default_rng(8)))
        fused, _ = bench_latency(val_set.subset(range(2)), backbone, atom, bond, fusion, small_cfg, n_runs=1)
        assert fused.n_records == 2

    def test_fixed_blend_uses_requested_k(self):
        assert FixedFusion(10.0, 0.5).neighbors(7) == 7
        assert AdapterFusion(zero_adapter(H, 3)).neighbors(7) == 3

import math

import numpy as np
import pytest

from retroknn.backbone import encode, head_probs
from retroknn.errors import ConfigurationError, ParseError, RetrievalError
from retroknn.graphio import ReactionRecord
from retroknn.retrieve import (
    FixedFusion,
    NeighborList,
    RankedEntry,
    RankedPrediction,
    fuse,
    interpolate,
    knn_distribution,
    knn_distributions,
    nll,
    predict_gnn_only,
    predict_topk,
    prepare_sites,
    rank_sites,
    read_predictions,
    retrieve_neighbors,
    write_predictions,
)
from retroknn.store import TemplateStore
from retroknn.vindex import build_flat


def _neighbors(templates, distances):
    return NeighborList(np.asarray(templates), np.asarray(distances, dtype=np.float64))


class TestKnnDistribution:
    def test_single_neighbor(self):
        p = knn_distribution(_neighbors([3], [2.5]), 10.0, 4)
        np.testing.assert_array_equal(p, [0.0, 0.0, 0.0, 1.0, 0.0])

    def test_equal_distances_split_evenly(self):
        p = knn_distribution(_neighbors([1, 2], [4.0, 4.0]), 5.0, 2)
        np.testing.assert_allclose(p, [0.0, 0.5, 0.5])

    def test_exponential_weighting(self):
        p = knn_distribution(_neighbors([1, 2], [0.0, math.log(3.0)]), 1.0, 2)
        np.testing.assert_allclose(p, [0.0, 0.75, 0.25])

    def test_shared_template_accumulates(self):
        p = knn_distribution(_neighbors([2, 0, 2], [0.0, 0.0, 0.0]), 1.0, 2)
        np.testing.assert_allclose(p, [1 / 3, 0.0, 2 / 3])

    def test_common_offset_has_no_effect(self):
        a = knn_distribution(_neighbors([1, 2, 3], [0.5, 1.0, 4.0]), 2.0, 3)
        b = knn_distribution(_neighbors([1, 2, 3], [1e4 + 0.5, 1e4 + 1.0, 1e4 + 4.0]), 2.0, 3)
        np.testing.assert_allclose(a, b, rtol=1e-9)
        assert b.sum() == pytest.approx(1.0)

    def test_high_temperature_flattens(self):
        p = knn_distribution(_neighbors([1, 2], [0.0, 1.0]), 100.0, 2)
        assert p[1] == pytest.approx(0.5, abs=0.01)

    def test_empty_list(self):
        with pytest.raises(RetrievalError):
            knn_distribution(_neighbors([], []), 1.0, 3)

    @pytest.mark.parametrize("temperature", [0.5, 100.5])
    def test_temperature_range(self, temperature):
        with pytest.raises(RetrievalError):
            knn_distribution(_neighbors([1], [0.0]), temperature, 3)

    def test_template_out_of_range(self):
        with pytest.raises(RetrievalError):
            knn_distribution(_neighbors([4], [0.0]), 1.0, 3)

    def test_unsorted_neighbors_rejected(self):
        with pytest.raises(RetrievalError):
            _neighbors([1, 2], [2.0, 1.0])

    def test_neighbor_order_does_not_matter(self):
        templates = np.array([[1, 3, 2, 1]])
        distances = np.array([[0.5, 2.0, 1.0, 4.0]])
        perm = np.array([2, 0, 3, 1])
        a, _ = knn_distributions(templates, distances, np.array([3.0]), 4)
        b, _ = knn_distributions(templates[:, perm], distances[:, perm], np.array([3.0]), 4)
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_far_neighbor_has_no_weight(self):
        near = knn_distribution(_neighbors([1, 2], [0.0, 1.0]), 1.0, 3)
        padded = knn_distribution(_neighbors([1, 2, 3], [0.0, 1.0, 1e4]), 1.0, 3)
        assert padded[3] == 0.0
        np.testing.assert_allclose(padded, near, rtol=1e-12)

    def test_from_pairs_sorts(self):
        n = NeighborList.from_pairs([(2, 3.0), (1, 0.5)])
        assert list(n.templates) == [1, 2]
        assert len(n) == 2


class TestInterpolate:
    def test_boundaries(self):
        p_gnn = np.array([0.7, 0.2, 0.1])
        p_knn = np.array([0.0, 0.0, 1.0])
        np.testing.assert_array_equal(interpolate(p_gnn, p_knn, 1.0), p_gnn)
        np.testing.assert_array_equal(interpolate(p_gnn, p_knn, 0.0), p_knn)
        np.testing.assert_allclose(interpolate(p_gnn, p_knn, 0.5), [0.35, 0.1, 0.55])

    def test_per_row_lambda(self):
        p_gnn = np.array([[1.0, 0.0], [1.0, 0.0]])
        p_knn = np.array([[0.0, 1.0], [0.0, 1.0]])
        np.testing.assert_allclose(interpolate(p_gnn, p_knn, np.array([0.25, 1.0])), [[0.25, 0.75], [1.0, 0.0]])


class TestRanking:
    def test_ties_prefer_atoms_then_site_then_template(self):
        atom = np.array([[0.5, 0.25, 0.25]])
        bond = np.array([[0.5, 0.25, 0.25], [0.0, 0.5, 0.5]])
        ranked = rank_sites(atom, bond, top_n=10)
        assert ranked.pairs() == [("bond", 1, 1), ("bond", 1, 2), ("atom", 0, 1), ("atom", 0, 2),
                                  ("bond", 0, 1), ("bond", 0, 2)]

    def test_skips_empty_token_and_zero_probability(self):
        ranked = rank_sites(np.array([[0.9, 0.0, 0.1]]), np.zeros((0, 3)))
        assert ranked.pairs() == [("atom", 0, 2)]
        assert ranked[0].prob == pytest.approx(0.1)

    def test_truncates(self):
        rng = np.random.default_rng(0)
        atom = rng.dirichlet(np.ones(6), size=10)
        ranked = rank_sites(atom, np.zeros((0, 2)), top_n=7)
        assert len(ranked) == 7
        probs = [e.prob for e in ranked]
        assert probs == sorted(probs, reverse=True)
        assert probs[0] == atom[:, 1:].max()

    @pytest.mark.parametrize("top_n", [0, 51])
    def test_top_n_bounds(self, top_n):
        with pytest.raises(ConfigurationError):
            rank_sites(np.array([[0.5, 0.5]]), np.zeros((0, 2)), top_n=top_n)

    def test_no_sites(self):
        assert len(rank_sites(np.zeros((0, 4)), np.zeros((0, 3)))) == 0

    def test_json_line(self):
        ranked = RankedPrediction((RankedEntry("bond", 2, 5, 0.125),))
        assert ranked.to_json() == '{"ranked": [{"site": {"kind": "bond", "index": 2}, "template": 5, "prob": 0.125}]}'


class TestPredictionFiles:
    def test_round_trip_keeps_probabilities(self, tmp_path):
        preds = [rank_sites(np.array([[0.2, 0.1 / 3, 0.8 - 0.1 / 3]]), np.array([[0.5, 0.5]])), RankedPrediction()]
        write_predictions(preds, tmp_path / "p.jsonl")
        assert read_predictions(tmp_path / "p.jsonl") == preds

    def test_bad_line(self, tmp_path):
        path = tmp_path / "p.jsonl"
        path.write_text('{"ranked": []}\n{"ranked": [{"site": {"kind": "ring", "index": 0}, "template": 1, "prob": 1}]}\n')
        with pytest.raises(ParseError) as info:
            read_predictions(path)
        assert info.value.line == 2

    def test_not_json(self, tmp_path):
        path = tmp_path / "p.jsonl"
        path.write_text("ranked\n")
        with pytest.raises(ParseError):
            read_predictions(path)


class TestSites:
    def test_neighbors_sorted_and_sized(self, val_set, backbone, stores):
        atom, bond = stores
        ctx = prepare_sites(val_set[0], backbone, atom, bond, 4)
        assert ctx.k_neighbors == 4
        assert ctx.atom_templates.shape == (val_set[0].n_nodes, 4)
        assert ctx.bond_distances.shape == (val_set[0].n_edges, 4)
        assert np.all(np.diff(ctx.atom_distances, axis=1) >= 0.0)

    def test_training_record_retrieves_itself(self, train_set, backbone, stores):
        atom, bond = stores
        ctx = prepare_sites(train_set[0], backbone, atom, bond, 2)
        np.testing.assert_array_equal(ctx.atom_distances[:, 0], 0.0)
        np.testing.assert_array_equal(ctx.bond_distances[:, 0], 0.0)

    def test_small_store_is_used_whole(self):
        store = TemplateStore(np.eye(3, dtype=np.float32), np.array([1, 2, 0]), build_flat(np.eye(3)), "atom")
        templates, distances = retrieve_neighbors(store, np.zeros((2, 3)), 10)
        assert templates.shape == (2, 3)
        np.testing.assert_allclose(distances, 1.0)
        assert list(templates[0]) == [1, 2, 0]

    def test_empty_store(self):
        store = TemplateStore(np.zeros((0, 3), dtype=np.float32), np.zeros(0, dtype=np.int64),
                              build_flat(np.zeros((0, 3))), "bond")
        with pytest.raises(RetrievalError):
            retrieve_neighbors(store, np.zeros((1, 3)), 4)
        templates, _ = retrieve_neighbors(store, np.zeros((0, 3)), 4)
        assert templates.shape == (0, 0)

    def test_store_dimension_mismatch(self, val_set, backbone, stores):
        atom, bond = stores
        narrow = TemplateStore(np.zeros((2, 3), dtype=np.float32), np.array([1, 0]), build_flat(np.zeros((2, 3))),
                               "atom")
        with pytest.raises(ConfigurationError):
            prepare_sites(val_set[0], backbone, narrow, bond, 4)

    def test_fused_rows_are_distributions(self, val_contexts):
        ctx = val_contexts[0]
        atom_p, bond_p = fuse(ctx, FixedFusion(25.0, 0.3).site_parameters(ctx))
        np.testing.assert_allclose(atom_p.sum(axis=1), 1.0)
        np.testing.assert_allclose(bond_p.sum(axis=1), 1.0)

    @pytest.mark.parametrize("temperature, lam", [(0.5, 0.5), (25.0, 1.5), (101.0, 0.0)])
    def test_fixed_fusion_ranges(self, temperature, lam):
        with pytest.raises(ConfigurationError):
            FixedFusion(temperature, lam)

    def test_classifier_only_when_lambda_is_one(self, val_set, backbone, stores):
        atom, bond = stores
        for g in val_set.records[:5]:
            fused = predict_topk(g, backbone, atom, bond, FixedFusion(10.0, 1.0), k_neighbors=4, top_n=20)
            assert fused == predict_gnn_only(g, backbone, top_n=20)

    def test_neighbors_only_when_lambda_is_zero(self, val_contexts):
        for ctx in val_contexts[:5]:
            params = FixedFusion(5.0, 0.0).site_parameters(ctx)
            knn_atom, _ = knn_distributions(ctx.atom_templates, ctx.atom_distances, params.atom_temperature,
                                            ctx.gnn_atom.shape[1])
            knn_bond, _ = knn_distributions(ctx.bond_templates, ctx.bond_distances, params.bond_temperature,
                                            ctx.gnn_bond.shape[1])
            assert rank_sites(*fuse(ctx, params)) == rank_sites(knn_atom, knn_bond)

    def test_nll(self):
        probs = np.array([[0.5, 0.5], [0.25, 0.75]])
        assert nll(probs, np.array([0, 1])) == pytest.approx(-(math.log(0.5) + math.log(0.75)) / 2)
        assert nll(np.zeros((0, 2)), np.zeros(0, dtype=np.int64)) == 0.0
        assert math.isfinite(nll(np.array([[1.0, 0.0]]), np.array([1])))


def _scan_distribution(store, query, k, temperature, n_classes):
    keys = store.keys.astype(np.float64)
    dist = ((keys - np.asarray(query, dtype=np.float32).astype(np.float64)) ** 2).sum(axis=1)
    nearest = np.lexsort((np.arange(len(dist)), dist))[:k]
    w = np.exp(-(dist[nearest] - dist[nearest].min()) / temperature)
    p = np.zeros(n_classes)
    np.add.at(p, store.values[nearest], w / w.sum())
    return p


def test_prediction_matches_full_scan(backbone, stores):
    atom, bond = stores
    g = ReactionRecord((1, 4, 6), ((0, 1, 2), (1, 2, 0)), (0, 1, 0), (0, 2), 3)
    temperature, lam = 5.0, 0.4
    emb = encode(g, backbone)
    gnn_atom, gnn_bond = head_probs(emb, backbone)
    expected = {}
    for kind, store, states, gnn in (("atom", atom, emb.node_embeddings, gnn_atom),
                                     ("bond", bond, emb.edge_embeddings, gnn_bond)):
        for site, (h, p_gnn) in enumerate(zip(states, gnn)):
            p_knn = _scan_distribution(store, h, 4, temperature, len(p_gnn))
            for template, prob in enumerate(lam * p_gnn + (1.0 - lam) * p_knn):
                if template and prob > 0.0:
                    expected[(kind, site, template)] = prob

    ranked = predict_topk(g, backbone, atom, bond, FixedFusion(temperature, lam), k_neighbors=4)
    assert len(ranked) == len(expected)
    probs = [e.prob for e in ranked]
    assert probs == sorted(probs, reverse=True)
    for e in ranked:
        assert e.prob == pytest.approx(expected[(e.kind, e.site, e.template)], rel=1e-9)

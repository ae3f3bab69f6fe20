import numpy as np
import pytest

from retroknn.backbone import (
    dataset_loss,
    encode,
    head_probs,
    init_backbone,
    load_backbone,
    loss_and_grads,
    param_shapes,
    record_loss,
    save_backbone,
    train_backbone,
)
from retroknn.config import derive_rng
from retroknn.errors import ConfigurationError, FormatError, TrainingError
from retroknn.graphio import ReactionRecord


def _record_with_edges(d):
    return next(g for g in d if g.n_edges >= 2)


def _relabel(g: ReactionRecord, perm: np.ndarray) -> ReactionRecord:
    nodes = [0] * g.n_nodes
    atom_labels = [0] * g.n_nodes
    for old, new in enumerate(perm):
        nodes[new] = g.nodes[old]
        atom_labels[new] = g.atom_labels[old]
    edges = sorted((min(perm[u], perm[v]), max(perm[u], perm[v]), f, t)
                   for (u, v, f), t in zip(g.edges, g.bond_labels))
    return ReactionRecord(tuple(nodes), tuple((int(u), int(v), f) for u, v, f, _ in edges),
                          tuple(atom_labels), tuple(t for *_, t in edges), g.reaction_class)


def test_param_shapes():
    shapes = param_shapes(2, 8, 5, 3, 4, 2)
    assert shapes["mp0.W_s"] == (8, 5)
    assert shapes["mp0.W_m"] == (8, 8)
    assert shapes["mp1.W_m"] == (8, 11)
    assert shapes["edge.W"] == (8, 11)
    assert shapes["atom.W2"] == (5, 8)
    assert shapes["bond.b2"] == (3,)


def test_param_shapes_reject_empty_model():
    with pytest.raises(ConfigurationError):
        param_shapes(0, 8, 5, 3, 4, 2)


def test_embedding_shapes(train_set, backbone):
    g = _record_with_edges(train_set)
    emb = encode(g, backbone)
    assert emb.node_embeddings.shape == (g.n_nodes, 8)
    assert emb.edge_embeddings.shape == (g.n_edges, 8)
    assert np.all(emb.node_embeddings >= 0.0)


def test_head_probabilities_normalized(train_set, backbone):
    atom_p, bond_p = head_probs(encode(train_set[0], backbone), backbone)
    assert atom_p.shape[1] == train_set.n_atom_templates + 1
    assert bond_p.shape[1] == train_set.n_bond_templates + 1
    np.testing.assert_allclose(atom_p.sum(axis=1), 1.0)
    np.testing.assert_allclose(bond_p.sum(axis=1), 1.0)


def test_node_relabeling_permutes_embeddings(train_set, backbone):
    g = _record_with_edges(train_set)
    perm = np.random.default_rng(5).permutation(g.n_nodes)
    h = _relabel(g, perm)
    np.testing.assert_allclose(encode(h, backbone).node_embeddings[perm], encode(g, backbone).node_embeddings,
                               rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(record_loss(h, backbone), record_loss(g, backbone), rtol=1e-10)


def test_gradients_match_finite_differences(train_set, backbone):
    g = _record_with_edges(train_set)
    p = backbone.copy()
    _, grads = loss_and_grads([g], p)
    rng = np.random.default_rng(1)
    h = 1e-6
    for name in p.names():
        tensor = p.tensors[name]
        for flat in rng.choice(tensor.size, size=min(3, tensor.size), replace=False):
            idx = np.unravel_index(flat, tensor.shape)
            orig = tensor[idx]
            tensor[idx] = orig + h
            up = record_loss(g, p)
            tensor[idx] = orig - h
            down = record_loss(g, p)
            tensor[idx] = orig
            np.testing.assert_allclose(grads[name][idx], (up - down) / (2 * h), rtol=1e-4, atol=1e-7,
                                       err_msg=name)


def test_batch_gradient_is_mean(train_set, backbone):
    a, b = train_set[0], train_set[1]
    loss_ab, grads_ab = loss_and_grads([a, b], backbone)
    loss_a, grads_a = loss_and_grads([a], backbone)
    loss_b, grads_b = loss_and_grads([b], backbone)
    assert loss_ab == pytest.approx((loss_a + loss_b) / 2)
    for name in grads_ab:
        np.testing.assert_allclose(grads_ab[name], (grads_a[name] + grads_b[name]) / 2, atol=1e-12)


def test_empty_batch():
    p = init_backbone(1, 4, 3, 2, 1, 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        loss_and_grads([], p)


def test_vocabulary_mismatch(train_set):
    p = init_backbone(1, 4, 2, 2, 4, 3, np.random.default_rng(0))
    g = next(r for r in train_set if max(r.nodes) >= 2)
    with pytest.raises(ConfigurationError):
        encode(g, p)


class TestCheckpoint:
    def test_save_load(self, tmp_path, backbone):
        path = tmp_path / "backbone.rkbb"
        save_backbone(backbone, path)
        loaded = load_backbone(path)
        assert loaded.shapes() == backbone.shapes()
        for name in backbone.names():
            np.testing.assert_array_equal(loaded[name], backbone[name])

    def test_truncated(self, tmp_path, backbone):
        path = tmp_path / "backbone.rkbb"
        save_backbone(backbone, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError, match="truncated"):
            load_backbone(path)

    def test_trailing_bytes(self, tmp_path, backbone):
        path = tmp_path / "backbone.rkbb"
        save_backbone(backbone, path)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(FormatError, match="trailing"):
            load_backbone(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "backbone.rkbb"
        path.write_bytes(b"RKST" + bytes(40))
        with pytest.raises(FormatError):
            load_backbone(path)


class TestTraining:
    def test_returns_best_epoch(self, train_set, val_set, small_cfg):
        history = []
        p = train_backbone(train_set, val_set, small_cfg, history)
        assert [h.epoch for h in history] == [0, 1, 2]
        assert p.is_finite()
        assert dataset_loss(val_set, p) == pytest.approx(min(h.val_loss for h in history))

    def test_seeded(self, train_set, val_set, small_cfg):
        small_cfg.train.epochs = 1
        a = train_backbone(train_set, val_set, small_cfg)
        b = train_backbone(train_set, val_set, small_cfg)
        for name in a.names():
            np.testing.assert_array_equal(a[name], b[name])

    def test_empty_training_set(self, train_set, val_set, small_cfg):
        with pytest.raises(TrainingError):
            train_backbone(train_set.with_records([]), val_set, small_cfg)


class TestClosedForms:
    def _zero(self, node_vocab=2, edge_vocab=1, n_atom=3, n_bond=3, hidden=4):
        p = init_backbone(2, hidden, node_vocab, edge_vocab, n_atom, n_bond, np.random.default_rng(0))
        return p.with_tensors(p.zeros_like())

    def test_zero_weights_give_zero_embeddings(self):
        p = self._zero()
        for g in (ReactionRecord((1,), (), (0,), (), 1), ReactionRecord((0, 1), ((0, 1, 0),), (0, 0), (0,), 1)):
            emb = encode(g, p)
            np.testing.assert_array_equal(emb.node_embeddings, 0.0)
            np.testing.assert_array_equal(emb.edge_embeddings, 0.0)

    def test_zero_logits_are_uniform(self):
        p = self._zero(n_atom=3, n_bond=1)
        atom_p, bond_p = head_probs(encode(ReactionRecord((0, 1), ((0, 1, 0),), (0, 0), (0,), 1), p), p)
        np.testing.assert_allclose(atom_p, 0.25)
        np.testing.assert_allclose(bond_p, 0.5)

    def test_uniform_single_atom_loss(self):
        p = self._zero(n_atom=3)
        assert record_loss(ReactionRecord((0,), (), (2,), (), 1), p) == pytest.approx(np.log(4.0), rel=1e-12)

    def test_two_node_forward_by_hand(self):
        p = init_backbone(1, 2, 2, 1, 1, 1, np.random.default_rng(0))
        tensors = p.zeros_like()
        tensors["mp0.W_s"][:] = np.eye(2)
        tensors["mp0.W_m"][:] = [[1.0, 0.0, 0.5], [0.0, 2.0, -1.0]]
        tensors["edge.W"][:] = [[1.0, 0.0, 0.0], [0.0, 1.0, -3.0]]
        emb = encode(ReactionRecord((0, 1), ((0, 1, 0),), (0, 0), (0,), 1), p.with_tensors(tensors))
        # node 0 receives ReLU([0.5, 1]), node 1 receives ReLU([1.5, -1])
        np.testing.assert_allclose(emb.node_embeddings, [[1.5, 1.0], [1.5, 1.0]])
        np.testing.assert_allclose(emb.edge_embeddings, [[3.0, 0.0]])

    def test_swapping_endpoints_keeps_bond_embedding(self, backbone):
        a = encode(ReactionRecord((2, 5), ((0, 1, 1),), (0, 0), (0,), 1), backbone)
        b = encode(ReactionRecord((5, 2), ((0, 1, 1),), (0, 0), (0,), 1), backbone)
        np.testing.assert_allclose(a.node_embeddings[::-1], b.node_embeddings, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(a.edge_embeddings, b.edge_embeddings, rtol=1e-12, atol=1e-15)


def test_early_stop_returns_checkpoint_before_stall(train_set, val_set, small_cfg):
    small_cfg.train.lr = 0.0
    small_cfg.train.epochs = 20
    small_cfg.train.patience = 5
    history = []
    p = train_backbone(train_set, val_set, small_cfg, history)
    stop_epoch = history[-1].epoch
    assert stop_epoch == 5
    initial = init_backbone(2, 8, train_set.node_vocab_size, train_set.edge_vocab_size, train_set.n_atom_templates,
                            train_set.n_bond_templates, derive_rng(small_cfg.seed, "backbone-init"))
    for name in p.names():
        np.testing.assert_array_equal(p[name], initial[name])

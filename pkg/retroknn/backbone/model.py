"""
Message-passing encoder (feature extractor) and the two template heads.

Layer recurrence, for l = 1..L::

    h_v(l) = ReLU(W_s h_v(l-1) + sum_{(u, e) in N(v)} ReLU(W_m [h_u(l-1) | x_e] + b_m) + b_s)

with h_v(0) the one-hot node feature. A bond embedding projects the sum of its
endpoint embeddings, so it does not depend on endpoint order. Each head is
Dense(H -> H) + ReLU + Dense(H -> |T|+1) followed by a softmax whose class 0
means "no template".
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from retroknn.backbone.params import BackboneParams
from retroknn.errors import ConfigurationError
from retroknn.graphio.dataset import ReactionRecord


@dataclass
class EmbeddingSet:
    node_embeddings: np.ndarray
    edge_embeddings: np.ndarray


@dataclass
class _Layer:
    h_prev: np.ndarray
    inp: np.ndarray
    pre_m: np.ndarray
    pre_s: np.ndarray
    mask: np.ndarray | None


@dataclass
class _Head:
    x: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray
    logits: np.ndarray


@dataclass
class _Forward:
    src: np.ndarray
    dst: np.ndarray
    layers: list[_Layer] = field(default_factory=list)
    edge_inp: np.ndarray | None = None
    edge_pre: np.ndarray | None = None
    emb: EmbeddingSet | None = None
    atom: _Head | None = None
    bond: _Head | None = None


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def one_hot(ids: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros((len(ids), size))
    if len(ids):
        out[np.arange(len(ids)), ids] = 1.0
    return out


def _check_record(g: ReactionRecord, p: BackboneParams) -> None:
    if g.n_nodes and (g.node_features.min() < 0 or g.node_features.max() >= p.node_vocab):
        raise ConfigurationError(f"node features exceed the backbone vocabulary of {p.node_vocab}")
    if g.n_edges and (g.edge_features.min() < 0 or g.edge_features.max() >= p.edge_vocab):
        raise ConfigurationError(f"edge features exceed the backbone vocabulary of {p.edge_vocab}")


def _dense_head(x: np.ndarray, p: BackboneParams, prefix: str) -> _Head:
    pre = x @ p[f"{prefix}.W1"].T + p[f"{prefix}.b1"]
    hidden = relu(pre)
    logits = hidden @ p[f"{prefix}.W2"].T + p[f"{prefix}.b2"]
    return _Head(x, pre, hidden, logits)


def _forward(g: ReactionRecord, p: BackboneParams, masks: list[np.ndarray] | None = None,
             with_heads: bool = True) -> _Forward:
    _check_record(g, p)
    n = g.n_nodes
    ends = g.edge_index
    x_edge = one_hot(g.edge_features, p.edge_vocab)
    src = np.concatenate([ends[:, 0], ends[:, 1]])
    dst = np.concatenate([ends[:, 1], ends[:, 0]])
    x_dir = np.vstack([x_edge, x_edge])
    # fixed (dst, src) order keeps aggregation independent of how endpoints were listed
    order = np.lexsort((src, dst))
    src, dst, x_dir = src[order], dst[order], x_dir[order]
    cache = _Forward(src, dst)

    h = one_hot(g.node_features, p.node_vocab)
    for layer in range(p.n_layers):
        inp = np.hstack([h[src], x_dir])
        pre_m = inp @ p[f"mp{layer}.W_m"].T + p[f"mp{layer}.b_m"]
        agg = np.zeros((n, p.hidden))
        np.add.at(agg, dst, relu(pre_m))
        pre_s = h @ p[f"mp{layer}.W_s"].T + agg + p[f"mp{layer}.b_s"]
        mask = masks[layer] if masks is not None else None
        cache.layers.append(_Layer(h, inp, pre_m, pre_s, mask))
        h = relu(pre_s)
        if mask is not None:
            h = h * mask

    cache.edge_inp = np.hstack([h[ends[:, 0]] + h[ends[:, 1]], x_edge])
    cache.edge_pre = cache.edge_inp @ p["edge.W"].T + p["edge.b"]
    cache.emb = EmbeddingSet(h, relu(cache.edge_pre))
    if with_heads:
        cache.atom = _dense_head(cache.emb.node_embeddings, p, "atom")
        cache.bond = _dense_head(cache.emb.edge_embeddings, p, "bond")
    return cache


def encode(g: ReactionRecord, p: BackboneParams) -> EmbeddingSet:
    emb = _forward(g, p, with_heads=False).emb
    assert emb is not None
    return emb


def head_logits(emb: EmbeddingSet, p: BackboneParams) -> tuple[np.ndarray, np.ndarray]:
    if emb.node_embeddings.shape[1:] != (p.hidden,) or emb.edge_embeddings.shape[1:] != (p.hidden,):
        raise ConfigurationError(f"embeddings do not have the backbone hidden size {p.hidden}")
    return (_dense_head(emb.node_embeddings, p, "atom").logits,
            _dense_head(emb.edge_embeddings, p, "bond").logits)


def head_probs(emb: EmbeddingSet, p: BackboneParams) -> tuple[np.ndarray, np.ndarray]:
    atom_logits, bond_logits = head_logits(emb, p)
    return softmax(atom_logits), softmax(bond_logits)


def record_loss(g: ReactionRecord, p: BackboneParams) -> float:
    """Classification loss of one record: mean atom NLL plus mean bond NLL."""
    cache = _forward(g, p)
    return _loss_terms(g, cache)


def _loss_terms(g: ReactionRecord, cache: _Forward) -> float:
    assert cache.atom is not None and cache.bond is not None
    loss = 0.0
    if g.n_nodes:
        logp = log_softmax(cache.atom.logits)
        loss -= logp[np.arange(g.n_nodes), g.atom_targets].mean()
    if g.n_edges:
        logp = log_softmax(cache.bond.logits)
        loss -= logp[np.arange(g.n_edges), g.bond_targets].mean()
    return float(loss)


def _head_backward(head: _Head, targets: np.ndarray, scale: float, p: BackboneParams,
                   prefix: str, grads: dict[str, np.ndarray]) -> np.ndarray:
    d_logits = softmax(head.logits)
    d_logits[np.arange(len(targets)), targets] -= 1.0
    d_logits *= scale
    grads[f"{prefix}.W2"] += d_logits.T @ head.hidden
    grads[f"{prefix}.b2"] += d_logits.sum(axis=0)
    d_pre = (d_logits @ p[f"{prefix}.W2"]) * (head.pre > 0)
    grads[f"{prefix}.W1"] += d_pre.T @ head.x
    grads[f"{prefix}.b1"] += d_pre.sum(axis=0)
    return d_pre @ p[f"{prefix}.W1"]


def _backward(g: ReactionRecord, cache: _Forward, p: BackboneParams, weight: float,
              grads: dict[str, np.ndarray]) -> None:
    assert cache.atom is not None and cache.bond is not None and cache.emb is not None
    n, m, hid = g.n_nodes, g.n_edges, p.hidden
    d_h = np.zeros((n, hid))
    if n:
        d_h += _head_backward(cache.atom, g.atom_targets, weight / n, p, "atom", grads)
    if m:
        d_edge = _head_backward(cache.bond, g.bond_targets, weight / m, p, "bond", grads)
        d_pre_e = d_edge * (cache.edge_pre > 0)
        grads["edge.W"] += d_pre_e.T @ cache.edge_inp
        grads["edge.b"] += d_pre_e.sum(axis=0)
        d_sum = (d_pre_e @ p["edge.W"])[:, :hid]
        np.add.at(d_h, g.edge_index[:, 0], d_sum)
        np.add.at(d_h, g.edge_index[:, 1], d_sum)

    for layer in reversed(range(p.n_layers)):
        c = cache.layers[layer]
        if c.mask is not None:
            d_h = d_h * c.mask
        d_pre_s = d_h * (c.pre_s > 0)
        grads[f"mp{layer}.W_s"] += d_pre_s.T @ c.h_prev
        grads[f"mp{layer}.b_s"] += d_pre_s.sum(axis=0)
        d_pre_m = d_pre_s[cache.dst] * (c.pre_m > 0)
        grads[f"mp{layer}.W_m"] += d_pre_m.T @ c.inp
        grads[f"mp{layer}.b_m"] += d_pre_m.sum(axis=0)
        if layer == 0:
            break
        d_prev = d_pre_s @ p[f"mp{layer}.W_s"]
        d_prev_dim = c.h_prev.shape[1]
        np.add.at(d_prev, cache.src, (d_pre_m @ p[f"mp{layer}.W_m"])[:, :d_prev_dim])
        d_h = d_prev


def dropout_masks(g: ReactionRecord, p: BackboneParams, rate: float, rng: np.random.Generator) -> list[np.ndarray] | None:
    if rate <= 0.0:
        return None
    keep = 1.0 - rate
    return [(rng.random((g.n_nodes, p.hidden)) < keep) / keep for _ in range(p.n_layers)]


def loss_and_grads(batch: list[ReactionRecord], p: BackboneParams, rng: np.random.Generator | None = None,
                   dropout: float = 0.0) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss and its exact gradient w.r.t. every backbone tensor.

    Dropout masks are drawn from ``rng`` when both are given; records are
    reduced in batch order so results are bit-reproducible.
    """
    if not batch:
        raise ValueError("loss_and_grads needs a nonempty batch")
    grads = p.zeros_like()
    weight = 1.0 / len(batch)
    total = 0.0
    for g in batch:
        masks = dropout_masks(g, p, dropout, rng) if rng is not None else None
        cache = _forward(g, p, masks)
        total += _loss_terms(g, cache)
        _backward(g, cache, p, weight, grads)
    return total * weight, grads

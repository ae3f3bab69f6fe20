"""
Adapter network: per-site temperature and interpolation factor.

    GIN:   h_v(g) = W_vg ((1 + eps) h_v + sum_{e in E(v)} ReLU(h_v + h_e)) + b_vg
    atom:  h_v(k) = W_vk d_v + b_vk
           h_v(o) = ReLU(W_vo ReLU(h_v(g) | h_v(k)) + b_vo)
           T_A = clamp(W_ta h_v(o) + b_ta, 1, 100),  lambda_a = sigmoid(W_la h_v(o) + b_la)
    bond:  same with [h_s(g) | h_t(g) | h_e(k)] for e = (s, t), s < t

h_v and h_e come from the frozen backbone and d is the ascending vector of
the K neighbor distances. Gradients are exact and flow into the adapter only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from retroknn.adapter.params import AdapterParams
from retroknn.backbone.model import relu
from retroknn.backbone.params import BackboneParams
from retroknn.errors import ConfigurationError
from retroknn.graphio.dataset import ReactionRecord
from retroknn.retrieve.knn import MAX_TEMPERATURE, MIN_TEMPERATURE, knn_distributions
from retroknn.retrieve.sites import SiteContext, SiteParameters, fused_loss, prepare_sites
from retroknn.store import TemplateStore

_PATH_NAMES = {
    "atom": ("W_vk", "b_vk", "W_vo", "b_vo", "W_ta", "b_ta", "W_la", "b_la"),
    "bond": ("W_ek", "b_ek", "W_eo", "b_eo", "W_tb", "b_tb", "W_lb", "b_lb"),
}


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class _Path:
    dist: np.ndarray
    a_pre: np.ndarray
    ho_pre: np.ndarray
    ho: np.ndarray
    t_pre: np.ndarray
    temperature: np.ndarray
    lam: np.ndarray


@dataclass
class _Cache:
    h: np.ndarray
    z: np.ndarray
    hg: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    atom: _Path
    bond: _Path


def gin_aggregate(node_embeddings: np.ndarray, edge_embeddings: np.ndarray, edge_index: np.ndarray) -> np.ndarray:
    """sum over incident edges of ReLU(h_v + h_e), per node."""
    agg = np.zeros_like(node_embeddings)
    if len(edge_index):
        src, dst = edge_index[:, 0], edge_index[:, 1]
        np.add.at(agg, src, relu(node_embeddings[src] + edge_embeddings))
        np.add.at(agg, dst, relu(node_embeddings[dst] + edge_embeddings))
    return agg


def gin_layer(node_embeddings: np.ndarray, edge_embeddings: np.ndarray, edge_index: np.ndarray,
              params: AdapterParams) -> np.ndarray:
    z = (1.0 + params["eps"][0]) * node_embeddings + gin_aggregate(node_embeddings, edge_embeddings, edge_index)
    return z @ params["W_vg"].T + params["b_vg"]


def gin_forward(h_v: np.ndarray, incident: list[tuple[np.ndarray | None, np.ndarray]], params: AdapterParams) -> np.ndarray:
    """GIN output of a single node; ``incident`` holds (h_u, h_e) per incident edge, h_u unused."""
    z = (1.0 + params["eps"][0]) * np.asarray(h_v, dtype=np.float64)
    for _, h_e in incident:
        z = z + relu(h_v + np.asarray(h_e, dtype=np.float64))
    return params["W_vg"] @ z + params["b_vg"]


def _path(params: AdapterParams, kind: str, states: np.ndarray, dist: np.ndarray) -> _Path:
    w_k, b_k, w_o, b_o, w_t, b_t, w_l, b_l = _PATH_NAMES[kind]
    n_sites = len(states)
    if n_sites and dist.shape != (n_sites, params.k):
        raise ConfigurationError(f"adapter expects {params.k} neighbor distances per site, got {dist.shape[-1]}")
    dist = dist.reshape(n_sites, params.k) if not n_sites else dist
    hk = dist @ params[w_k].T + params[b_k]
    a_pre = np.hstack([states, hk])
    ho_pre = relu(a_pre) @ params[w_o].T + params[b_o]
    ho = relu(ho_pre)
    t_pre = ho @ params[w_t][0] + params[b_t][0]
    if params.adapt_temperature:
        temperature = np.clip(t_pre, MIN_TEMPERATURE, MAX_TEMPERATURE)
    else:
        temperature = np.full(n_sites, float(params.fixed_temperature))
    if params.adapt_lambda:
        lam = sigmoid(ho @ params[w_l][0] + params[b_l][0])
    else:
        lam = np.full(n_sites, float(params.fixed_lambda))
    return _Path(dist, a_pre, ho_pre, ho, t_pre, temperature, lam)


def _forward(ctx: SiteContext, params: AdapterParams) -> _Cache:
    h = ctx.emb.node_embeddings
    h_e = ctx.emb.edge_embeddings
    if h.shape[1] != params.hidden:
        raise ConfigurationError(f"adapter hidden size {params.hidden} does not match embeddings of size {h.shape[1]}")
    ends = ctx.record.edge_index
    src, dst = ends[:, 0], ends[:, 1]
    z = (1.0 + params["eps"][0]) * h + gin_aggregate(h, h_e, ends)
    hg = z @ params["W_vg"].T + params["b_vg"]
    atom = _path(params, "atom", hg, ctx.atom_distances)
    bond = _path(params, "bond", np.hstack([hg[src], hg[dst]]), ctx.bond_distances)
    return _Cache(h, z, hg, src, dst, atom, bond)


def adapter_forward(kind: str, states: np.ndarray | tuple[np.ndarray, np.ndarray], distances: np.ndarray,
                    params: AdapterParams) -> tuple[float, float]:
    """(T, lambda) of one site from its GIN state(s) and ascending neighbor distances.

    ``states`` is h_v(g) for an atom and (h_s(g), h_t(g)) for a bond.
    """
    if kind not in _PATH_NAMES:
        raise ConfigurationError(f"unknown site kind '{kind}'")
    row = np.hstack(states) if isinstance(states, tuple) else np.asarray(states, dtype=np.float64)
    dist = np.asarray(distances, dtype=np.float64)
    if dist.shape != (params.k,):
        raise ConfigurationError(f"adapter expects {params.k} neighbor distances, got {dist.shape}")
    width = params.hidden if kind == "atom" else 2 * params.hidden
    if row.shape != (width,):
        raise ConfigurationError(f"{kind} state must have {width} entries, got {row.shape}")
    path = _path(params, kind, row[None, :], dist[None, :])
    return float(path.temperature[0]), float(path.lam[0])


class AdapterFusion:
    def __init__(self, params: AdapterParams) -> None:
        self.params = params

    def site_parameters(self, ctx: SiteContext) -> SiteParameters:
        cache = _forward(ctx, self.params)
        return SiteParameters(cache.atom.temperature, cache.atom.lam, cache.bond.temperature, cache.bond.lam)

    def neighbors(self, default: int) -> int:
        return self.params.k


def _path_backward(params: AdapterParams, kind: str, path: _Path, g_tpre: np.ndarray, g_lpre: np.ndarray,
                   grads: dict[str, np.ndarray]) -> np.ndarray:
    w_k, b_k, w_o, b_o, w_t, b_t, w_l, b_l = _PATH_NAMES[kind]
    grads[w_t] += g_tpre[None, :] @ path.ho
    grads[b_t] += g_tpre.sum()
    grads[w_l] += g_lpre[None, :] @ path.ho
    grads[b_l] += g_lpre.sum()
    d_ho_pre = (g_tpre[:, None] * params[w_t] + g_lpre[:, None] * params[w_l]) * (path.ho_pre > 0)
    grads[w_o] += d_ho_pre.T @ relu(path.a_pre)
    grads[b_o] += d_ho_pre.sum(axis=0)
    d_a_pre = (d_ho_pre @ params[w_o]) * (path.a_pre > 0)
    width = path.a_pre.shape[1] - params.hidden
    d_hk = d_a_pre[:, width:]
    grads[w_k] += d_hk.T @ path.dist
    grads[b_k] += d_hk.sum(axis=0)
    return d_a_pre[:, :width]


def _site_loss(path: _Path, gnn: np.ndarray, templates: np.ndarray, targets: np.ndarray, params: AdapterParams,
               weight: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean NLL over the sites of one kind and the gradients w.r.t. the head pre-activations."""
    n_sites = len(targets)
    rows = np.arange(n_sites)
    p_knn, q = knn_distributions(templates, path.dist, path.temperature, gnn.shape[1])
    lam = path.lam
    g_t = gnn[rows, targets]
    k_t = p_knn[rows, targets]
    p_t = np.maximum(lam * g_t + (1.0 - lam) * k_t, np.finfo(np.float64).tiny)
    loss = float(-np.log(p_t).mean())
    g_p = -weight / (n_sites * p_t)

    g_lpre = np.zeros(n_sites)
    if params.adapt_lambda:
        g_lpre = g_p * (g_t - k_t) * lam * (1.0 - lam)
    g_tpre = np.zeros(n_sites)
    if params.adapt_temperature:
        temp = path.temperature
        shifted = path.dist - path.dist.min(axis=1, keepdims=True)
        match = templates == targets[:, None]
        d_knn = ((q * shifted * match).sum(axis=1) - k_t * (q * shifted).sum(axis=1)) / (temp * temp)
        inside = (path.t_pre > MIN_TEMPERATURE) & (path.t_pre < MAX_TEMPERATURE)
        g_tpre = g_p * (1.0 - lam) * d_knn * inside
    return loss, g_tpre, g_lpre


def context_loss_and_grads(ctx: SiteContext, params: AdapterParams, weight: float = 1.0,
                           grads: dict[str, np.ndarray] | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Fused classification loss of one record; gradients are scaled by ``weight`` and accumulated into ``grads``."""
    if grads is None:
        grads = params.zeros_like()
    cache = _forward(ctx, params)
    g = ctx.record
    d_hg = np.zeros_like(cache.hg)
    loss = 0.0
    if g.n_nodes:
        site_loss, g_tpre, g_lpre = _site_loss(cache.atom, ctx.gnn_atom, ctx.atom_templates, g.atom_targets, params, weight)
        loss += site_loss
        d_hg += _path_backward(params, "atom", cache.atom, g_tpre, g_lpre, grads)
    if g.n_edges:
        site_loss, g_tpre, g_lpre = _site_loss(cache.bond, ctx.gnn_bond, ctx.bond_templates, g.bond_targets, params, weight)
        loss += site_loss
        d_states = _path_backward(params, "bond", cache.bond, g_tpre, g_lpre, grads)
        np.add.at(d_hg, cache.src, d_states[:, :params.hidden])
        np.add.at(d_hg, cache.dst, d_states[:, params.hidden:])
    grads["W_vg"] += d_hg.T @ cache.z
    grads["b_vg"] += d_hg.sum(axis=0)
    grads["eps"] += ((d_hg @ params["W_vg"]) * cache.h).sum()
    return loss, grads


def batch_loss_and_grads(contexts: list[SiteContext], params: AdapterParams) -> tuple[float, dict[str, np.ndarray]]:
    if not contexts:
        raise ValueError("batch_loss_and_grads needs a nonempty batch")
    grads = params.zeros_like()
    weight = 1.0 / len(contexts)
    total = 0.0
    for ctx in contexts:
        loss, _ = context_loss_and_grads(ctx, params, weight, grads)
        total += loss
    return total * weight, grads


def context_loss(ctx: SiteContext, params: AdapterParams) -> float:
    return fused_loss(ctx, AdapterFusion(params))


def adapter_loss_and_grads(g: ReactionRecord, backbone: BackboneParams, atom_store: TemplateStore,
                           bond_store: TemplateStore, params: AdapterParams,
                           n_probe: int | None = None) -> tuple[float, dict[str, np.ndarray]]:
    ctx = prepare_sites(g, backbone, atom_store, bond_store, params.k, n_probe)
    return context_loss_and_grads(ctx, params)

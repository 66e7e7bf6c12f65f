"""Exact cross-type map for linear, skip-free HGNNs.

Without skip connections or activation, layer ``l`` for destination type u is

    H_u = sum_r N_r H_src(r) Q_r,      Q_r = (W_u[:, block r] M_r)^T

Stacking the neighbour blocks side by side, the per-source embeddings block
diagonally and the Q blocks vertically gives ``H_u = A_u H_blk Q_u``. Two
types share ``H_blk``, hence

    H_s = (A_s A_t^+) H_t (Q_t^+ Q_s)

whenever the pseudo-inverses act as inverses on the relevant subspaces.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .hgnn import forward, layer_forward

PINV_RCOND = 1e-10


class TheoryError(ValueError):
    pass


def pinv(a, rcond=PINV_RCOND):
    """SVD pseudo-inverse, dropping singular values below ``rcond * s_max``.

    Returns (pinv, rank, condition) where condition is s_max / s_min over the
    full min(shape) spectrum (inf when rank-deficient).
    """
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.zeros(a.T.shape), 0, np.inf
    u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
    cut = rcond * s[0] if len(s) else 0.0
    keep = s > cut
    inv = (vt[keep].T / s[keep]) @ u[:, keep].T
    rank = int(keep.sum())
    cond = s[0] / s[-1] if rank == len(s) and s[-1] > 0 else np.inf
    return inv, rank, cond


def _check_mode(model):
    if model.config.message_mode != "no_skip":
        raise TheoryError("cross-type map requires message_mode='no_skip'")
    if model.config.sharing == "v1":
        raise TheoryError("cross-type map is defined per relation; v1 sharing is not supported")


def slots(schema, types):
    """Stacking slots (src_type, occurrence) covering the incoming relations
    of every type in ``types``, ordered by source type then occurrence."""
    order = {t.name: t.id for t in schema.node_types}
    seen = set()
    for u in types:
        count = {}
        for r in schema.incoming(u):
            k = count.get(r.src, 0)
            count[r.src] = k + 1
            seen.add((r.src, k))
    return sorted(seen, key=lambda x: (order[x[0]], x[1]))


def _slot_map(schema, u):
    """slot -> (relation, position of that relation in incoming(u))."""
    out, count = {}, {}
    for pos, r in enumerate(schema.incoming(u)):
        k = count.get(r.src, 0)
        count[r.src] = k + 1
        out[(r.src, k)] = (r, pos)
    return out


def _in_dim(model, l, x):
    if l == 1 and model.config.sharing == "full":
        return model.schema.node_type(x).feature_dim
    return model.config.hidden_dim


def build_q_blocks(model, l, s, t):
    """Stacked Q blocks for destination types s and t at layer ``l`` (1-based).

    Returns (Q_s, Q_t, slot list). A slot that feeds only one of the two
    types contributes a zero block to the other.
    """
    _check_mode(model)
    sl = slots(model.schema, [s, t])
    d = model.config.hidden_dim
    out = []
    for u in (s, t):
        smap = _slot_map(model.schema, u)
        blocks = []
        for slot in sl:
            if slot in smap:
                r, pos = smap[slot]
                wm = model.W_block(l, u, pos) @ model.M(l, r.name).value
                blocks.append(wm.T)
            else:
                blocks.append(np.zeros((_in_dim(model, l, slot[0]), d)))
        out.append(np.vstack(blocks))
    return out[0], out[1], sl


def stacked_neighbors(graph, u, sl):
    """Dense [N_r for each slot] for destination type u (zero where absent)."""
    smap = _slot_map(graph.schema, u)
    n_u = graph.num_nodes[u]
    cols = []
    for slot in sl:
        n_x = graph.num_nodes[slot[0]]
        if slot in smap:
            cols.append(graph.neighbor_mean(smap[slot][0].name).toarray())
        else:
            cols.append(np.zeros((n_u, n_x)))
    return np.hstack(cols) if cols else np.zeros((n_u, 0))


def block_diag_embeddings(H, sl):
    return scipy.linalg.block_diag(*[H[x] for x, _ in sl])


def _values(H):
    return {k: getattr(v, "value", v) for k, v in H.items()}


def verify_block_identity(model, graph, l):
    """Max abs gap between the layer-``l`` forward pass and A H_blk Q, over
    all destination types."""
    _check_mode(model)
    layers = forward(model, graph, return_all=True)
    prev = layers[l - 1]
    lhs = _values(layer_forward(model, graph, l, prev))
    prev = _values(prev)
    worst = 0.0
    for t in model.schema.node_types:
        u = t.name
        if model.W(l, u) is None:
            continue
        q_u, _, sl = build_q_blocks(model, l, u, u)
        rhs = stacked_neighbors(graph, u, sl) @ block_diag_embeddings(prev, sl) @ q_u
        if model.config.activation == "relu":
            rhs = np.maximum(rhs, 0)
        worst = max(worst, float(np.max(np.abs(lhs[u] - rhs), initial=0.0)))
    return worst


@dataclass
class TheoryOperators:
    s: str
    t: str
    layer: int
    q_star: np.ndarray
    a_star: np.ndarray | None
    q_s: np.ndarray
    q_t: np.ndarray
    slots: list
    residual: float | None = None
    q_rank: int = 0
    q_cond: float = np.inf
    a_cond: float = np.inf


def build_theory_map(model, graph, s, t, l=None, with_adjacency=True):
    """Operators with ``H_s^(l) ~= A_star H_t^(l) Q_star`` (default l = L)."""
    _check_mode(model)
    if model.config.activation != "identity":
        raise TheoryError("cross-type map requires activation='identity'")
    l = model.config.num_layers if l is None else l
    if l < 1:
        raise TheoryError("layer must be >= 1")
    q_s, q_t, sl = build_q_blocks(model, l, s, t)
    q_t_inv, q_rank, q_cond = pinv(q_t)
    q_star = q_t_inv @ q_s
    if q_rank < min(q_t.shape):
        warnings.warn(f"Q_t is rank-deficient (rank {q_rank} of {min(q_t.shape)})", RuntimeWarning)
    ops = TheoryOperators(s, t, l, q_star, None, q_s, q_t, sl, q_rank=q_rank, q_cond=q_cond)
    if not with_adjacency:
        return ops
    a_s = stacked_neighbors(graph, s, sl)
    a_t = stacked_neighbors(graph, t, sl)
    a_t_inv, a_rank, a_cond = pinv(a_t)
    if a_rank < min(a_t.shape):
        warnings.warn(
            f"stacked neighbour operator of {t!r} is rank-deficient "
            f"(rank {a_rank} of {min(a_t.shape)})",
            RuntimeWarning,
        )
    ops.a_star = a_s @ a_t_inv
    ops.a_cond = a_cond
    H = _values(forward(model, graph, return_all=True)[l])
    recon = ops.a_star @ H[t] @ q_star
    denom = np.linalg.norm(H[s])
    ops.residual = float(np.linalg.norm(recon - H[s]) / denom) if denom > 0 else float(
        np.linalg.norm(recon)
    )
    return ops


def theoretical_transfer(H_t, ops):
    """Map target embeddings into the source feature space: H_t Q_star."""
    h = getattr(H_t, "value", H_t)
    if h.shape[1] != ops.q_star.shape[0]:
        raise ValueError(f"theoretical_transfer: {h.shape} vs Q_star {ops.q_star.shape}")
    return h @ ops.q_star

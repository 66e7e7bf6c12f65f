"""Label propagation and embedding propagation across node types."""
from __future__ import annotations

from collections import deque

import numpy as np

from .hgnn import classify
from . import autodiff as ad


def schema_distance(schema, src, dst):
    """Fewest relation hops from type ``src`` to type ``dst`` (None if unreachable)."""
    dist = {src: 0}
    todo = deque([src])
    while todo:
        x = todo.popleft()
        for r in schema.outgoing(x):
            if r.dst not in dist:
                dist[r.dst] = dist[x] + 1
                todo.append(r.dst)
    return dist.get(dst)


def default_num_iters(schema, source, target):
    d = schema_distance(schema, source, target)
    return (d if d is not None else len(schema.node_types)) + 1


def label_propagation(graph, source_type, source_labels, num_iters=None, clamp=True,
                      known=None, target_type=None, normalize=True):
    """Propagate source label distributions over every relation, ignoring type.

    Each node's new row is the mean, over incoming relations where it has
    neighbours, of the neighbour-mean of the current rows. Rows that receive
    nothing keep their value; ``known`` source rows are re-clamped each step
    when ``clamp`` is set. Returns {type: (n_type x C)}.
    """
    schema = graph.schema
    y0 = np.asarray(source_labels, dtype=float)
    C = y0.shape[1]
    if known is None:
        known = np.flatnonzero(y0.sum(axis=1) > 0)
    if num_iters is None:
        num_iters = default_num_iters(schema, source_type, target_type or source_type)
    Y = {t.name: np.zeros((graph.num_nodes[t.name], C)) for t in schema.node_types}
    Y[source_type][known] = y0[known]
    for _ in range(num_iters):
        new = {}
        for t in schema.node_types:
            acc = np.zeros_like(Y[t.name])
            cnt = np.zeros(len(acc))
            for r in schema.incoming(t.name):
                op = graph.neighbor_mean(r.name)
                acc += op.apply(Y[r.src])
                cnt += op.has_neighbors()
            upd = Y[t.name].copy()
            got = cnt > 0
            upd[got] = acc[got] / cnt[got, None]
            if normalize:
                s = upd.sum(axis=1)
                nz = s > 0
                upd[nz] /= s[nz, None]
            new[t.name] = upd
        if clamp:
            new[source_type][known] = y0[known]
        Y = new
    return Y


def embedding_propagation(graph, source_type, source_embeddings, num_iters=None,
                          target_type=None):
    """Average source embeddings outward until they reach other types.

    Only nodes already reached contribute: each relation averages over the
    reached neighbours, and a node takes the mean over the relations that
    delivered anything. Source rows stay fixed. Returns {type: embeddings}.
    """
    schema = graph.schema
    h = np.asarray(getattr(source_embeddings, "value", source_embeddings), dtype=float)
    d = h.shape[1]
    if num_iters is None:
        num_iters = default_num_iters(schema, source_type, target_type or source_type)
    Z = {t.name: np.zeros((graph.num_nodes[t.name], d)) for t in schema.node_types}
    reached = {t.name: np.zeros(graph.num_nodes[t.name], bool) for t in schema.node_types}
    Z[source_type] = h.copy()
    reached[source_type][:] = True
    for _ in range(num_iters):
        newZ, newR = {}, {}
        for t in schema.node_types:
            name = t.name
            acc = np.zeros((graph.num_nodes[name], d))
            cnt = np.zeros(graph.num_nodes[name])
            for r in schema.incoming(name):
                A = graph.adjacency(r.name).T.tocsr()  # (n_dst, n_src)
                mask = reached[r.src].astype(float)
                deg = A @ mask
                s = A @ (Z[r.src] * mask[:, None])
                ok = deg > 0
                acc[ok] += s[ok] / deg[ok, None]
                cnt += ok
            got = cnt > 0
            z = Z[name].copy()
            z[got] = acc[got] / cnt[got, None]
            newZ[name] = z
            newR[name] = reached[name] | got
        newZ[source_type] = h.copy()
        newR[source_type][:] = True
        Z, reached = newZ, newR
    return Z


def ep_predict(model, graph, source_type, target_type, source_embeddings, num_iters=None):
    """Target logits from propagated source embeddings and the source classifier."""
    Z = embedding_propagation(graph, source_type, source_embeddings, num_iters, target_type)
    return classify(model, ad.Tensor(Z[target_type])).value

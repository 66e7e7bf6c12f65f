"""Heterogeneous GNN with per-relation message and per-type transform matrices.

One layer computes, for every destination type ``t`` with incoming relations
``R(t)`` (schema order)::

    msg_r  = mean_{i -> j} M_r (h_i || h_j)       skip_concat
           = mean_{i -> j} M_r h_i                no_skip
    h_j    = act(W_t [msg_r1 || msg_r2 || ...])

Nodes with no ``r``-neighbours get a zero block for ``r``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad

MESSAGE_MODES = ("skip_concat", "no_skip")
ACTIVATIONS = ("relu", "identity")
SHARING = ("full", "v1", "v2")


@dataclass
class HgnnConfig:
    num_layers: int = 2
    hidden_dim: int = 128
    message_mode: str = "skip_concat"
    activation: str = "relu"
    sharing: str = "full"

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_dim < 1:
            raise ValueError(f"num_layers and hidden_dim must be >= 1, got {self}")
        if self.message_mode not in MESSAGE_MODES:
            raise ValueError(f"message_mode must be one of {MESSAGE_MODES}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.sharing not in SHARING:
            raise ValueError(f"sharing must be one of {SHARING}")

    @property
    def theory_mode(self):
        return self.message_mode == "no_skip" and self.activation == "identity"

    def to_dict(self):
        return asdict(self)


def glorot(rng, rows, cols):
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


class HgnnModel:
    """Parameters live in ``params`` (ordered name -> Tensor).

    Names: ``M{l}.{rel}`` / ``W{l}.{type}`` (full), ``M.{rel}`` / ``W.{type}``
    (v2), ``M{l}`` / ``W{l}`` (v1), ``P.{type}`` input projections (v1, v2),
    ``g.W`` / ``g.b`` classifier. Layers are numbered from 1.
    """

    def __init__(self, schema, config, num_classes, params):
        self.schema = schema
        self.config = config
        self.num_classes = num_classes
        self.params = params

    # parameter lookup ---------------------------------------------------
    def M(self, l, rel):
        s = self.config.sharing
        key = f"M{l}.{rel}" if s == "full" else f"M.{rel}" if s == "v2" else f"M{l}"
        return self.params[key]

    def W(self, l, t):
        s = self.config.sharing
        key = f"W{l}.{t}" if s == "full" else f"W.{t}" if s == "v2" else f"W{l}"
        return self.params.get(key)

    def W_block(self, l, t, k):
        """Columns of W_t^(l) that act on the k-th concatenated message."""
        d = self.config.hidden_dim
        return self.W(l, t).value[:, k * d:(k + 1) * d]

    def parameters(self):
        return list(self.params.values())

    def hgnn_parameters(self):
        return [p for n, p in self.params.items() if not n.startswith("g.")]

    def num_parameters(self):
        return sum(p.value.size for p in self.params.values())

    def copy(self):
        params = {k: ad.parameter(v.value.copy(), name=k) for k, v in self.params.items()}
        return HgnnModel(self.schema, self.config, self.num_classes, params)


def _in_dims(schema, config, layer):
    if layer > 1 or config.sharing != "full":
        return {t.name: config.hidden_dim for t in schema.node_types}
    return {t.name: t.feature_dim for t in schema.node_types}


def init_model(schema, config, seed=0, num_classes=None):
    if not schema.node_types:
        raise ValueError("schema has no node types")
    if num_classes is None:
        num_classes = next((t.num_classes for t in schema.node_types if t.num_classes), 0)
    if num_classes < 1:
        raise ValueError("classifier needs num_classes >= 1")
    rng = np.random.default_rng(seed)
    d = config.hidden_dim
    skip = config.message_mode == "skip_concat"
    params = {}

    def add(name, rows, cols):
        params[name] = ad.parameter(glorot(rng, rows, cols), name=name)

    if config.sharing in ("v1", "v2"):
        for t in schema.node_types:
            add(f"P.{t.name}", d, t.feature_dim)

    if config.sharing == "v1":
        r_max = max((len(schema.incoming(t.name)) for t in schema.node_types), default=0)
        for l in range(1, config.num_layers + 1):
            add(f"M{l}", d, 2 * d if skip else d)
            if r_max:
                add(f"W{l}", d, r_max * d)
    else:
        layers = [1] if config.sharing == "v2" else range(1, config.num_layers + 1)
        for l in layers:
            dims = _in_dims(schema, config, l)
            for r in schema.relations:
                name = f"M.{r.name}" if config.sharing == "v2" else f"M{l}.{r.name}"
                add(name, d, dims[r.src] + dims[r.dst] if skip else dims[r.src])
            for t in schema.node_types:
                k = len(schema.incoming(t.name))
                if k:
                    add(f"W.{t.name}" if config.sharing == "v2" else f"W{l}.{t.name}", d, k * d)

    params["g.W"] = ad.parameter(glorot(rng, num_classes, d), name="g.W")
    params["g.b"] = ad.parameter(np.zeros((1, num_classes)), name="g.b")
    return HgnnModel(schema, config, num_classes, params)


def _mask_op(graph, rel):
    key = ("mask", rel)
    if key not in graph._ops:
        has = graph.neighbor_mean(rel).has_neighbors().astype(float)
        graph._ops[key] = sp.diags(has, format="csr")
    return graph._ops[key]


def message(model, l, rel, h_src, h_dst_aligned=None):
    """Per-edge messages for aligned source/destination rows (one row per edge)."""
    M = model.M(l, rel)
    if model.config.message_mode == "skip_concat":
        if h_dst_aligned is None:
            raise ValueError("skip_concat messages need destination embeddings")
        x = ad.concat_cols([h_src, h_dst_aligned])
    else:
        x = h_src
    if x.shape[1] != M.shape[1]:
        raise ad.ShapeError(f"message: input width {x.shape[1]} vs M{l}.{rel} {M.shape}")
    return ad.matmul(x, ad.transpose(M))


def _activate(model, z):
    return ad.relu(z) if model.config.activation == "relu" else ad.identity(z)


def input_embeddings(model, graph, features=None):
    feats = graph.features if features is None else features
    H = {}
    for t in model.schema.node_types:
        x = feats.get(t.name)
        if x is None:
            raise KeyError(f"missing feature matrix for type {t.name!r}")
        x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
        if model.config.sharing in ("v1", "v2"):
            x = ad.matmul(x, ad.transpose(model.params[f"P.{t.name}"]))
        H[t.name] = x
    return H


def _slot_relations(schema, t, as_type):
    """Incoming relations of ``t`` laid out in the slots of ``as_type``.

    Slot k of ``as_type`` (its k-th incoming relation, source x) receives the
    relation into ``t`` that is the same-numbered occurrence of source x.
    """
    into_t = schema.incoming(t)
    out = []
    for k, r in enumerate(schema.incoming(as_type)):
        occ = sum(1 for q in schema.incoming(as_type)[:k] if q.src == r.src)
        cands = [q for q in into_t if q.src == r.src]
        out.append((r, cands[occ] if occ < len(cands) else None))
    return out


def layer_forward(model, graph, l, H, type_override=None):
    """One layer: H^(l-1) (dict type -> Tensor) to H^(l).

    W_t [msg_1 || ... || msg_k] is evaluated as sum_k x_k (W_t[:, k] M_k)^T,
    where x_k is the aggregated input of slot k. Same value, one fewer
    n x d x d product per slot.
    """
    d = model.config.hidden_dim
    skip = model.config.message_mode == "skip_concat"
    schema = model.schema
    out = {}
    for t in schema.node_types:
        name = t.name
        n = graph.num_nodes[name]
        as_type = (type_override or {}).get(name, name)
        W = model.W(l, as_type)
        if W is None:
            out[name] = ad.Tensor(np.zeros((n, d)))
            continue
        z = None
        for k, (r_param, r_graph) in enumerate(_slot_relations(schema, name, as_type)):
            if r_graph is None:
                continue
            agg = ad.sparse_matmul(graph.neighbor_mean(r_graph.name), H[r_graph.src])
            if skip:
                dst = ad.sparse_matmul(_mask_op(graph, r_graph.name), H[name])
                agg = ad.concat_cols([agg, dst])
            M = model.M(l, r_param.name)
            if agg.shape[1] != M.shape[1]:
                raise ad.ShapeError(
                    f"layer {l} relation {r_param.name}: input width {agg.shape[1]} vs M {M.shape}"
                )
            U = ad.matmul(ad.take_cols(W, k * d, (k + 1) * d), M)
            term = ad.matmul(agg, ad.transpose(U))
            z = term if z is None else ad.scale_add(z, term)
        if z is None:
            z = ad.Tensor(np.zeros((n, d)))
        out[name] = _activate(model, z)
    return out


def forward(model, graph, features=None, type_override=None, return_all=False):
    """Final-layer embeddings {type: Tensor}; with ``return_all`` the list of
    every layer's embeddings, H^(0) first.

    ``type_override`` maps a type to the type whose parameters compute it
    (e.g. ``{"t": "s"}`` runs t-nodes through the source extractor).
    """
    H = input_embeddings(model, graph, features)
    layers = [H]
    for l in range(1, model.config.num_layers + 1):
        H = layer_forward(model, graph, l, H, type_override)
        layers.append(H)
    return layers if return_all else H


def classify(model, H):
    gW = model.params["g.W"]
    if H.shape[1] != gW.shape[1]:
        raise ad.ShapeError(f"classify: embeddings {H.shape} vs classifier {gW.shape}")
    return ad.add_bias(ad.matmul(H, ad.transpose(gW)), model.params["g.b"])


def grad_norms(model, params=None):
    """Euclidean norm of every gradient buffer, keyed by parameter name."""
    items = model.params.items() if params is None else params.items()
    return {k: float(np.linalg.norm(p.grad)) if p.grad is not None else 0.0 for k, p in items}

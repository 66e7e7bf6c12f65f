"""Heterogeneous graph data model and neighbor-mean operators."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class NodeType:
    id: int
    name: str
    feature_dim: int
    num_classes: int = 0


@dataclass(frozen=True)
class RelationType:
    name: str
    src: str
    dst: str


@dataclass
class Schema:
    """Node types and relation types; declaration order is canonical."""

    node_types: list[NodeType]
    relations: list[RelationType]

    def __post_init__(self):
        self._types = {t.name: t for t in self.node_types}
        self._rels = {r.name: r for r in self.relations}

    @classmethod
    def build(cls, types, relations):
        """``types``: iterable of (name, feature_dim[, num_classes]);
        ``relations``: iterable of (name, src, dst)."""
        nts = []
        for i, t in enumerate(types):
            name, dim, *rest = t
            nts.append(NodeType(i, name, int(dim), int(rest[0]) if rest else 0))
        return cls(nts, [RelationType(*r) for r in relations])

    @property
    def type_names(self):
        return [t.name for t in self.node_types]

    def node_type(self, name):
        try:
            return self._types[name]
        except KeyError:
            raise GraphError(f"unknown node type {name!r}") from None

    def relation(self, name):
        try:
            return self._rels[name]
        except KeyError:
            raise GraphError(f"unknown relation {name!r}") from None

    def incoming(self, t):
        """Relations whose destination is ``t``, in declaration order."""
        return [r for r in self.relations if r.dst == t]

    def outgoing(self, t):
        return [r for r in self.relations if r.src == t]

    def check(self):
        """Return schema-level violations as strings."""
        out = []
        ids = sorted(t.id for t in self.node_types)
        if ids != list(range(len(ids))):
            out.append(f"node type ids not dense in [0, {len(ids)}): {ids}")
        if len(self._types) != len(self.node_types):
            out.append("duplicate node type names")
        seen = set()
        for r in self.relations:
            for end in (r.src, r.dst):
                if end not in self._types:
                    out.append(f"relation {r.name!r}: unknown endpoint type {end!r}")
            key = (r.src, r.dst, r.name)
            if key in seen:
                out.append(f"relation {r.name!r}: duplicate (src, dst, name)")
            seen.add(key)
        if len(self._rels) != len(self.relations):
            out.append("duplicate relation names")
        return out

    def to_dict(self):
        return {
            "node_types": [
                {"name": t.name, "feature_dim": t.feature_dim, "num_classes": t.num_classes}
                for t in self.node_types
            ],
            "relations": [{"name": r.name, "src": r.src, "dst": r.dst} for r in self.relations],
        }

    @classmethod
    def from_dict(cls, d):
        types = [(t["name"], t["feature_dim"], t.get("num_classes", 0)) for t in d["node_types"]]
        rels = [(r["name"], r["src"], r["dst"]) for r in d["relations"]]
        return cls.build(types, rels)


@dataclass
class NeighborMeanOperator:
    """Row-normalized operator for relation ``src -> dst``.

    ``matrix`` has shape (n_dst, n_src); row j averages the src-neighbors of
    dst node j and is all-zero when j has none.
    """

    relation: RelationType
    matrix: sp.csr_matrix

    @property
    def shape(self):
        return self.matrix.shape

    def has_neighbors(self):
        return np.diff(self.matrix.indptr) > 0

    def apply(self, x, backend=None):
        m = self.matrix
        return kernels.csr_matmul(m.indptr, m.indices, m.data, np.asarray(x, float), backend)

    def apply_t(self, g, backend=None):
        m = self.matrix
        return kernels.csr_matmul_t(
            m.indptr, m.indices, m.data, np.asarray(g, float), m.shape[1], backend
        )

    def toarray(self):
        return self.matrix.toarray()


@dataclass
class HeteroGraph:
    """Typed node sets, relation edge blocks, features and optional labels.

    ``edges[rel]`` is an (m, 2) int array of (src_id, dst_id) pairs, with ids
    local to the endpoint types.
    """

    schema: Schema
    num_nodes: dict[str, int]
    edges: dict[str, np.ndarray]
    features: dict[str, np.ndarray]
    labels: dict[str, np.ndarray] = field(default_factory=dict)
    _ops: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for r in self.schema.relations:
            e = self.edges.get(r.name)
            if e is None:
                e = np.zeros((0, 2), dtype=np.int64)
            e = np.asarray(e, dtype=np.int64).reshape(-1, 2)
            if len(e):
                # multi-edges collapse to one edge; sorted by (dst, src)
                e = np.unique(e[np.lexsort((e[:, 0], e[:, 1]))], axis=0)
                e = e[np.lexsort((e[:, 0], e[:, 1]))]
            self.edges[r.name] = e
        self.features = {k: np.asarray(v, dtype=np.float64) for k, v in self.features.items()}

    def adjacency(self, rel):
        """Binary block A_r of shape (n_src, n_dst)."""
        r = self.schema.relation(rel)
        e = self.edges[rel]
        return sp.csr_matrix(
            (np.ones(len(e)), (e[:, 0], e[:, 1])),
            shape=(self.num_nodes[r.src], self.num_nodes[r.dst]),
        )

    def neighbor_mean(self, rel):
        """Cached :func:`build_neighbor_mean`."""
        if rel not in self._ops:
            self._ops[rel] = build_neighbor_mean(self, rel)
        return self._ops[rel]

    def num_classes(self, t):
        return self.schema.node_type(t).num_classes


def build_neighbor_mean(graph, relation):
    if isinstance(relation, RelationType):
        relation = relation.name
    r = graph.schema.relation(relation)
    e = graph.edges[r.name]
    n_src, n_dst = graph.num_nodes[r.src], graph.num_nodes[r.dst]
    deg = np.bincount(e[:, 1], minlength=n_dst).astype(float) if len(e) else np.zeros(n_dst)
    w = 1.0 / deg[e[:, 1]] if len(e) else np.zeros(0)
    m = sp.csr_matrix((w, (e[:, 1], e[:, 0])), shape=(n_dst, n_src))
    m.sort_indices()
    return NeighborMeanOperator(r, m)


def validate(graph):
    """List every invariant violation; empty when the graph is well formed."""
    out = list(graph.schema.check())
    names = set(graph.schema.type_names)
    for t in graph.schema.node_types:
        n = graph.num_nodes.get(t.name)
        if n is None:
            out.append(f"type {t.name!r}: missing node count")
            continue
        x = graph.features.get(t.name)
        if x is None:
            out.append(f"type {t.name!r}: missing feature matrix")
        elif x.ndim != 2 or x.shape[0] != n:
            out.append(f"type {t.name!r}: feature matrix has {x.shape[0]} rows, expected {n}")
        elif x.shape[1] != t.feature_dim:
            out.append(
                f"type {t.name!r}: feature matrix has {x.shape[1]} columns, expected {t.feature_dim}"
            )
        elif not np.all(np.isfinite(x)):
            out.append(f"type {t.name!r}: non-finite feature values")
        y = graph.labels.get(t.name)
        if y is not None:
            if y.shape != (n, t.num_classes):
                out.append(f"type {t.name!r}: label matrix shape {y.shape}, expected {(n, t.num_classes)}")
            elif not np.all((y == 0) | (y == 1)):
                out.append(f"type {t.name!r}: labels are not 0/1")
    for r in graph.schema.relations:
        if r.src not in names or r.dst not in names:
            continue
        e = graph.edges.get(r.name)
        if e is None:
            continue
        ns, nd = graph.num_nodes.get(r.src, 0), graph.num_nodes.get(r.dst, 0)
        for k in np.flatnonzero((e[:, 0] < 0) | (e[:, 0] >= ns)):
            out.append(f"relation {r.name!r} edge {k}: src index {e[k, 0]} out of range [0, {ns})")
        for k in np.flatnonzero((e[:, 1] < 0) | (e[:, 1] >= nd)):
            out.append(f"relation {r.name!r} edge {k}: dst index {e[k, 1]} out of range [0, {nd})")
    return out


def toy_schema(feature_dim=24, num_classes=4):
    """Two types s, t with the four relations ss, ts, st, tt."""
    return Schema.build(
        [("s", feature_dim, num_classes), ("t", feature_dim, num_classes)],
        [("ss", "s", "s"), ("ts", "t", "s"), ("st", "s", "t"), ("tt", "t", "t")],
    )

"""Attributed stochastic block model for heterogeneous graphs.

Each type is split into clusters; clusters of different types are tied
together by cluster groups. Edges of a relation x -> y are drawn
independently with probability ``p = snr * q`` when the endpoints share a
cluster (x == y) or a cluster group (x != y), and ``q`` otherwise. Features
are Gaussian around per-cluster centres with unit within-cluster std.

Feature SNR for a type pair:

* ``x-x``: std of the cluster-centre coordinates of type x.
* ``x-y``: cross-type alignment. Centres of both types mix in a shared
  per-group component with weight ``rho = 1 - 1/snr`` (0 at snr = 1), at
  fixed total centre variance.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .graph import HeteroGraph, Schema

DEFAULT_Q = 0.002
DEFAULT_SNR = 10.0


@dataclass(frozen=True)
class TypeSpec:
    name: str
    num_clusters: int
    cluster_size: int
    feature_dim: int

    @property
    def num_nodes(self):
        return self.num_clusters * self.cluster_size


def pair_key(a, b, order):
    a, b = sorted((a, b), key=order.index)
    return f"{a}-{b}"


@dataclass
class SynthConfig:
    types: list
    relations: list  # (name, src, dst)
    edge_snr: dict = field(default_factory=dict)
    feature_snr: dict = field(default_factory=dict)
    q: float = DEFAULT_Q
    groups: dict | None = None  # type -> group id per cluster
    seed: int = 0

    def __post_init__(self):
        self.types = [t if isinstance(t, TypeSpec) else TypeSpec(**t) for t in self.types]
        self.relations = [tuple(r) for r in self.relations]

    @property
    def type_names(self):
        return [t.name for t in self.types]

    def type_spec(self, name):
        return next(t for t in self.types if t.name == name)

    @property
    def num_groups(self):
        return min(t.num_clusters for t in self.types)

    def pair(self, a, b):
        return pair_key(a, b, self.type_names)

    def pairs(self):
        names = self.type_names
        return [self.pair(a, b) for i, a in enumerate(names) for b in names[i:]]

    def edge_sigma(self, a, b):
        return float(self.edge_snr.get(self.pair(a, b), DEFAULT_SNR))

    def feature_sigma(self, a, b):
        return float(self.feature_snr.get(self.pair(a, b), DEFAULT_SNR))

    def cluster_groups(self, t):
        if self.groups and t in self.groups:
            return np.asarray(self.groups[t], dtype=np.int64)
        return np.arange(self.type_spec(t).num_clusters) % self.num_groups

    def check(self):
        if not 0 < self.q <= 1:
            raise ValueError(f"q must be in (0, 1], got {self.q}")
        names = self.type_names
        for a, b in ((a, b) for i, a in enumerate(names) for b in names[i:]):
            se, sf = self.edge_sigma(a, b), self.feature_sigma(a, b)
            if se < 1 or sf < 1:
                raise ValueError(f"SNRs must be >= 1 for pair {self.pair(a, b)}: {se}, {sf}")
            if se * self.q > 1:
                raise ValueError(f"p = {se} * {self.q} exceeds 1 for pair {self.pair(a, b)}")
        k = self.num_groups
        for t in names:
            g = self.cluster_groups(t)
            if len(g) != self.type_spec(t).num_clusters:
                raise ValueError(f"type {t!r}: group map has wrong length")
            if set(g.tolist()) != set(range(k)):
                raise ValueError(f"type {t!r}: every one of {k} groups needs a cluster")
        for name, src, dst in self.relations:
            if src not in names or dst not in names:
                raise ValueError(f"relation {name!r}: unknown endpoint")

    def schema(self):
        return Schema.build(
            [(t.name, t.feature_dim, t.num_clusters) for t in self.types], self.relations
        )

    def to_dict(self):
        d = asdict(self)
        d["types"] = [asdict(t) for t in self.types]
        d["relations"] = [list(r) for r in self.relations]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class SynthGraph:
    graph: HeteroGraph
    truth: dict  # type -> (cluster ids, group ids)
    config: SynthConfig

    def cross_labels(self, target, source):
        """Multi-hot (n_target x k_source): source clusters in each target node's group."""
        _, tg = self.truth[target]
        src_groups = self.config.cluster_groups(source)
        return (tg[:, None] == src_groups[None, :]).astype(float)


def _orthonormal_rows(rng, rows, cols):
    q, _ = np.linalg.qr(rng.standard_normal((cols, rows)))
    return q.T


def generate(config):
    config.check()
    names = config.type_names
    ss = np.random.SeedSequence(config.seed)
    rng_feat, rng_edge = (np.random.default_rng(s) for s in ss.spawn(2))

    clusters, groups = {}, {}
    for t in config.types:
        c = np.repeat(np.arange(t.num_clusters), t.cluster_size)
        clusters[t.name] = c
        groups[t.name] = config.cluster_groups(t.name)[c]

    # features
    dz = max(t.feature_dim for t in config.types)
    k = config.num_groups
    shared = rng_feat.standard_normal((k, dz))
    features, labels = {}, {}
    for t in config.types:
        others = [o for o in names if o != t.name]
        rho = np.mean([1.0 - 1.0 / config.feature_sigma(t.name, o) for o in others]) if others else 0.0
        proj = _orthonormal_rows(rng_feat, t.feature_dim, dz)
        own = rng_feat.standard_normal((t.num_clusters, t.feature_dim))
        grp = config.cluster_groups(t.name)
        centers = config.feature_sigma(t.name, t.name) * (
            np.sqrt(rho) * shared[grp] @ proj.T + np.sqrt(1.0 - rho) * own
        )
        noise = rng_feat.standard_normal((t.num_nodes, t.feature_dim))
        features[t.name] = centers[clusters[t.name]] + noise
        labels[t.name] = np.eye(t.num_clusters)[clusters[t.name]]

    # edges
    edges = {}
    for name, src, dst in config.relations:
        p = config.edge_sigma(src, dst) * config.q
        if src == dst:
            same = clusters[src][:, None] == clusters[dst][None, :]
        else:
            same = groups[src][:, None] == groups[dst][None, :]
        prob = np.where(same, p, config.q)
        hit = rng_edge.random(prob.shape) < prob
        if src == dst:
            np.fill_diagonal(hit, False)
        i, j = np.nonzero(hit)
        edges[name] = np.stack([i, j], axis=1)

    graph = HeteroGraph(
        config.schema(),
        {t.name: t.num_nodes for t in config.types},
        edges,
        features,
        labels,
    )
    truth = {t: (clusters[t], groups[t]) for t in names}
    return SynthGraph(graph, truth, config)


# -- canned configurations --------------------------------------------------

TWO_TYPE_RELATIONS = [("ss", "s", "s"), ("ts", "t", "s"), ("st", "s", "t"), ("tt", "t", "t")]


def toy_config(seed=0):
    """Two types, 4 clusters x 400 nodes each, 24-d features, all SNRs 10."""
    types = [TypeSpec("s", 4, 400, 24), TypeSpec("t", 4, 400, 24)]
    snr = {"s-s": 10.0, "t-t": 10.0, "s-t": 10.0}
    return SynthConfig(types, TWO_TYPE_RELATIONS, dict(snr), dict(snr), DEFAULT_Q, None, seed)


SWEEP_PAIRS = tuple(f"{kind}:{p}" for kind in ("edge", "feature") for p in ("s-s", "t-t", "s-t"))


def scenario_config(scenario, seed=0):
    if scenario == "easy":
        return toy_config(seed)
    if scenario == "hard":
        types = [TypeSpec("s", 4, 400, 32), TypeSpec("t", 8, 200, 48)]
        snr = {"s-s": 10.0, "t-t": 10.0, "s-t": 10.0}
        return SynthConfig(types, TWO_TYPE_RELATIONS, dict(snr), dict(snr), DEFAULT_Q, None, seed)
    raise ValueError(f"scenario must be 'easy' or 'hard', got {scenario!r}")


def sensitivity_grid(scenario, swept_pair, values, seed=0):
    """One config per value of the swept (kind, pair); everything else at 10.

    ``swept_pair`` is ``"edge:s-t"``-style, kind in {edge, feature}, pair in
    {s-s, t-t, s-t}.
    """
    if swept_pair not in SWEEP_PAIRS:
        raise ValueError(f"swept_pair must be one of {SWEEP_PAIRS}, got {swept_pair!r}")
    kind, pair = swept_pair.split(":")
    base = scenario_config(scenario, seed)
    out = []
    for v in values:
        v = float(v)
        if not 1.0 <= v <= 10.0:
            raise ValueError(f"sweep values must lie in [1, 10], got {v}")
        if kind == "edge":
            out.append(replace(base, edge_snr={**base.edge_snr, pair: v}))
        else:
            out.append(replace(base, feature_snr={**base.feature_snr, pair: v}))
    return out


def indirect_config(seed=0):
    """Types t - x - s with no direct t/s relation."""
    types = [TypeSpec("s", 4, 400, 24), TypeSpec("x", 4, 400, 24), TypeSpec("t", 4, 400, 24)]
    relations = [
        ("ss", "s", "s"), ("xs", "x", "s"),
        ("sx", "s", "x"), ("xx", "x", "x"), ("tx", "t", "x"),
        ("xt", "x", "t"), ("tt", "t", "t"),
    ]
    snr = {p: 10.0 for p in ("s-s", "x-x", "t-t", "s-x", "x-t", "s-t")}
    return SynthConfig(types, relations, dict(snr), dict(snr), DEFAULT_Q, None, seed)

"""Directory interchange format for heterogeneous graphs.

Layout::

    schema.json              node types (name, feature_dim, num_classes), relations
    features_<type>.csv      one row per node, fixed column count
    labels_<type>.csv        optional multi-hot 0/1 rows
    edges_<relation>.csv     header ``src_id,dst_id``, 0-based ids
    truth_<type>.csv         optional generator ground truth ``cluster,group``
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .graph import GraphError, HeteroGraph, Schema, validate


def _write_matrix(path, x, fmt):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for row in x:
            w.writerow([fmt(v) for v in row])


def _read_matrix(path, ncols, dtype):
    rows = []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if len(row) != ncols:
                raise GraphError(f"{path}:{lineno}: expected {ncols} columns, got {len(row)}")
            try:
                rows.append([dtype(v) for v in row])
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: {exc}") from None
    return np.array(rows, dtype=float if dtype is float else np.int64).reshape(len(rows), ncols)


def save_graph(graph, path, truth=None):
    """Write ``graph`` (and optional ``truth`` {type: (cluster, group)}) to ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    doc = graph.schema.to_dict()
    for t in doc["node_types"]:
        t["num_nodes"] = int(graph.num_nodes[t["name"]])
    (path / "schema.json").write_text(json.dumps(doc, indent=2) + "\n")
    for t in graph.schema.type_names:
        # repr() of a float64 round-trips exactly
        _write_matrix(path / f"features_{t}.csv", graph.features[t], lambda v: repr(float(v)))
        if t in graph.labels:
            _write_matrix(path / f"labels_{t}.csv", graph.labels[t].astype(int), str)
    for r in graph.schema.relations:
        with open(path / f"edges_{r.name}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["src_id", "dst_id"])
            w.writerows(graph.edges[r.name].tolist())
    for t, (cluster, group) in (truth or {}).items():
        with open(path / f"truth_{t}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["cluster", "group"])
            w.writerows(zip(np.asarray(cluster).tolist(), np.asarray(group).tolist()))


def load_graph(path):
    path = Path(path)
    schema_path = path / "schema.json"
    if not schema_path.exists():
        raise GraphError(f"{schema_path}: not found")
    try:
        doc = json.loads(schema_path.read_text())
        schema = Schema.from_dict(doc)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise GraphError(f"{schema_path}: malformed schema ({exc!r})") from None
    problems = schema.check()
    if problems:
        raise GraphError(f"{schema_path}: " + "; ".join(problems))

    num_nodes, features, labels, edges = {}, {}, {}, {}
    for t, td in zip(schema.node_types, doc["node_types"]):
        fpath = path / f"features_{t.name}.csv"
        if not fpath.exists():
            raise GraphError(f"{fpath}: not found")
        x = _read_matrix(fpath, t.feature_dim, float)
        n = int(td.get("num_nodes", x.shape[0]))
        if x.shape[0] != n:
            raise GraphError(f"{fpath}: {x.shape[0]} rows but schema declares {n} nodes")
        num_nodes[t.name], features[t.name] = n, x
        lpath = path / f"labels_{t.name}.csv"
        if lpath.exists():
            y = _read_matrix(lpath, t.num_classes, int)
            if y.shape[0] != n:
                raise GraphError(f"{lpath}: {y.shape[0]} rows, expected {n}")
            if not np.all((y == 0) | (y == 1)):
                raise GraphError(f"{lpath}: labels must be 0/1")
            labels[t.name] = y.astype(float)
    for r in schema.relations:
        epath = path / f"edges_{r.name}.csv"
        if not epath.exists():
            raise GraphError(f"{epath}: not found")
        with open(epath, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ["src_id", "dst_id"]:
                raise GraphError(f"{epath}:1: expected header src_id,dst_id, got {header}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    i, j = (int(v) for v in row)
                except ValueError:
                    raise GraphError(f"{epath}:{lineno}: bad edge row {row}") from None
                ns, nd = num_nodes[r.src], num_nodes[r.dst]
                if not (0 <= i < ns and 0 <= j < nd):
                    raise GraphError(
                        f"{epath}:{lineno}: edge ({i}, {j}) out of range for ({ns}, {nd}) nodes"
                    )
                rows.append((i, j))
        edges[r.name] = np.array(rows, dtype=np.int64).reshape(-1, 2)
    g = HeteroGraph(schema, num_nodes, edges, features, labels)
    problems = validate(g)
    if problems:
        raise GraphError(f"{path}: " + "; ".join(problems))
    return g


def load_truth(path):
    """Read ``truth_<type>.csv`` files; returns {type: (cluster, group)}."""
    out = {}
    for p in sorted(Path(path).glob("truth_*.csv")):
        a = np.loadtxt(p, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        out[p.stem[len("truth_"):]] = (a[:, 0], a[:, 1])
    return out

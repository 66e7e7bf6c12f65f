"""JSON checkpoints with bit-exact float64 parameters."""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .graph import Schema
from .hgnn import HgnnConfig, HgnnModel
from .ktn import KtnMapper

FORMAT = "ktnlab-checkpoint/1"


def encode_array(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d):
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def to_dict(model, mapper=None, extra=None):
    doc = {
        "format": FORMAT,
        "schema": model.schema.to_dict(),
        "hgnn": model.config.to_dict(),
        "num_classes": model.num_classes,
        # a list keeps parameter order under sort_keys
        "params": [[k, encode_array(p.value)] for k, p in model.params.items()],
        "mapper": None,
        "extra": extra or {},
    }
    if mapper is not None:
        doc["mapper"] = {
            "source": mapper.source,
            "target": mapper.target,
            "paths": [list(p) for p in mapper.paths],
            "transforms": [[encode_array(T.value) for T in steps] for steps in mapper.transforms],
            "names": [[T.name for T in steps] for steps in mapper.transforms],
            "lam": mapper.lam,
            "normalize": mapper.normalize,
            "loss_kind": mapper.loss_kind,
            "trained": mapper.trained,
        }
    return doc


def from_dict(doc):
    if doc.get("format") != FORMAT:
        raise ValueError(f"not a checkpoint: format is {doc.get('format')!r}")
    schema = Schema.from_dict(doc["schema"])
    params = {k: ad.parameter(decode_array(v), name=k) for k, v in doc["params"]}
    model = HgnnModel(schema, HgnnConfig(**doc["hgnn"]), doc["num_classes"], params)
    m = doc.get("mapper")
    mapper = None
    if m is not None:
        transforms = [
            [ad.parameter(decode_array(a), name=n) for a, n in zip(steps, names)]
            for steps, names in zip(m["transforms"], m["names"])
        ]
        mapper = KtnMapper(
            m["source"], m["target"], [tuple(p) for p in m["paths"]], transforms,
            m["lam"], m["normalize"], m["loss_kind"], m["trained"],
        )
    return model, mapper, doc.get("extra", {})


def save(path, model, mapper=None, extra=None):
    Path(path).write_text(json.dumps(to_dict(model, mapper, extra), indent=1, sort_keys=True) + "\n")


def load(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: cannot read checkpoint: {exc}") from None
    return from_dict(doc)

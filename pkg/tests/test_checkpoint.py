import json

import numpy as np
import pytest

from ktnlab import checkpoint
from ktnlab.hgnn import HgnnConfig, forward, init_model
from ktnlab.ktn import init_mapper, ktn_map_test


@pytest.mark.parametrize("sharing", ["full", "v1", "v2"])
def test_roundtrip_bit_exact(tmp_path, small_graph, sharing):
    m = init_model(small_graph.schema, HgnnConfig(2, 5, sharing=sharing), seed=4)
    mp = init_mapper(small_graph.schema, "s", "t", 5, seed=4, lam=0.5, loss_kind="frobenius")
    mp.trained = True
    path = tmp_path / "ck.json"
    checkpoint.save(path, m, mp, extra={"note": 1})
    m2, mp2, extra = checkpoint.load(path)
    assert extra == {"note": 1}
    assert list(m2.params) == list(m.params)
    for k in m.params:
        assert m2.params[k].value.tobytes() == m.params[k].value.tobytes()
    assert m2.config == m.config and m2.schema.to_dict() == m.schema.to_dict()
    assert (mp2.paths, mp2.lam, mp2.loss_kind, mp2.trained) == (mp.paths, 0.5, "frobenius", True)
    H, H2 = forward(m, small_graph), forward(m2, small_graph)
    assert ktn_map_test(mp, H["t"]).value.tobytes() == ktn_map_test(mp2, H2["t"]).value.tobytes()


def test_without_mapper(tmp_path, small_graph):
    m = init_model(small_graph.schema, HgnnConfig(1, 3))
    checkpoint.save(tmp_path / "c.json", m)
    assert checkpoint.load(tmp_path / "c.json")[1] is None


def test_rejects_foreign_json(tmp_path):
    (tmp_path / "x.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(ValueError, match="not a checkpoint"):
        checkpoint.load(tmp_path / "x.json")
    with pytest.raises(ValueError, match="cannot read"):
        checkpoint.load(tmp_path / "missing.json")


def test_special_values_survive():
    a = np.array([[np.inf, -0.0, 5e-324, np.nan]])
    b = checkpoint.decode_array(checkpoint.encode_array(a))
    assert a.tobytes() == b.tobytes()

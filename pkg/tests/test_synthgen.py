import numpy as np
import pytest

from ktnlab.graph import validate
from ktnlab.ktn import enumerate_metapaths
from ktnlab.synthgen import (
    SWEEP_PAIRS, SynthConfig, TypeSpec, generate, indirect_config, scenario_config,
    sensitivity_grid, toy_config,
)


def one_type(snr, q, k=2, size=400, seed=0, dim=2, fsnr=10.0):
    return SynthConfig([TypeSpec("a", k, size, dim)], [("aa", "a", "a")],
                       {"a-a": snr}, {"a-a": fsnr}, q, None, seed)


def densities(sg, rel="aa"):
    e = sg.graph.edges[rel]
    c, _ = sg.truth["a"]
    same = c[e[:, 0]] == c[e[:, 1]]
    n = len(c)
    sizes = np.bincount(c)
    n_within = int(np.sum(sizes * (sizes - 1)))
    n_between = n * n - n - n_within
    return same.sum(), n_within, (~same).sum(), n_between


def pooled_ratio(snr, q, seeds=5):
    w = nw = b = nb = 0
    for seed in range(seeds):
        a, c, d, e = densities(generate(one_type(snr, q, seed=seed)))
        w, nw, b, nb = w + a, nw + c, b + d, nb + e
    pw, pb = w / nw, b / nb
    r = pw / pb
    se = r * np.sqrt((1 - pw) / (nw * pw) + (1 - pb) / (nb * pb))
    return r, se


def test_toy_config_constants():
    cfg = toy_config()
    assert [t.num_nodes for t in cfg.types] == [1600, 1600]
    assert [t.feature_dim for t in cfg.types] == [24, 24]
    assert all(cfg.edge_sigma(a, b) == 10 and cfg.feature_sigma(a, b) == 10
               for a, b in [("s", "s"), ("t", "t"), ("s", "t")])
    assert [r[0] for r in cfg.relations] == ["ss", "ts", "st", "tt"]


def test_node_counts_labels_and_validity():
    sg = generate(toy_config(1))
    g = sg.graph
    assert g.num_nodes == {"s": 1600, "t": 1600}
    assert validate(g) == []
    assert np.all(g.labels["s"].sum(axis=1) == 1)
    assert np.array_equal(g.labels["t"].argmax(axis=1), sg.truth["t"][0])


def test_expected_degree_near_twenty():
    g = generate(toy_config(0)).graph
    deg = sum(np.bincount(g.edges[r.name][:, 1], minlength=1600) for r in g.schema.incoming("s"))
    assert 15 < deg.mean() < 25


def test_determinism():
    a, b = generate(toy_config(4)), generate(toy_config(4))
    for r in a.graph.edges:
        assert np.array_equal(a.graph.edges[r], b.graph.edges[r])
    for t in a.graph.features:
        assert a.graph.features[t].tobytes() == b.graph.features[t].tobytes()


def test_no_self_loops_within_type():
    g = generate(toy_config(0)).graph
    for r in ("ss", "tt"):
        e = g.edges[r]
        assert not np.any(e[:, 0] == e[:, 1])


def test_snr_one_density_ratio_is_one():
    r, se = pooled_ratio(1.0, 0.01)
    assert abs(r - 1.0) < 3 * se


def test_snr_ten_density_ratio():
    r, _ = pooled_ratio(10.0, 0.01)
    assert 8 <= r <= 12


def test_cross_type_edges_follow_groups():
    sg = generate(toy_config(0))
    e = sg.graph.edges["st"]
    gs, gt = sg.truth["s"][1], sg.truth["t"][1]
    frac_same = np.mean(gs[e[:, 0]] == gt[e[:, 1]])
    # p / (p + 3q) for 4 equal groups at snr 10
    assert abs(frac_same - 10 / 13) < 0.03


def test_center_spread_grows_with_feature_snr():
    def spread(f):
        d = []
        for seed in range(5):
            sg = generate(one_type(2.0, 0.001, k=6, size=50, seed=seed, dim=8, fsnr=f))
            x, c = sg.graph.features["a"], sg.truth["a"][0]
            centers = np.stack([x[c == k].mean(axis=0) for k in range(6)])
            diff = centers[:, None] - centers[None]
            d.append(np.linalg.norm(diff, axis=2)[np.triu_indices(6, 1)].mean())
        return np.mean(d)
    s1, s5, s10 = spread(1.0), spread(5.0), spread(10.0)
    assert s1 < s5 < s10


def test_within_cluster_std_is_one():
    sg = generate(one_type(2.0, 0.001, k=2, size=2000, dim=4))
    x, c = sg.graph.features["a"], sg.truth["a"][0]
    for k in range(2):
        assert np.allclose(x[c == k].std(axis=0), 1.0, atol=0.06)


def test_cross_type_alignment():
    """Each type sees the shared group component through its own rotation, so
    alignment shows in the geometry: group-centre distance matrices of s and t
    agree at feature snr(s-t) = 10 and are unrelated at 1."""
    def dist_corr(f):
        out = []
        for seed in range(5):
            cfg = toy_config(seed)
            cfg.feature_snr = {**cfg.feature_snr, "s-t": f}
            sg = generate(cfg)
            d = []
            for t in ("s", "t"):
                x, grp = sg.graph.features[t], sg.truth[t][1]
                c = np.stack([x[grp == k].mean(axis=0) for k in range(4)])
                d.append(np.linalg.norm(c[:, None] - c[None], axis=2)[np.triu_indices(4, 1)])
            out.append(np.corrcoef(d[0], d[1])[0, 1])
        return np.mean(out)
    assert dist_corr(10.0) > 0.8
    assert dist_corr(1.0) < 0.5


@pytest.mark.parametrize("kw, match", [
    (dict(q=0.0), "q must"),
    (dict(q=0.2), "exceeds 1"),
    (dict(edge_snr={"s-t": 0.5}), ">= 1"),
    (dict(groups={"s": [0, 0, 1, 1], "t": [0, 1, 2, 3]}), "group"),
])
def test_invalid_configs(kw, match):
    cfg = toy_config()
    for k, v in kw.items():
        setattr(cfg, k, v)
    with pytest.raises(ValueError, match=match):
        generate(cfg)


def test_sensitivity_grid():
    a, b = sensitivity_grid("easy", "edge:s-t", [1, 10])
    assert a.edge_snr["s-t"] == 1.0 and b.edge_snr["s-t"] == 10.0
    da, db = a.to_dict(), b.to_dict()
    diff = {k for k in da if da[k] != db[k]}
    assert diff == {"edge_snr"}
    assert {k for k in a.edge_snr if a.edge_snr[k] != b.edge_snr[k]} == {"s-t"}
    with pytest.raises(ValueError):
        sensitivity_grid("easy", "edge:s-x", [1])
    with pytest.raises(ValueError):
        sensitivity_grid("easy", "feature:s-s", [20])
    assert len(SWEEP_PAIRS) == 6


def test_hard_and_easy_scenarios():
    hard = scenario_config("hard")
    assert hard.type_spec("t").num_clusters == 8
    assert [t.feature_dim for t in hard.types] == [32, 48]
    assert [t.feature_dim for t in scenario_config("easy").types] == [24, 24]
    sg = generate(hard)
    rel = sg.cross_labels("t", "s")
    assert rel.shape == (1600, 4) and np.all(rel.sum(axis=1) == 1)


def test_indirect_config():
    cfg = indirect_config()
    sch = cfg.schema()
    assert enumerate_metapaths(sch, "t", "s", 1) == []
    assert len(enumerate_metapaths(sch, "t", "s", 2)) == 1
    assert validate(generate(cfg).graph) == []


def test_config_json_roundtrip():
    cfg = scenario_config("hard", seed=3)
    import json
    back = SynthConfig.from_dict(json.loads(cfg.to_json()))
    assert back.to_dict() == cfg.to_dict()

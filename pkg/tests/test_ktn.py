import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ktnlab import autodiff as ad
from ktnlab.graph import HeteroGraph, Schema, toy_schema
from ktnlab.hgnn import HgnnConfig, classify, forward, grad_norms, init_model
from ktnlab.ktn import (
    KtnMapper, TrainConfig, TrainingDiverged, check_metapath, default_metapaths,
    enumerate_metapaths, init_mapper, joint_loss, ktn_map_test, ktn_map_train,
    predict_target, split_source, train,
)
from ktnlab.synthgen import generate, indirect_config, toy_config

from conftest import random_graph


def mapper_with(paths, mats, source="s", target="t", **kw):
    return KtnMapper(source, target, [tuple(p) for p in paths],
                     [[ad.parameter(np.atleast_2d(m)) for m in steps] for steps in mats], **kw)


def test_enumerate_examples():
    sch = toy_schema()
    assert enumerate_metapaths(sch, "t", "s", 1) == [("ts",)]
    assert enumerate_metapaths(sch, "t", "s", 2) == [("ts",), ("ts", "ss"), ("tt", "ts")]
    ind = indirect_config().schema()
    assert enumerate_metapaths(ind, "t", "s", 1) == []
    assert enumerate_metapaths(ind, "t", "s", 2) == [("tx", "xs")]


def test_default_metapaths_minimal_only():
    sch = toy_schema()
    assert default_metapaths(sch, "t", "s", max_len=3) == [("ts",)]
    assert len(default_metapaths(sch, "t", "s", max_len=2, all_lengths=True)) == 3


def test_check_metapath_errors():
    sch = toy_schema()
    with pytest.raises(ValueError, match="does not run"):
        check_metapath(sch, ["ss"], "t", "s")
    with pytest.raises(ValueError, match="chain"):
        check_metapath(sch, ["ts", "tt", "ts"], "t", "s")
    with pytest.raises(ValueError):
        check_metapath(sch, [], "t", "s")


def test_map_train_single_edge_identity():
    schema = toy_schema(feature_dim=1, num_classes=2)
    edges = {"ss": [], "ts": [(0, 0)], "st": [], "tt": []}
    g = HeteroGraph(schema, {"s": 2, "t": 2}, edges,
                    {"s": np.zeros((2, 1)), "t": np.zeros((2, 1))})
    m = mapper_with([["ts"]], [[np.eye(3)]])
    h_t = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    out = ktn_map_train(m, g, ad.Tensor(h_t)).value
    np.testing.assert_array_equal(out, [[1, 2, 3], [0, 0, 0]])
    assert np.all(ktn_map_train(m, g, ad.Tensor(np.zeros((2, 3)))).value == 0)


def test_map_train_two_step_scalar_fold():
    # chain t0 -> x0, t1 -> x0, x0 -> s0, x1 -> s0 (x1 has no t-neighbour)
    schema = Schema.build([("s", 1), ("x", 1), ("t", 1)], [("tx", "t", "x"), ("xs", "x", "s")])
    g = HeteroGraph(schema, {"s": 1, "x": 2, "t": 2},
                    {"tx": [(0, 0), (1, 0)], "xs": [(0, 0), (1, 0)]},
                    {k: np.zeros((n, 1)) for k, n in (("s", 1), ("x", 2), ("t", 2))})
    m = mapper_with([["tx", "xs"]], [[[[2.0]], [[5.0]]]])
    h = np.array([[1.0], [3.0]])
    z_x0 = (1.0 + 3.0) / 2 * 2.0
    z_s0 = (z_x0 + 0.0) / 2 * 5.0
    assert ktn_map_train(m, g, ad.Tensor(h)).value[0, 0] == pytest.approx(z_s0)


def test_map_test_examples(rng):
    h = rng.standard_normal((4, 3))
    assert np.array_equal(ktn_map_test(mapper_with([["ts"]], [[np.eye(3)]]), h).value, h)
    T1, T2 = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    two = mapper_with([["ts"], ["ts"]], [[T1], [T2]])
    np.testing.assert_allclose(ktn_map_test(two, h).value, h @ (T1 + T2), atol=1e-12)
    A, B = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    chain = mapper_with([["tt", "ts"], ["ts"]], [[A, B], [T1]])
    np.testing.assert_allclose(ktn_map_test(chain, h).value, h @ A @ B + h @ T1, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(-2, 2), b=st.floats(-2, 2))
def test_map_test_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    h1, h2 = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    T, T2 = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    f = lambda h, T: ktn_map_test(mapper_with([["ts"]], [[T]]), h).value
    np.testing.assert_allclose(f(a * h1 + b * h2, T), a * f(h1, T) + b * f(h2, T), atol=1e-10)
    np.testing.assert_allclose(f(h1, a * T + b * T2), a * f(h1, T) + b * f(h1, T2), atol=1e-10)


def test_joint_loss_lambda_zero(small_graph):
    m = init_model(small_graph.schema, HgnnConfig(2, 4), seed=0)
    mp = init_mapper(small_graph.schema, "s", "t", 4, lam=0.0)
    l_cl, l_ktn, total = joint_loss(m, mp, small_graph, "s", "t", small_graph.labels["s"])
    assert total.item() == l_cl.item() and l_ktn.item() > 0
    ad.backward(total)
    assert all(np.all(T.grad == 0) for T in mp.parameters())


def test_joint_loss_perfect_mapper_and_missing_labels(small_graph):
    m = init_model(small_graph.schema, HgnnConfig(2, 4), seed=0)
    mp = init_mapper(small_graph.schema, "s", "t", 4)
    mp.transforms[0][0].value[:] = 0
    for p in m.params.values():  # all embeddings zero, so H_s = 0 = mapped
        p.value[:] = 0
    _, l_ktn, _ = joint_loss(m, mp, small_graph, "s", "t", small_graph.labels["s"])
    assert l_ktn.item() == 0.0
    with pytest.raises(ValueError, match="no labels"):
        joint_loss(m, mp, small_graph, "s", "t", None)


def test_ktn_gradient_reaches_both_paths(small_graph):
    m = init_model(small_graph.schema, HgnnConfig(2, 4), seed=0)
    mp = init_mapper(small_graph.schema, "s", "t", 4)
    _, l_ktn, _ = joint_loss(m, mp, small_graph, "s", "t", small_graph.labels["s"])
    ad.backward(l_ktn)
    n = grad_norms(m)
    assert n["W2.s"] > 0 and n["W2.t"] > 0


@pytest.mark.parametrize("loss_kind,normalize", [("mse", True), ("frobenius", True), ("mse", False)])
def test_joint_loss_gradcheck_variants(tiny_synth, loss_kind, normalize):
    g = tiny_synth.graph
    m = init_model(g.schema, HgnnConfig(2, 4, "no_skip", "identity"), seed=2)
    mp = init_mapper(g.schema, "s", "t", 4, seed=2, loss_kind=loss_kind, normalize=normalize,
                     max_len=2, paths=[("ts",), ("tt", "ts")])
    build = lambda: joint_loss(m, mp, g, "s", "t", g.labels["s"])[2]
    assert ad.grad_check(build, m.parameters() + mp.parameters()) < 1e-5


def test_joint_loss_gradcheck_across_seeds():
    """Smooth (linear) mode passes on every seed. In relu mode the only
    entries above tolerance are gradients far below the resolution of a
    central difference at eps 1e-5 (loss roundoff / eps ~ 1e-10)."""
    from ktnlab.synthgen import SynthConfig, TWO_TYPE_RELATIONS, TypeSpec

    for seed in range(5):
        cfg = SynthConfig([TypeSpec("s", 2, 5, 3), TypeSpec("t", 2, 5, 3)], TWO_TYPE_RELATIONS,
                          q=0.08, seed=seed)
        g = generate(cfg).graph
        for mode in [("no_skip", "identity"), ("skip_concat", "relu")]:
            m = init_model(g.schema, HgnnConfig(2, 8, *mode), seed=seed)
            mp = init_mapper(g.schema, "s", "t", 8, seed=seed)
            params = m.parameters() + mp.parameters()
            build = lambda: joint_loss(m, mp, g, "s", "t", g.labels["s"])[2]
            if mode[1] == "identity":
                assert ad.grad_check(build, params) < 1e-5
                continue
            ad.zero_grads(params)
            ad.backward(build())
            for p in params:
                flat, ga = p.value.reshape(-1), p.grad.reshape(-1).copy()
                for k in range(flat.size):
                    old = flat[k]
                    flat[k] = old + 1e-5
                    fp = build().item()
                    flat[k] = old - 1e-5
                    fm = build().item()
                    flat[k] = old
                    num = (fp - fm) / 2e-5
                    err = abs(ga[k] - num) / max(abs(ga[k]), abs(num), 1e-8)
                    assert err < 1e-5 or abs(ga[k] - num) < 1e-9, (p.name, k, ga[k], num)


def test_train_zero_epochs_logs_initial_state(small_graph):
    m = init_model(small_graph.schema, HgnnConfig(1, 4), seed=0)
    before = {k: v.value.copy() for k, v in m.params.items()}
    log = train(m, None, small_graph, TrainConfig(epochs=0))
    assert len(log.rows) == 1 and log.rows[0]["epoch"] == 0
    assert all(np.array_equal(before[k], v.value) for k, v in m.params.items())


def test_train_loss_decreases_on_toy():
    g = generate(toy_config(0)).graph
    m = init_model(g.schema, HgnnConfig(), seed=0)
    mp = init_mapper(g.schema, "s", "t", 128, seed=0)
    log = train(m, mp, g, TrainConfig(epochs=10, eval_every=0))
    assert log.rows[10]["loss_total"] < log.rows[0]["loss_total"]
    assert mp.trained


def test_train_deterministic(small_graph):
    def run():
        m = init_model(small_graph.schema, HgnnConfig(2, 4), seed=1)
        mp = init_mapper(small_graph.schema, "s", "t", 4, seed=1)
        return train(m, mp, small_graph, TrainConfig(epochs=5, lr=1e-2, eval_every=1, batch_size=4)).rows
    assert run() == run()


def test_train_divergence_names_epoch(small_graph):
    small_graph.features["s"][0, 0] = np.nan
    m = init_model(small_graph.schema, HgnnConfig(1, 4), seed=0)
    with pytest.raises(TrainingDiverged, match="epoch 0"):
        train(m, None, small_graph, TrainConfig(epochs=3))


def test_split_source():
    y = np.eye(2)[[0, 1] * 10]
    y[3] = 0
    a, b = split_source(y, 0.8, 0)
    assert len(a) + len(b) == 19 and len(np.intersect1d(a, b)) == 0 and 3 not in a and 3 not in b
    assert np.array_equal(split_source(y, 0.8, 0)[0], a)


def test_predict_target(small_graph, rng):
    m = init_model(small_graph.schema, HgnnConfig(1, 4), seed=0)
    H = forward(m, small_graph)
    ident = mapper_with([["ts"]], [[np.eye(4)]], trained=True)
    np.testing.assert_array_equal(predict_target(m, ident, small_graph, "t", H),
                                  classify(m, H["t"]).value)
    zero = {"s": H["s"], "t": ad.Tensor(np.zeros((5, 4)))}
    m.params["g.b"].value[:] = [[1.0, 2.0, 3.0]]
    np.testing.assert_array_equal(predict_target(m, ident, small_graph, "t", zero),
                                  np.tile([[1.0, 2.0, 3.0]], (5, 1)))
    ident.trained = False
    with pytest.warns(RuntimeWarning, match="untrained"):
        predict_target(m, ident, small_graph, "t", H)


def test_mapper_validation(small_graph):
    with pytest.raises(ValueError):
        init_mapper(small_graph.schema, "s", "t", 4, lam=-1)
    with pytest.raises(ValueError):
        init_mapper(small_graph.schema, "s", "t", 4, loss_kind="l1")
    mp = init_mapper(small_graph.schema, "s", "t", 4, noise=0.0)
    assert [T.name for T in mp.parameters()] == ["T0.0.ts"]
    np.testing.assert_array_equal(mp.parameters()[0].value, np.eye(4))

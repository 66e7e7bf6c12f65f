"""Experiment drivers behind the command line: toy study, training, sweeps."""
from __future__ import annotations

import contextlib
import csv
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import baselines, checkpoint, kernels, metrics, synthgen, theory
from .hgnn import HgnnConfig, classify, forward, init_model
from .ktn import TrainConfig, init_mapper, ktn_map_test, train

log = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "loss_cl", "loss_ktn", "loss_total", "src_metric", "tgt_metric"]
SWEEP_COLUMNS = ["scenario", "pair", "sigma", "seed", "method", "src_acc", "tgt_acc", "wall_ms"]
SWEEP_METHODS = ("ktn", "ep", "lp")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    num_layers: int = 2
    hidden_dim: int = 128
    message_mode: str = "skip_concat"
    activation: str = "relu"
    sharing: str = "full"
    lr: float = 1e-4
    epochs: int = 500
    lam: float = 1.0
    loss_ktn: str = "mse"
    metapath_max_len: int | None = None
    seed: int = 0
    source: str = "s"
    target: str = "t"
    train_frac: float = 0.8
    eval_every: int = 50
    metric: str = "acc"
    deterministic: bool = False
    sweep_epochs: int = 200
    sweep_seeds: int = 5
    sweep_values: list = field(default_factory=lambda: [1.0, 4.0, 10.0])

    def __post_init__(self):
        self.check()

    def check(self):
        def bad(name, msg):
            raise ConfigError(f"field {name!r}: {msg}")

        try:
            self.hgnn()
        except ValueError as exc:
            bad("hgnn", str(exc))
        if self.lr <= 0:
            bad("lr", "must be > 0")
        if self.epochs < 0 or self.sweep_epochs < 0:
            bad("epochs", "must be >= 0")
        if self.lam < 0:
            bad("lam", "must be >= 0")
        if self.loss_ktn not in ("mse", "frobenius"):
            bad("loss_ktn", "must be 'mse' or 'frobenius'")
        if self.metapath_max_len is not None and self.metapath_max_len < 1:
            bad("metapath_max_len", "must be >= 1")
        if not 0 < self.train_frac < 1:
            bad("train_frac", "must lie in (0, 1)")
        if self.metric not in ("acc", "ndcg", "mrr"):
            bad("metric", "must be acc, ndcg or mrr")
        if self.sweep_seeds < 1:
            bad("sweep_seeds", "must be >= 1")

    def hgnn(self):
        return HgnnConfig(
            self.num_layers, self.hidden_dim, self.message_mode, self.activation, self.sharing
        )

    def train_config(self, epochs=None):
        return TrainConfig(
            source=self.source, target=self.target,
            epochs=self.epochs if epochs is None else epochs,
            lr=self.lr, seed=self.seed, train_frac=self.train_frac,
            eval_every=self.eval_every, metric=self.metric,
        )

    def replace(self, **kw):
        return ExperimentConfig(**{**asdict(self), **kw})

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d, where="config"):
        if not isinstance(d, dict):
            raise ConfigError(f"{where}: expected a JSON object")
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(f"{where}: unknown field {k!r}")
        try:
            return cls(**d)
        except (ConfigError, TypeError) as exc:
            raise ConfigError(f"{where}: {exc}") from None

    @classmethod
    def load(cls, path):
        try:
            d = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: malformed JSON: {exc.msg}") from None
        return cls.from_dict(d, where=str(path))


@contextlib.contextmanager
def run_context(deterministic):
    """Pin BLAS to one thread in deterministic mode."""
    if deterministic:
        with threadpool_limits(limits=1):
            yield
    else:
        yield


# -- output helpers ---------------------------------------------------------

def fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) for c in columns])


def write_train_log(path, tlog):
    write_csv(path, LOG_COLUMNS, tlog.rows)


def write_grad_norms(path, tlog):
    """One row per recorded step; one column per parameter."""
    names = list(tlog.grad_norms[0][1]) if tlog.grad_norms else []
    rows = [{"epoch": e, **norms} for e, norms in tlog.grad_norms]
    write_csv(path, ["epoch"] + names, rows)


def write_run_json(path, command, cfg, extra=None):
    doc = {
        "command": command,
        "version": __version__,
        "backend": kernels.BACKEND,
        "config": cfg.to_dict() if hasattr(cfg, "to_dict") else cfg,
    }
    doc.update(extra or {})
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=fmt) + "\n")


# -- relevance --------------------------------------------------------------

def target_relevance(graph, truth, source, target):
    """Target rows scored against source classes: a source cluster is relevant
    when it shares the target node's group. Falls back to target labels of the
    same width; None when neither is available."""
    if truth and source in truth and target in truth:
        s_cluster, s_group = (np.asarray(a) for a in truth[source])
        _, t_group = (np.asarray(a) for a in truth[target])
        k = graph.num_classes(source)
        cluster_group = np.full(k, -1)
        cluster_group[s_cluster] = s_group
        return (t_group[:, None] == cluster_group[None, :]).astype(float)
    lt, ls = graph.labels.get(target), graph.labels.get(source)
    if lt is not None and ls is not None and lt.shape[1] == ls.shape[1]:
        return lt
    return None


# -- single runs ------------------------------------------------------------

def run_ktn(graph, cfg, relevance=None, epochs=None):
    """Train HGNN + KTN jointly. Returns (model, mapper, train log)."""
    model = init_model(graph.schema, cfg.hgnn(), seed=cfg.seed,
                       num_classes=graph.num_classes(cfg.source))
    mapper = init_mapper(
        graph.schema, cfg.source, cfg.target, cfg.hidden_dim, seed=cfg.seed,
        lam=cfg.lam, loss_kind=cfg.loss_ktn, max_len=cfg.metapath_max_len,
    )
    if not mapper.paths:
        log.warning("no meta-path from %r to %r within length %s",
                    cfg.target, cfg.source, cfg.metapath_max_len)
    tlog = train(model, mapper, graph, cfg.train_config(epochs), target_relevance=relevance)
    return model, mapper, tlog


def run_source_only(graph, cfg, relevance=None, epochs=None, hgnn_config=None):
    model = init_model(graph.schema, hgnn_config or cfg.hgnn(), seed=cfg.seed,
                       num_classes=graph.num_classes(cfg.source))
    tlog = train(model, None, graph, cfg.train_config(epochs), target_relevance=relevance)
    return model, tlog


def source_accuracy(model, graph, cfg, idx, H=None):
    H = forward(model, graph) if H is None else H
    y = graph.labels[cfg.source]
    return metrics.accuracy(classify(model, H[cfg.source]).value[idx], y[idx])


def toy_conditions(model, graph, cfg, relevance, eval_idx):
    """Accuracies of the four feature extractors on a source-only model in
    theory mode (no skip, identity)."""
    s, t = cfg.source, cfg.target
    H = forward(model, graph)
    H_sp = forward(model, graph, type_override={t: s})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ops = theory.build_theory_map(model, graph, s, t, with_adjacency=False)
    mapped = theory.theoretical_transfer(H[t], ops)
    return {
        "source": source_accuracy(model, graph, cfg, eval_idx, H),
        "target_src_path": metrics.accuracy(classify(model, H_sp[t]).value, relevance),
        "target_org_path": metrics.accuracy(classify(model, H[t]).value, relevance),
        "theoretical_ktn": metrics.accuracy(
            classify(model, mapped).value, relevance
        ),
    }


def run_toy(cfg, out_dir=None, synth_config=None):
    """Source-only study on the toy graph plus a trained KTN.

    Writes ``toy_summary.csv`` (condition, accuracy), ``grad_norms.csv`` and
    ``grad_norms_theory.csv`` (source-only runs in the configured and the
    theory mode), ``train_log.csv`` (KTN run) and ``run.json``.
    """
    sg = synthgen.generate(synth_config or synthgen.toy_config(cfg.seed))
    g = sg.graph
    rel = sg.cross_labels(cfg.target, cfg.source)
    theory_hgnn = HgnnConfig(cfg.num_layers, cfg.hidden_dim, "no_skip", "identity", cfg.sharing)
    t0 = time.perf_counter()
    with run_context(cfg.deterministic):
        m_th, log_th = run_source_only(g, cfg, rel, hgnn_config=theory_hgnn)
        summary = toy_conditions(m_th, g, cfg, rel, log_th.eval_idx)
        m_src, log_src = run_source_only(g, cfg, rel)
        summary["no_adaptation"] = metrics.accuracy(
            classify(m_src, forward(m_src, g)[cfg.target]).value, rel
        )
        model, mapper, log_ktn = run_ktn(g, cfg, rel)
        H = forward(model, g)
        summary["trained_ktn"] = metrics.accuracy(
            classify(model, ktn_map_test(mapper, H[cfg.target])).value, rel
        )
        summary["trained_ktn_source"] = source_accuracy(model, g, cfg, log_ktn.eval_idx, H)
    result = {
        "summary": summary,
        "grad_norms": log_src.grad_norms,
        "grad_norms_theory": log_th.grad_norms,
        "train_log": log_ktn.rows,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "toy_summary.csv", ["condition", "accuracy"],
                  [{"condition": k, "accuracy": v} for k, v in summary.items()])
        write_grad_norms(out / "grad_norms.csv", log_src)
        write_grad_norms(out / "grad_norms_theory.csv", log_th)
        write_train_log(out / "train_log.csv", log_ktn)
        extra = {"synth": sg.config.to_dict(), "summary": summary}
        if not cfg.deterministic:
            extra["wall_s"] = time.perf_counter() - t0
        write_run_json(out / "run.json", "toy", cfg, extra)
    return result


# -- sweeps -----------------------------------------------------------------

def lp_scores(graph, cfg, train_idx):
    y = graph.labels[cfg.source]
    seeded = np.zeros_like(y)
    seeded[train_idx] = y[train_idx]
    return baselines.label_propagation(graph, cfg.source, seeded, known=train_idx,
                                       target_type=cfg.target)


def sweep_point(scenario, pair, sigma, seed, cfg):
    """Three summary rows (ktn, ep, lp) for one grid point and seed."""
    cfg = cfg.replace(seed=seed)
    sc = synthgen.sensitivity_grid(scenario, pair, [sigma], seed=seed)[0]
    sg = synthgen.generate(sc)
    g = sg.graph
    rel = sg.cross_labels(cfg.target, cfg.source)
    s, t = cfg.source, cfg.target
    base = {"scenario": scenario, "pair": pair, "sigma": float(sigma), "seed": seed}
    rows = []

    with run_context(cfg.deterministic):
        t0 = time.perf_counter()
        model, mapper, tlog = run_ktn(g, cfg, epochs=cfg.sweep_epochs)
        H = forward(model, g)
        src_acc = source_accuracy(model, g, cfg, tlog.eval_idx, H)
        tgt = metrics.accuracy(classify(model, ktn_map_test(mapper, H[t])).value, rel)
        t_ktn = time.perf_counter() - t0
        rows.append({**base, "method": "ktn", "src_acc": src_acc, "tgt_acc": tgt,
                     "wall_ms": t_ktn * 1e3})

        # EP reuses the KTN-trained extractor and classifier for the source side
        t0 = time.perf_counter()
        ep = metrics.accuracy(baselines.ep_predict(model, g, s, t, H[s]), rel)
        rows.append({**base, "method": "ep", "src_acc": src_acc, "tgt_acc": ep,
                     "wall_ms": (time.perf_counter() - t0) * 1e3})

        t0 = time.perf_counter()
        Y = lp_scores(g, cfg, tlog.train_idx)
        y = g.labels[s]
        rows.append({
            **base, "method": "lp",
            "src_acc": metrics.accuracy(Y[s][tlog.eval_idx], y[tlog.eval_idx]),
            "tgt_acc": metrics.accuracy(Y[t], rel),
            "wall_ms": (time.perf_counter() - t0) * 1e3,
        })
    for r in rows:
        r["wall_ms"] = 0 if cfg.deterministic else int(round(r["wall_ms"]))
    return rows


def _sweep_job(args):
    with threadpool_limits(limits=1):
        return sweep_point(*args)


def run_sweep(scenario, pairs, cfg, out_dir=None, values=None, seeds=None, jobs=1):
    """KTN, EP and LP over ``values`` x ``seeds`` for each swept pair.

    Writes ``summary.csv`` (one row per point, seed and method) and
    ``run.json``. Returns the rows in grid order.
    """
    if isinstance(pairs, str):
        pairs = list(synthgen.SWEEP_PAIRS) if pairs == "all" else [pairs]
    values = cfg.sweep_values if values is None else values
    seeds = range(cfg.sweep_seeds) if seeds is None else seeds
    jobs_list = [(scenario, p, float(v), int(sd), cfg) for p in pairs for v in values for sd in seeds]
    for _, p, v, _, _ in jobs_list:
        synthgen.sensitivity_grid(scenario, p, [v])  # validate before any training
    t0 = time.perf_counter()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_sweep_job, jobs_list))
    else:
        chunks = []
        for job in jobs_list:
            chunks.append(sweep_point(*job))
            log.info("sweep %s sigma=%g seed=%d done", job[1], job[2], job[3])
    rows = [r for c in chunks for r in c]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "summary.csv", SWEEP_COLUMNS, rows)
        extra = {"scenario": scenario, "pairs": list(pairs), "values": list(values),
                 "seeds": list(seeds)}
        if not cfg.deterministic:
            extra["wall_s"] = time.perf_counter() - t0
        write_run_json(out / "run.json", "sweep", cfg, extra)
    return rows


def sweep_means(rows):
    """{(pair, method, sigma): mean tgt_acc} over seeds."""
    acc = {}
    for r in rows:
        acc.setdefault((r["pair"], r["method"], r["sigma"]), []).append(r["tgt_acc"])
    return {k: float(np.mean(v)) for k, v in acc.items()}


# -- evaluation -------------------------------------------------------------

def evaluate(model, mapper, graph, truth=None, source=None, target=None):
    """Source accuracy on labelled nodes and target acc/NDCG/MRR (via the
    mapper if any). Missing quantities are reported as NaN."""
    source = source or (mapper.source if mapper else "s")
    target = target or (mapper.target if mapper else "t")
    H = forward(model, graph)
    out = {"source_acc": math.nan, "target_acc": math.nan, "target_ndcg": math.nan,
           "target_mrr": math.nan}
    y = graph.labels.get(source)
    if y is not None:
        lab = np.flatnonzero(y.sum(axis=1) > 0)
        out["source_acc"] = metrics.accuracy(classify(model, H[source]).value[lab], y[lab])
    rel = target_relevance(graph, truth, source, target)
    if rel is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            h = ktn_map_test(mapper, H[target]) if mapper is not None else H[target]
        scores = classify(model, h).value
        out["target_acc"] = metrics.accuracy(scores, rel)
        out["target_ndcg"] = metrics.ndcg(scores, rel)
        out["target_mrr"] = metrics.mrr(scores, rel)
    return out


def save_checkpoint(path, model, mapper, cfg):
    checkpoint.save(path, model, mapper, extra={"experiment": cfg.to_dict()})

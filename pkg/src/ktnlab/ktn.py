"""Knowledge transfer network: trainable target-to-source embedding map.

Training maps target embeddings along every meta-path ``t -> ... -> s`` with
a neighbour operator and a transform per step and sums over paths; the
result is matched against the source embeddings. At test time the neighbour
operators are dropped and only the transform chain is applied.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from . import metrics
from .hgnn import classify, forward, glorot, grad_norms

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


# -- meta-paths -------------------------------------------------------------

def check_metapath(schema, path, t, s):
    if not path:
        raise ValueError("meta-path is empty")
    rels = [schema.relation(r) for r in path]
    if rels[0].src != t or rels[-1].dst != s:
        raise ValueError(f"meta-path {path} does not run from {t!r} to {s!r}")
    for a, b in zip(rels, rels[1:]):
        if a.dst != b.src:
            raise ValueError(f"meta-path {path}: {a.name} does not chain into {b.name}")
    return tuple(path)


def enumerate_metapaths(schema, t, s, max_len):
    """All relation chains from t to s of length <= max_len, ordered by
    (length, relation names)."""
    schema.node_type(t)
    schema.node_type(s)
    found = set()
    frontier = [((), t)]
    for _ in range(max_len):
        nxt = []
        for path, at in frontier:
            for r in schema.outgoing(at):
                p = path + (r.name,)
                if r.dst == s:
                    found.add(p)
                nxt.append((p, r.dst))
        frontier = nxt
    return sorted(found, key=lambda p: (len(p), p))


def default_metapaths(schema, t, s, max_len=None, all_lengths=False):
    """Minimum-length meta-paths (or every path up to max_len with
    ``all_lengths``). Without max_len, searches up to the number of types."""
    limit = max_len if max_len is not None else max(len(schema.node_types), 1)
    paths = enumerate_metapaths(schema, t, s, limit)
    if all_lengths or not paths:
        return paths
    shortest = len(paths[0])
    return [p for p in paths if len(p) == shortest]


# -- mapper -----------------------------------------------------------------

@dataclass
class KtnMapper:
    source: str
    target: str
    paths: list
    transforms: list  # per path, list of Tensors (d x d)
    lam: float = 1.0
    normalize: bool = True
    loss_kind: str = "mse"
    trained: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.loss_kind not in ("mse", "frobenius"):
            raise ValueError("loss_kind must be 'mse' or 'frobenius'")

    def parameters(self):
        return [T for steps in self.transforms for T in steps]

    def named_parameters(self):
        return {T.name: T for steps in self.transforms for T in steps}


def init_mapper(schema, source, target, dim, paths=None, seed=0, lam=1.0,
                normalize=True, loss_kind="mse", max_len=None, noise=0.1):
    """Transforms start at identity plus ``noise`` x Glorot-uniform."""
    if paths is None:
        paths = default_metapaths(schema, target, source, max_len)
    paths = [check_metapath(schema, p, target, source) for p in paths]
    rng = np.random.default_rng(seed)
    transforms = []
    for i, p in enumerate(paths):
        steps = []
        for k, rel in enumerate(p):
            T = np.eye(dim) + noise * glorot(rng, dim, dim)
            steps.append(ad.parameter(T, name=f"T{i}.{k}.{rel}"))
        transforms.append(steps)
    return KtnMapper(source, target, paths, transforms, lam, normalize, loss_kind)


def _step_operator(graph, rel, normalize):
    if normalize:
        return graph.neighbor_mean(rel)
    key = ("raw", rel)
    if key not in graph._ops:
        graph._ops[key] = sp.csr_matrix(graph.adjacency(rel).T)
    return graph._ops[key]


def ktn_map_train(mapper, graph, H_t):
    """Sum over paths of the fold Z <- N_step Z T_step, starting at H_t."""
    n_s = graph.num_nodes[mapper.source]
    out = None
    for path, steps in zip(mapper.paths, mapper.transforms):
        Z = H_t
        for rel, T in zip(path, steps):
            if Z.shape[1] != T.shape[0]:
                raise ad.ShapeError(f"ktn step {rel}: {Z.shape} vs {T.shape}")
            Z = ad.matmul(ad.sparse_matmul(_step_operator(graph, rel, mapper.normalize), Z), T)
        out = Z if out is None else ad.scale_add(out, Z)
    if out is None:
        return ad.Tensor(np.zeros((n_s, H_t.shape[1])))
    return out


def ktn_map_test(mapper, H_t):
    """Sum over paths of H_t T_1 T_2 ... (no neighbour operators)."""
    H_t = H_t if isinstance(H_t, ad.Tensor) else ad.Tensor(H_t)
    out = None
    for steps in mapper.transforms:
        Z = H_t
        for T in steps:
            Z = ad.matmul(Z, T)
        out = Z if out is None else ad.scale_add(out, Z)
    if out is None:
        return ad.Tensor(np.zeros(H_t.shape))
    return out


def is_single_label(y):
    return bool(np.all(y.sum(axis=1) == 1))


def classification_loss(logits, labels):
    if is_single_label(labels):
        return ad.softmax_xent(logits, labels)
    return ad.sigmoid_bce(logits, labels)


def transfer_loss(mapper, H_s, mapped):
    fn = ad.mse_loss if mapper.loss_kind == "mse" else ad.frobenius_loss
    return fn(H_s, mapped)


def joint_loss(model, mapper, graph, source_type, target_type, source_labels,
               train_idx=None, H=None, rows=None):
    """(loss_cl, loss_ktn, loss_total). ``rows`` optionally subsamples source
    rows of both terms."""
    if source_labels is None:
        raise ValueError(f"no labels for source type {source_type!r}")
    if H is None:
        H = forward(model, graph)
    if train_idx is None:
        train_idx = np.flatnonzero(source_labels.sum(axis=1) > 0)
    cl_idx = train_idx if rows is None else np.intersect1d(train_idx, rows)
    logits = classify(model, ad.take_rows(H[source_type], cl_idx))
    l_cl = classification_loss(logits, source_labels[cl_idx])
    if mapper is None:
        return l_cl, None, l_cl
    mapped = ktn_map_train(mapper, graph, H[target_type])
    h_s = H[source_type]
    if rows is not None:
        h_s, mapped = ad.take_rows(h_s, rows), ad.take_rows(mapped, rows)
    l_ktn = transfer_loss(mapper, h_s, mapped)
    return l_cl, l_ktn, ad.scale_add(l_cl, l_ktn, 1.0, mapper.lam)


# -- training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    source: str = "s"
    target: str = "t"
    epochs: int = 500
    lr: float = 1e-4
    seed: int = 0
    train_frac: float = 0.8
    eval_every: int = 50
    grad_norm_every: int = 1
    batch_size: int | None = None
    metric: str = "acc"


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)  # (epoch, {name: norm})
    train_idx: np.ndarray | None = None
    eval_idx: np.ndarray | None = None

    def to_dict(self):
        return asdict(self)


def split_source(labels, frac, seed):
    labeled = np.flatnonzero(labels.sum(axis=1) > 0)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(labeled)
    k = int(round(frac * len(perm)))
    return np.sort(perm[:k]), np.sort(perm[k:])


def score(logits, relevance, metric="acc"):
    if relevance is None or len(relevance) == 0:
        return math.nan
    if metric == "acc":
        return metrics.accuracy(logits, relevance)
    if metric == "ndcg":
        return metrics.ndcg(logits, relevance)
    if metric == "mrr":
        return metrics.mrr(logits, relevance)
    raise ValueError(f"unknown metric {metric!r}")


def predict_target(model, mapper, graph, target_type, H=None):
    """Classifier logits for every target node (via the mapper when given)."""
    if H is None:
        H = forward(model, graph)
    h_t = H[target_type]
    if mapper is None:
        return classify(model, h_t).value
    if not mapper.trained:
        warnings.warn("predicting with an untrained KTN mapper", RuntimeWarning)
    return classify(model, ktn_map_test(mapper, h_t)).value


def train(model, mapper, graph, config, target_relevance=None, callback=None):
    """Full-batch joint training with Adam. ``mapper=None`` trains on the
    source classification loss alone."""
    src, tgt = config.source, config.target
    labels = graph.labels.get(src)
    if labels is None:
        raise ValueError(f"no labels for source type {src!r}")
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    train_idx, eval_idx = split_source(labels, config.train_frac, seeds[0])
    batch_rng = np.random.default_rng(seeds[1])
    params = model.parameters() + (mapper.parameters() if mapper is not None else [])
    named = dict(model.params)
    if mapper is not None:
        named.update(mapper.named_parameters())
    opt = ad.Adam(params, lr=config.lr)
    out = TrainLog(train_idx=train_idx, eval_idx=eval_idx)

    for epoch in range(config.epochs + 1):
        opt.zero_grad()
        rows = None
        if config.batch_size is not None:
            n_s = graph.num_nodes[src]
            rows = np.sort(batch_rng.choice(n_s, size=min(config.batch_size, n_s), replace=False))
        try:
            H = forward(model, graph)
            l_cl, l_ktn, loss = joint_loss(model, mapper, graph, src, tgt, labels, train_idx, H, rows)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}") from None
        if not np.isfinite(loss.item()):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        row = {
            "epoch": epoch,
            "loss_cl": l_cl.item(),
            "loss_ktn": l_ktn.item() if l_ktn is not None else 0.0,
            "loss_total": loss.item(),
            "src_metric": math.nan,
            "tgt_metric": math.nan,
        }
        last = epoch == config.epochs
        if config.eval_every and (epoch % config.eval_every == 0 or last):
            row["src_metric"] = score(
                classify(model, H[src]).value[eval_idx], labels[eval_idx], config.metric
            )
            if target_relevance is not None and mapper is not None:
                h_t = ktn_map_test(mapper, H[tgt].value)
                row["tgt_metric"] = score(classify(model, h_t).value, target_relevance, config.metric)
            elif target_relevance is not None:
                row["tgt_metric"] = score(classify(model, H[tgt]).value, target_relevance, config.metric)
        out.rows.append(row)
        if last:
            break
        ad.backward(loss)
        if config.grad_norm_every and epoch % config.grad_norm_every == 0:
            out.grad_norms.append((epoch, grad_norms(model, named)))
        if callback is not None:
            callback(epoch, model, mapper)
        opt.step()
        log.debug("epoch %d loss %.6g", epoch, row["loss_total"])
    if mapper is not None:
        mapper.trained = True
    return out

"""Ranking and classification metrics over per-class scores.

Classes are ranked by descending score; equal scores rank the lower class
index first.
"""
import numpy as np


def _check(scores, relevance):
    scores = np.asarray(scores, dtype=float)
    relevance = np.asarray(relevance, dtype=float)
    if scores.shape != relevance.shape or scores.ndim != 2:
        raise ValueError(f"scores {scores.shape} and relevance {relevance.shape} must match")
    return scores, relevance


def rank_order(scores):
    """Class indices per row, best first (stable: ties keep index order)."""
    return np.argsort(-np.asarray(scores, dtype=float), axis=1, kind="stable")


def ndcg(scores, relevance, return_skipped=False):
    """Mean full-ranking NDCG with gain = relevance and 1/log2(rank + 1) discount.

    Rows without any relevant class are skipped; ``return_skipped`` also
    returns how many were.
    """
    scores, relevance = _check(scores, relevance)
    keep = relevance.sum(axis=1) > 0
    skipped = int((~keep).sum())
    scores, relevance = scores[keep], relevance[keep]
    if len(scores) == 0:
        return (float("nan"), skipped) if return_skipped else float("nan")
    discount = 1.0 / np.log2(np.arange(2, scores.shape[1] + 2))
    gains = np.take_along_axis(relevance, rank_order(scores), axis=1)
    dcg = gains @ discount
    ideal = -np.sort(-relevance, axis=1) @ discount
    value = float(np.mean(dcg / ideal))
    return (value, skipped) if return_skipped else value


def mrr(scores, relevance, return_skipped=False):
    """Mean of 1 / (rank of the highest-ranked relevant class)."""
    scores, relevance = _check(scores, relevance)
    keep = relevance.sum(axis=1) > 0
    skipped = int((~keep).sum())
    scores, relevance = scores[keep], relevance[keep]
    if len(scores) == 0:
        return (float("nan"), skipped) if return_skipped else float("nan")
    hits = np.take_along_axis(relevance, rank_order(scores), axis=1) > 0
    first = hits.argmax(axis=1) + 1
    value = float(np.mean(1.0 / first))
    return (value, skipped) if return_skipped else value


def accuracy(scores, onehot):
    """Fraction of rows whose argmax class is relevant."""
    scores, onehot = _check(scores, onehot)
    if len(scores) == 0:
        return float("nan")
    pred = np.argmax(scores, axis=1)  # first maximum wins ties
    return float(np.mean(onehot[np.arange(len(pred)), pred] > 0))

"""Intrinsic (pair AUROC) and extrinsic (k-NN, Jaccard) evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError
from .relation import PairArray

EUCLIDEAN = "euclidean"
DOT = "dot"


class ScoredPairs(NamedTuple):
    scores: np.ndarray
    labels: np.ndarray


@dataclass
class EvalReport:
    auroc: float | None = None
    knn_accuracy: float | None = None
    jaccard: float | None = None
    k: int = 5
    metric: str = EUCLIDEAN

    def __post_init__(self):
        for name in ("auroc", "knn_accuracy", "jaccard"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name}={v} outside [0, 1]")


def pair_scores(embeddings, pairs, metric=EUCLIDEAN) -> ScoredPairs:
    """Similarity score per pair: negative Euclidean distance or dot product."""
    emb = np.asarray(embeddings, dtype=np.float64)
    pairs = PairArray.from_constraints(pairs)
    if len(pairs) and (min(pairs.i.min(), pairs.j.min()) < 0 or pairs.max_index() >= len(emb)):
        raise InvalidInputError(f"pair index out of range for {len(emb)} embeddings")
    a = emb[pairs.i]
    b = emb[pairs.j]
    if metric == EUCLIDEAN:
        scores = -np.sqrt(np.sum((a - b) ** 2, axis=1))
    elif metric == DOT:
        scores = np.sum(a * b, axis=1)
    else:
        raise InvalidInputError(f"unknown metric {metric!r}")
    return ScoredPairs(scores, pairs.y.astype(np.int8))


def midranks(values) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    values = np.asarray(values)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], len(values)]
    group_rank = (starts + 1 + ends) / 2.0
    ranks = np.empty(len(values))
    ranks[order] = np.repeat(group_rank, ends - starts)
    return ranks


def auroc(sp, labels=None) -> float:
    """Mann-Whitney AUROC: P(pos > neg) + P(pos == neg) / 2."""
    if labels is None:
        scores, labels = sp
    else:
        scores = sp
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise InvalidInputError("scores and labels must have equal length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InvalidInputError("AUROC needs at least one positive and one negative")
    ranks = midranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _squared_distances(train, queries):
    tn = np.einsum("ij,ij->i", train, train)
    qn = np.einsum("ij,ij->i", queries, queries)
    d2 = qn[:, None] - 2.0 * (queries @ train.T) + tn[None, :]
    return np.maximum(d2, 0.0)


def nearest_neighbors(train_emb, queries, k, chunk=512) -> np.ndarray:
    """Indices of the ``k`` nearest training rows per query, nearest first.

    Exact Euclidean full scan; equal distances are ordered by training index.
    """
    train = np.asarray(train_emb, dtype=np.float64)
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim == 1:
        q = q[None, :]
    if len(train) == 0:
        raise InvalidInputError("empty training set")
    if not 1 <= k <= len(train):
        raise InvalidInputError(f"k={k} must lie in [1, {len(train)}]")
    if q.shape[1] != train.shape[1]:
        raise InvalidInputError("query and training embeddings differ in width")
    out = np.empty((len(q), k), dtype=np.int64)
    for s in range(0, len(q), chunk):
        block = q[s : s + chunk]
        d2 = _squared_distances(train, block)
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
        for r in range(len(block)):
            # widen by a rounding allowance, then settle ties on exact distances
            slack = 1e-9 * (1.0 + kth[r])
            cand = np.flatnonzero(d2[r] <= kth[r] + slack)
            exact = np.sum((train[cand] - block[r]) ** 2, axis=1)
            order = np.lexsort((cand, exact))
            out[s + r] = cand[order[:k]]
    return out


def _vote(neigh_labels) -> int:
    counts = {}
    for c in neigh_labels:
        counts[c] = counts.get(c, 0) + 1
    best = max(counts.values())
    # neighbours are nearest first, so the first tied class seen is the nearest one
    for c in neigh_labels:
        if counts[c] == best:
            return c
    raise AssertionError("unreachable")


def knn_predict(train_emb, train_labels, query, k=5):
    """Majority vote over the ``k`` nearest neighbours of one query."""
    idx = nearest_neighbors(train_emb, query, k)[0]
    labels = np.asarray(train_labels)
    return _vote(labels[idx].tolist())


def knn_predict_batch(train_emb, train_labels, queries, k=5) -> np.ndarray:
    idx = nearest_neighbors(train_emb, queries, k)
    labels = np.asarray(train_labels)
    return np.array([_vote(row) for row in labels[idx].tolist()])


def knn_predict_multilabel(train_emb, train_label_sets, query, k=5) -> frozenset:
    """Binary relevance: keep label c when more than half the neighbours hold it."""
    idx = nearest_neighbors(train_emb, query, k)[0]
    return _multilabel_vote([train_label_sets[i] for i in idx.tolist()], k)


def knn_predict_multilabel_batch(train_emb, train_label_sets, queries, k=5) -> list:
    idx = nearest_neighbors(train_emb, queries, k)
    return [_multilabel_vote([train_label_sets[i] for i in row], k) for row in idx.tolist()]


def _multilabel_vote(neigh_sets, k) -> frozenset:
    counts = {}
    for s in neigh_sets:
        for c in s:
            counts[c] = counts.get(c, 0) + 1
    return frozenset(c for c, n in counts.items() if 2 * n > k)


def jaccard(pred, truth) -> float:
    pred = frozenset(pred)
    truth = frozenset(truth)
    union = pred | truth
    if not union:
        return 1.0
    return len(pred & truth) / len(union)


def mean_jaccard(preds, truths) -> float:
    if len(preds) != len(truths):
        raise InvalidInputError("prediction and truth lists differ in length")
    if not preds:
        raise InvalidInputError("no instances to score")
    return float(np.mean([jaccard(p, t) for p, t in zip(preds, truths)]))


def knn_accuracy(train_emb, train_labels, test_emb, test_labels, k=5) -> float:
    pred = knn_predict_batch(train_emb, train_labels, test_emb, k)
    return float(np.mean(pred == np.asarray(test_labels)))


def emit_convergence_csv(run, path):
    """Write ``seconds,auroc`` rows (6 significant digits) for entries with an AUROC."""
    entries = run.log if hasattr(run, "log") else run
    rows = [(e.seconds, e.test_auroc) for e in entries if e.test_auroc is not None]
    if not rows:
        raise InvalidInputError("log has no entries with a test AUROC")
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("seconds,auroc\n")
        for s, a in rows:
            f.write(f"{s:.6g},{a:.6g}\n")


def read_convergence_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        return [(float(r["seconds"]), float(r["auroc"])) for r in reader]


def time_to_reach(curve, threshold) -> float:
    """First time at which the AUROC curve is >= threshold, or inf."""
    for seconds, value in curve:
        if value >= threshold:
            return seconds
    return float("inf")

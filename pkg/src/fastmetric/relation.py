"""Similarity relations over labelled instances and pair-constraint sampling.

A dataset equipped with label sets induces a binary relation: two instances
are related (similar) when their label sets intersect. With singleton labels
this is an equivalence relation; with overlapping label sets it is only a
tolerance relation (reflexive and symmetric, not transitive).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import InvalidInputError, PairShortfallWarning


class PairConstraint(NamedTuple):
    i: int
    j: int
    y: int


@dataclass(frozen=True)
class LabeledInstance:
    features: np.ndarray
    labels: frozenset


class PairArray:
    """Columnar store of pair constraints.

    Behaves like a sequence of :class:`PairConstraint` but keeps the indices and
    labels as numpy arrays so the trainers can consume millions of pairs.
    """

    __slots__ = ("i", "j", "y")

    def __init__(self, i, j, y):
        i = np.ascontiguousarray(i, dtype=np.int64).reshape(-1)
        j = np.ascontiguousarray(j, dtype=np.int64).reshape(-1)
        y = np.ascontiguousarray(y, dtype=np.int8).reshape(-1)
        if not (len(i) == len(j) == len(y)):
            raise InvalidInputError("pair columns must have equal length")
        self.i, self.j, self.y = i, j, y

    @classmethod
    def from_constraints(cls, pairs: Iterable) -> "PairArray":
        if isinstance(pairs, PairArray):
            return pairs
        rows = [tuple(p) for p in pairs]
        if not rows:
            return cls(np.empty(0), np.empty(0), np.empty(0))
        arr = np.asarray(rows, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise InvalidInputError("pairs must be (i, j, y) triples")
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])

    def __len__(self) -> int:
        return len(self.i)

    def __iter__(self) -> Iterator[PairConstraint]:
        for a, b, c in zip(self.i.tolist(), self.j.tolist(), self.y.tolist()):
            yield PairConstraint(a, b, c)

    def __getitem__(self, k):
        if isinstance(k, slice) or isinstance(k, np.ndarray):
            return PairArray(self.i[k], self.j[k], self.y[k])
        return PairConstraint(int(self.i[k]), int(self.j[k]), int(self.y[k]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PairArray):
            return NotImplemented
        return (
            np.array_equal(self.i, other.i)
            and np.array_equal(self.j, other.j)
            and np.array_equal(self.y, other.y)
        )

    def __repr__(self) -> str:
        return f"PairArray(n={len(self)}, positives={int(self.y.sum())})"

    def max_index(self) -> int:
        if len(self) == 0:
            return -1
        return int(max(self.i.max(), self.j.max()))


@dataclass
class RelationDataset:
    instances: list
    pairs: PairArray = field(default_factory=lambda: PairArray([], [], []))

    @property
    def label_sets(self) -> list:
        return [inst.labels for inst in self.instances]


def _as_label_set(labels) -> frozenset:
    if isinstance(labels, (int, np.integer)):
        return frozenset((int(labels),))
    return frozenset(int(c) for c in labels)


def labels_similar(a, b) -> bool:
    a = _as_label_set(a)
    b = _as_label_set(b)
    if not a or not b:
        raise InvalidInputError("label sets must be non-empty")
    return not a.isdisjoint(b)


def _eligible_partners(label_sets: Sequence[frozenset]):
    """Yield (positives, negatives) sorted index arrays for every instance."""
    n = len(label_sets)
    singletons = all(len(s) == 1 for s in label_sets)
    if singletons:
        cls = np.fromiter((next(iter(s)) for s in label_sets), dtype=np.int64, count=n)
        members = {}
        others = {}
        for c in np.unique(cls):
            members[c] = np.flatnonzero(cls == c)
            others[c] = np.flatnonzero(cls != c)
        for idx in range(n):
            c = cls[idx]
            same = members[c]
            pos = np.delete(same, np.searchsorted(same, idx))
            yield pos, others[c]
        return

    universe = sorted(set().union(*label_sets))
    col = {c: k for k, c in enumerate(universe)}
    membership = np.zeros((n, len(universe)), dtype=bool)
    for idx, s in enumerate(label_sets):
        membership[idx, [col[c] for c in s]] = True
    for idx in range(n):
        related = membership[:, membership[idx]].any(axis=1)
        related[idx] = False
        pos = np.flatnonzero(related)
        related[idx] = True
        neg = np.flatnonzero(~related)
        yield pos, neg


def generate_pairs(label_sets, n_pos: int, n_neg: int, seed: int) -> PairArray:
    """Sample up to ``n_pos`` similar and ``n_neg`` dissimilar partners per instance.

    Partners are drawn uniformly without replacement from the eligible sets.
    Self-pairs never occur and an unordered pair is kept only the first time it
    is drawn. Instances lacking enough eligible partners get fewer pairs; one
    :class:`PairShortfallWarning` per pair kind summarises them.
    """
    if n_pos < 0 or n_neg < 0:
        raise InvalidInputError("pair counts must be non-negative")
    sets = [_as_label_set(s) for s in label_sets]
    n = len(sets)
    if n < 2:
        raise InvalidInputError("need at least two instances to form pairs")
    for idx, s in enumerate(sets):
        if not s:
            raise InvalidInputError(f"instance {idx} has an empty label set")

    rng = np.random.default_rng(seed)
    cap = n * (n_pos + n_neg)
    out_i = np.empty(cap, dtype=np.int64)
    out_j = np.empty(cap, dtype=np.int64)
    out_y = np.empty(cap, dtype=np.int8)
    fill = 0
    short = {"similar": [], "dissimilar": []}
    for idx, (pos, neg) in enumerate(_eligible_partners(sets)):
        for pool, want, y, kind in ((pos, n_pos, 1, "similar"), (neg, n_neg, 0, "dissimilar")):
            if want == 0:
                continue
            take = min(want, len(pool))
            if take < want:
                short[kind].append((idx, len(pool)))
            if take == 0:
                continue
            chosen = pool[rng.choice(len(pool), size=take, replace=False)]
            out_i[fill : fill + take] = idx
            out_j[fill : fill + take] = chosen
            out_y[fill : fill + take] = y
            fill += take

    for kind, hits in short.items():
        if hits:
            idx, have = hits[0]
            wanted = n_pos if kind == "similar" else n_neg
            warnings.warn(
                f"{len(hits)} instance(s) have fewer than {wanted} eligible {kind} partners "
                f"(first: instance {idx} with {have})",
                PairShortfallWarning,
                stacklevel=2,
            )

    out_i, out_j, out_y = out_i[:fill], out_j[:fill], out_y[:fill]
    lo = np.minimum(out_i, out_j)
    hi = np.maximum(out_i, out_j)
    _, first = np.unique(lo * n + hi, return_index=True)
    keep = np.sort(first)
    return PairArray(out_i[keep], out_j[keep], out_y[keep])


def relation_check(dataset: RelationDataset) -> list:
    """Return one human-readable violation per offending pair; empty when consistent."""
    sets = dataset.label_sets
    n = len(sets)
    problems = []
    if dataset.instances:
        width = len(np.asarray(dataset.instances[0].features).reshape(-1))
        for idx, inst in enumerate(dataset.instances):
            if len(np.asarray(inst.features).reshape(-1)) != width:
                problems.append(f"instance {idx}: feature length differs from instance 0")
            if not inst.labels:
                problems.append(f"instance {idx}: empty label set")
    seen = set()
    for p in dataset.pairs:
        tag = f"pair ({p.i},{p.j},y={p.y})"
        if p.y not in (0, 1):
            problems.append(f"{tag}: label must be 0 or 1")
            continue
        if p.i == p.j:
            problems.append(f"{tag}: self-pair")
            continue
        if not (0 <= p.i < n and 0 <= p.j < n):
            problems.append(f"{tag}: index out of range for {n} instances")
            continue
        key = (min(p.i, p.j), max(p.i, p.j))
        if key in seen:
            problems.append(f"{tag}: duplicate unordered pair")
            continue
        seen.add(key)
        if not sets[p.i] or not sets[p.j]:
            continue
        if labels_similar(sets[p.i], sets[p.j]) != bool(p.y):
            problems.append(f"{tag}: label contradicts label sets {sorted(sets[p.i])} / {sorted(sets[p.j])}")
    return problems


def make_dataset(features, label_sets, pairs=None) -> RelationDataset:
    features = np.asarray(features)
    instances = [LabeledInstance(features[k], _as_label_set(s)) for k, s in enumerate(label_sets)]
    if pairs is None:
        pairs = PairArray([], [], [])
    return RelationDataset(instances, PairArray.from_constraints(pairs))

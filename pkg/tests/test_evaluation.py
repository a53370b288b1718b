import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fastmetric.embedder import LogEntry
from fastmetric.errors import InvalidInputError
from fastmetric.evaluation import (
    EvalReport,
    auroc,
    emit_convergence_csv,
    jaccard,
    knn_predict,
    knn_predict_batch,
    knn_predict_multilabel,
    mean_jaccard,
    nearest_neighbors,
    pair_scores,
    read_convergence_csv,
    time_to_reach,
)

from oracles import brute_auroc, brute_knn_indices


def test_pair_scores_examples():
    emb = np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [3.0, 4.0]])
    sp = pair_scores(emb, [(0, 1, 1)], "euclidean")
    assert sp.scores[0] == 0.0
    assert pair_scores(emb, [(2, 3, 0)], "dot").scores[0] == 0.0
    assert pair_scores(emb, [(4, 5, 0)], "euclidean").scores[0] == -5.0
    assert list(pair_scores(emb, [(4, 5, 0), (0, 1, 1)]).labels) == [0, 1]


def test_pair_scores_bad_index():
    with pytest.raises(InvalidInputError):
        pair_scores(np.zeros((2, 2)), [(0, 2, 1)])


def test_auroc_examples():
    assert auroc([3.0, 2.0, 1.0, 0.0], [1, 1, 0, 0]) == 1.0
    assert auroc([1.0] * 6, [1, 0, 1, 0, 1, 0]) == 0.5
    assert auroc([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == 0.75


def test_auroc_needs_both_classes():
    with pytest.raises(InvalidInputError):
        auroc([0.1, 0.2], [1, 1])


@st.composite
def scored(draw):
    n = draw(st.integers(2, 200))
    # coarse value grid forces heavy ties
    values = draw(st.lists(st.integers(-5, 5), min_size=n, max_size=n))
    labels = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    labels[0], labels[1] = 0, 1
    return np.array(values, dtype=float) / 2, np.array(labels)


@given(scored())
def test_auroc_matches_brute_force(data):
    scores, labels = data
    assert abs(auroc(scores, labels) - brute_auroc(scores, labels)) < 1e-12


@given(scored())
def test_auroc_invariant_to_increasing_transform(data):
    scores, labels = data
    assert auroc(np.exp(scores) * 3 + 1, labels) == auroc(scores, labels)


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=4, max_size=60, unique=True), st.randoms())
def test_auroc_complement_without_ties(values, rnd):
    labels = [rnd.randint(0, 1) for _ in values]
    labels[0], labels[1] = 0, 1
    scores = np.array(values)
    assert auroc(-scores, labels) == pytest.approx(1 - auroc(scores, labels), abs=1e-12)


def test_knn_examples():
    train = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
    assert knn_predict(train, ["A", "B", "C"], [1.0, 0.0], k=1) == "B"
    train = np.array([[0.0], [1.0], [2.0], [10.0]])
    assert knn_predict(train, ["A", "A", "B", "B"], [0.5], k=3) == "A"
    # vote tie at k=2: A's neighbour is nearer
    train = np.array([[0.0], [3.0]])
    assert knn_predict(train, ["A", "B"], [1.0], k=2) == "A"
    assert knn_predict(train, ["A", "B"], [2.5], k=2) == "B"


def test_knn_distance_tie_prefers_lower_index():
    train = np.array([[1.0], [-1.0], [1.0]])
    assert list(nearest_neighbors(train, [0.0], 2)[0]) == [0, 1]
    assert knn_predict(train, [7, 8, 9], [0.0], k=1) == 7


@given(st.integers(0, 10**6), st.integers(1, 7))
def test_nearest_neighbors_match_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    train = rng.integers(-3, 4, size=(30, 3)).astype(float)  # integer grid -> many exact ties
    queries = rng.integers(-3, 4, size=(5, 3)).astype(float)
    got = nearest_neighbors(train, queries, k)
    for q, row in zip(queries, got):
        assert list(row) == brute_knn_indices(train, q, k)


def test_knn_errors():
    with pytest.raises(InvalidInputError):
        knn_predict(np.zeros((0, 2)), [], [0.0, 0.0], k=1)
    with pytest.raises(InvalidInputError):
        knn_predict(np.zeros((2, 2)), [0, 1], [0.0, 0.0], k=3)


def test_knn_batch_matches_single():
    rng = np.random.default_rng(3)
    train = rng.normal(size=(50, 4))
    labels = rng.integers(0, 3, 50)
    queries = rng.normal(size=(20, 4))
    batch = knn_predict_batch(train, labels, queries, k=5)
    assert list(batch) == [knn_predict(train, labels, q, k=5) for q in queries]


def test_multilabel_examples():
    train = np.array([[0.0], [1.0], [2.0], [50.0]])
    sets = [frozenset("A"), frozenset("AB"), frozenset("B"), frozenset("C")]
    assert knn_predict_multilabel(train, sets, [1.0], k=1) == frozenset("AB")
    assert knn_predict_multilabel(train, sets, [1.0], k=3) == frozenset("AB")
    sets = [frozenset("A"), frozenset("A"), frozenset("B"), frozenset("C")]
    assert knn_predict_multilabel(train, sets, [1.0], k=3) == frozenset("A")


@given(st.integers(0, 10**6))
def test_multilabel_agrees_with_single_label_on_strict_majority(seed):
    rng = np.random.default_rng(seed)
    train = rng.normal(size=(25, 2))
    labels = rng.integers(0, 3, 25)
    q = rng.normal(size=2)
    k = 5
    idx = nearest_neighbors(train, q, k)[0]
    counts = np.bincount(labels[idx], minlength=3)
    if counts.max() * 2 > k:
        ml = knn_predict_multilabel(train, [frozenset([c]) for c in labels.tolist()], q, k)
        assert ml == frozenset([knn_predict(train, labels, q, k)])


def test_jaccard_examples():
    assert jaccard({1, 2}, {1, 2}) == 1.0
    assert jaccard({1}, {2}) == 0.0
    assert jaccard({"A", "B"}, {"B", "C"}) == pytest.approx(1 / 3)
    assert jaccard(set(), set()) == 1.0
    assert mean_jaccard([{1}, {2}], [{1}, {3}]) == 0.5


@given(st.frozensets(st.integers(0, 5)), st.frozensets(st.integers(0, 5)))
def test_jaccard_bounds_and_symmetry(a, b):
    v = jaccard(a, b)
    assert 0.0 <= v <= 1.0
    assert v == jaccard(b, a)


def test_eval_report_range_check():
    EvalReport(auroc=0.9, knn_accuracy=1.0)
    with pytest.raises(InvalidInputError):
        EvalReport(auroc=1.5)


def test_convergence_csv_single_entry(tmp_path):
    path = tmp_path / "c.csv"
    emit_convergence_csv([LogEntry(1.5, 1, 0.3, 0.9)], path)
    assert path.read_text().splitlines() == ["seconds,auroc", "1.5,0.9"]


def test_convergence_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    secs = np.cumsum(rng.uniform(0.1, 5, 30))
    aucs = rng.uniform(0.5, 1, 30)
    log = [LogEntry(float(s), k, 0.0, float(a)) for k, (s, a) in enumerate(zip(secs, aucs))]
    path = tmp_path / "c.csv"
    emit_convergence_csv(log, path)
    back = read_convergence_csv(path)
    expected = [(float(f"{s:.6g}"), float(f"{a:.6g}")) for s, a in zip(secs, aucs)]
    assert back == expected
    assert all(b[0] > a[0] for a, b in zip(back, back[1:]))


def test_time_to_reach():
    curve = [(1.0, 0.5), (2.0, 0.97), (3.0, 0.99)]
    assert time_to_reach(curve, 0.98) == 3.0
    assert time_to_reach(curve, 0.999) == float("inf")

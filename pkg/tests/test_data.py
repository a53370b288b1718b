import struct

import numpy as np
import pytest

from fastmetric.data import (
    load_idx,
    load_labels,
    load_matrix,
    load_mnist,
    load_pairs,
    save_labels,
    save_matrix,
    save_pairs,
    synth_blobs,
    synth_multilabel,
    write_idx,
)
from fastmetric.errors import BadMagicError, CountMismatchError, ParseError, TruncatedFileError
from fastmetric.evaluation import knn_accuracy
from fastmetric.relation import PairArray, generate_pairs, labels_similar

from oracles import relation_is_transitive


@pytest.fixture
def idx_pair(tmp_path):
    images = np.zeros((2, 2, 3), dtype=np.uint8)
    images[0, 0, 0] = 255
    images[1, 1, 2] = 51
    img = tmp_path / "img"
    lab = tmp_path / "lab"
    write_idx(img, images)
    write_idx(lab, np.array([7, 3], dtype=np.uint8))
    return img, lab


def test_idx_fixture_exact_values(idx_pair):
    ds = load_idx(*idx_pair)
    assert ds.features.shape == (2, 6)
    assert ds.features[0, 0] == 1.0
    assert ds.features[0, 1] == 0.0
    assert ds.features[1, 5] == pytest.approx(0.2)
    assert ds.label_sets == [frozenset({7}), frozenset({3})]


def test_idx_header_layout(idx_pair):
    raw = idx_pair[0].read_bytes()
    assert raw[:4] == bytes([0, 0, 0x08, 3])
    assert struct.unpack(">3I", raw[4:16]) == (2, 2, 3)


def test_idx_bad_magic(idx_pair, tmp_path):
    img, lab = idx_pair
    bad = tmp_path / "bad"
    bad.write_bytes(b"\x01" + img.read_bytes()[1:])
    with pytest.raises(BadMagicError) as e:
        load_idx(bad, lab)
    assert e.value.offset == 0
    bad.write_bytes(img.read_bytes()[:2] + b"\x0d" + img.read_bytes()[3:])
    with pytest.raises(BadMagicError) as e:
        load_idx(bad, lab)
    assert e.value.offset == 2


def test_idx_truncated(idx_pair, tmp_path):
    img, lab = idx_pair
    bad = tmp_path / "short"
    bad.write_bytes(img.read_bytes()[:-1])
    with pytest.raises(TruncatedFileError) as e:
        load_idx(bad, lab)
    assert "byte offset" in str(e.value)


def test_idx_count_mismatch(idx_pair, tmp_path):
    img, _ = idx_pair
    lab = tmp_path / "lab3"
    write_idx(lab, np.array([1, 2, 3], dtype=np.uint8))
    with pytest.raises(CountMismatchError):
        load_idx(img, lab)


def test_mnist_train_split(mnist_path):
    ds = load_mnist(mnist_path, "train")
    assert ds.features.shape == (60_000, 784)
    assert len(set().union(*ds.label_sets)) == 10
    assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0


def test_mnist_test_split(mnist_path):
    assert len(load_mnist(mnist_path, "test")) == 10_000


def test_blobs_noise_free_classes_identical():
    ds = synth_blobs(3, 5, 4, noise_std=0.0, seed=1)
    labels = ds.single_labels()
    for c in range(3):
        rows = ds.features[labels == c]
        assert np.all(rows == rows[0])


def test_blobs_separable_one_nn():
    ds = synth_blobs(2, 100, 5, center_scale=50.0, noise_std=0.5, seed=2)
    labels = ds.single_labels()
    rng = np.random.default_rng(0)
    perm = rng.permutation(len(ds))
    tr, te = perm[:150], perm[150:]
    acc = knn_accuracy(ds.features[tr], labels[tr], ds.features[te], labels[te], k=1)
    assert acc == 1.0


def test_blobs_deterministic():
    a = synth_blobs(4, 10, 3, seed=5)
    b = synth_blobs(4, 10, 3, seed=5)
    np.testing.assert_array_equal(a.features, b.features)
    assert a.label_sets == b.label_sets


def test_multilabel_witnesses():
    ds = synth_multilabel(5, 100, dim=8, seed=0)
    assert ds.witnesses
    for a, b, c in ds.witnesses:
        s = ds.label_sets
        assert labels_similar(s[a], s[b]) and labels_similar(s[b], s[c])
        assert not labels_similar(s[a], s[c])
    assert all(1 <= len(s) <= 2 for s in ds.label_sets)
    assert labels_similar({0, 1}, {0})


def test_multilabel_relation_is_tolerance_not_equivalence():
    ds = synth_multilabel(4, 60, dim=6, seed=3)
    sets = ds.label_sets
    n = len(sets)
    assert all(labels_similar(sets[i], sets[i]) for i in range(n))
    assert all(labels_similar(sets[i], sets[j]) == labels_similar(sets[j], sets[i]) for i in range(n) for j in range(n))
    assert not relation_is_transitive(sets)


def test_matrix_round_trip(tmp_path):
    m = np.random.default_rng(0).normal(size=(7, 3)).astype(np.float32)
    save_matrix(tmp_path / "m", m)
    back = load_matrix(tmp_path / "m")
    assert back.tobytes() == m.tobytes()


def test_matrix_empty(tmp_path):
    save_matrix(tmp_path / "e", np.zeros((0, 4)))
    assert (tmp_path / "e").stat().st_size == 12
    assert load_matrix(tmp_path / "e").shape == (0, 4)


def test_matrix_truncated_and_bad_magic(tmp_path):
    save_matrix(tmp_path / "m", np.ones((3, 3)))
    raw = (tmp_path / "m").read_bytes()
    (tmp_path / "t").write_bytes(raw[:-4])
    with pytest.raises(TruncatedFileError):
        load_matrix(tmp_path / "t")
    (tmp_path / "b").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagicError):
        load_matrix(tmp_path / "b")


def test_pairs_round_trip(tmp_path):
    pairs = generate_pairs([{c % 3} for c in range(20)], 2, 2, seed=0)
    save_pairs(tmp_path / "p.csv", pairs)
    text = (tmp_path / "p.csv").read_text()
    assert text.startswith("i,j,y\n")
    assert load_pairs(tmp_path / "p.csv") == pairs


def test_pairs_empty_and_malformed(tmp_path):
    save_pairs(tmp_path / "e.csv", PairArray([], [], []))
    assert len(load_pairs(tmp_path / "e.csv")) == 0
    (tmp_path / "bad.csv").write_text("a,b,c\n1,2,1\n")
    with pytest.raises(ParseError):
        load_pairs(tmp_path / "bad.csv")
    (tmp_path / "bad2.csv").write_text("i,j,y\n1,2,5\n")
    with pytest.raises(ParseError):
        load_pairs(tmp_path / "bad2.csv")


def test_labels_round_trip(tmp_path):
    sets = [frozenset({1}), frozenset({2, 5}), frozenset({0})]
    save_labels(tmp_path / "l.txt", sets)
    assert (tmp_path / "l.txt").read_text() == "1\n2 5\n0\n"
    assert load_labels(tmp_path / "l.txt") == sets

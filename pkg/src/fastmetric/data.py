"""Dataset loading, synthetic generators and on-disk formats.

Formats
-------
IDX
    The MNIST container: two zero bytes, a type code (0x08 = unsigned byte),
    the number of dimensions, then big-endian uint32 sizes and the payload.
FMLT
    ``b"FMLT"``, uint32 n, uint32 d (little-endian), then n*d float32 values
    row-major. Used for target tables, embeddings and feature matrices.
pairs CSV
    Header ``i,j,y`` then one ``i,j,y`` line of decimal integers per pair.
labels
    One line per instance holding its space-separated integer labels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    CountMismatchError,
    InvalidInputError,
    ParseError,
    TruncatedFileError,
)
from .relation import PairArray

MATRIX_MAGIC = b"FMLT"
IDX_UBYTE = 0x08


@dataclass
class DenseDataset:
    features: np.ndarray
    label_sets: list

    def __post_init__(self):
        self.features = np.asarray(self.features)
        if self.features.ndim != 2:
            raise InvalidInputError("features must be an n x f matrix")
        if len(self.label_sets) != len(self.features):
            raise InvalidInputError("one label set per instance is required")

    def __len__(self):
        return len(self.features)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def single_labels(self) -> np.ndarray:
        if any(len(s) != 1 for s in self.label_sets):
            raise InvalidInputError("dataset is multi-label")
        return np.array([next(iter(s)) for s in self.label_sets], dtype=np.int64)

    def subset(self, idx) -> "DenseDataset":
        idx = np.asarray(idx)
        return DenseDataset(self.features[idx], [self.label_sets[k] for k in idx.tolist()])


def _read_idx(path):
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise TruncatedFileError("IDX header shorter than 4 bytes", offset=len(data), path=path)
    if data[0] != 0 or data[1] != 0:
        raise BadMagicError("IDX magic must start with two zero bytes", offset=0, path=path)
    if data[2] != IDX_UBYTE:
        raise BadMagicError(f"unsupported IDX type code 0x{data[2]:02x}", offset=2, path=path)
    ndim = data[3]
    header = 4 + 4 * ndim
    if len(data) < header:
        raise TruncatedFileError("IDX dimension sizes cut short", offset=len(data), path=path)
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    need = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    if len(data) < header + need:
        raise TruncatedFileError(
            f"IDX payload needs {need} bytes, found {len(data) - header}", offset=len(data), path=path
        )
    if len(data) > header + need:
        raise ParseError("trailing bytes after IDX payload", offset=header + need, path=path)
    return np.frombuffer(data, np.uint8, need, header).reshape(dims)


def load_idx(images_path, labels_path) -> DenseDataset:
    """Read an IDX image/label file pair into features in [0, 1] and singleton labels."""
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if images.ndim < 2:
        raise ParseError("image file must have at least 2 dimensions", offset=3, path=images_path)
    if labels.ndim != 1:
        raise ParseError("label file must be 1-dimensional", offset=3, path=labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels", offset=4, path=labels_path
        )
    features = images.reshape(images.shape[0], -1).astype(np.float32) / np.float32(255.0)
    return DenseDataset(features, [frozenset((int(c),)) for c in labels])


def load_mnist(directory, split="train") -> DenseDataset:
    prefix = "train" if split == "train" else "t10k"
    d = Path(directory)
    return load_idx(d / f"{prefix}-images-idx3-ubyte", d / f"{prefix}-labels-idx1-ubyte")


def write_idx(path, array):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(bytes((0, 0, IDX_UBYTE, array.ndim)))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def synth_blobs(classes, per_class, dim, center_scale=5.0, noise_std=1.0, seed=0) -> DenseDataset:
    """Gaussian blobs around uniformly placed class centres, one label each."""
    if classes < 2 or per_class < 1 or noise_std < 0:
        raise InvalidInputError("need classes >= 2, per_class >= 1, noise_std >= 0")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-center_scale, center_scale, size=(classes, dim))
    labels = np.repeat(np.arange(classes), per_class)
    features = centers[labels] + noise_std * rng.standard_normal((len(labels), dim))
    return DenseDataset(features, [frozenset((int(c),)) for c in labels])


@dataclass
class MultiLabelDataset(DenseDataset):
    witnesses: list = None
    prototypes: np.ndarray = None


def synth_multilabel(base_labels, n, dim=32, seed=0, noise_std=0.1, pair_fraction=0.5) -> MultiLabelDataset:
    """Instances with one or two labels whose features sum the label prototypes.

    The first instances are planted as non-transitivity witnesses
    ``({c}, {c, c+1}, {c+1})``; their index triples are returned in
    ``witnesses``.
    """
    if base_labels < 2:
        raise InvalidInputError("need at least two base labels")
    if n < 3:
        raise InvalidInputError("need at least three instances to plant a witness")
    rng = np.random.default_rng(seed)
    prototypes = rng.standard_normal((base_labels, dim))
    sets = []
    witnesses = []
    for c in range(min(base_labels - 1, n // 3)):
        k = len(sets)
        sets.extend([frozenset((c,)), frozenset((c, c + 1)), frozenset((c + 1,))])
        witnesses.append((k, k + 1, k + 2))
    while len(sets) < n:
        if rng.random() < pair_fraction:
            a, b = rng.choice(base_labels, size=2, replace=False)
            sets.append(frozenset((int(a), int(b))))
        else:
            sets.append(frozenset((int(rng.integers(base_labels)),)))
    membership = np.zeros((n, base_labels))
    for k, s in enumerate(sets):
        membership[k, list(s)] = 1.0
    features = membership @ prototypes + noise_std * rng.standard_normal((n, dim))
    return MultiLabelDataset(features, sets, witnesses=witnesses, prototypes=prototypes)


def save_matrix(path, matrix):
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise InvalidInputError("only 2-D matrices can be saved")
    n, d = matrix.shape
    with open(path, "wb") as f:
        f.write(MATRIX_MAGIC)
        f.write(struct.pack("<II", n, d))
        f.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def load_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MATRIX_MAGIC:
        raise BadMagicError("expected FMLT magic", offset=0, path=path)
    if len(data) < 12:
        raise TruncatedFileError("FMLT header cut short", offset=len(data), path=path)
    n, d = struct.unpack_from("<II", data, 4)
    need = 12 + 4 * n * d
    if len(data) != need:
        raise TruncatedFileError(
            f"FMLT header says {n}x{d} ({need} bytes) but file has {len(data)} bytes",
            offset=min(len(data), need),
            path=path,
        )
    return np.frombuffer(data, "<f4", n * d, 12).reshape(n, d).astype(np.float32)


def save_pairs(path, pairs):
    pairs = PairArray.from_constraints(pairs)
    with open(path, "w", encoding="utf-8") as f:
        f.write("i,j,y\n")
        for i, j, y in zip(pairs.i.tolist(), pairs.j.tolist(), pairs.y.tolist()):
            f.write(f"{i},{j},{y}\n")


def load_pairs(path) -> PairArray:
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "i,j,y":
            raise ParseError(f"pairs file must start with 'i,j,y', got {header!r}", offset=0, path=path)
        body = f.read()
    if not body.strip():
        return PairArray([], [], [])
    try:
        arr = np.loadtxt(body.splitlines(), delimiter=",", dtype=np.int64, ndmin=2)
    except ValueError as e:
        raise ParseError(f"malformed pairs line: {e}", path=path) from None
    if arr.shape[1] != 3:
        raise ParseError("each pairs line needs exactly three fields", path=path)
    if not np.isin(arr[:, 2], (0, 1)).all():
        raise ParseError("pair labels must be 0 or 1", path=path)
    return PairArray(arr[:, 0], arr[:, 1], arr[:, 2])


def save_labels(path, label_sets):
    with open(path, "w", encoding="utf-8") as f:
        for s in label_sets:
            f.write(" ".join(str(c) for c in sorted(s)) + "\n")


def load_labels(path) -> list:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            fields = line.split()
            try:
                out.append(frozenset(int(c) for c in fields))
            except ValueError:
                raise ParseError(f"non-integer label on line {lineno}", path=path) from None
    return out

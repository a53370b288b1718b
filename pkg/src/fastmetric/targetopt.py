"""Phase 1: learn one free target vector per instance from pair constraints alone.

The embedding is a lookup table (one row per instance). It is fitted by
minibatch Adam on the mean pair loss, touching only the rows that occur in
each minibatch.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidInputError, NumericFailureError
from .relation import PairArray

log = logging.getLogger(__name__)

CONTRASTIVE = "contrastive"
DOT = "dot"


@dataclass(frozen=True)
class LossKind:
    tag: str = CONTRASTIVE
    margin: float = 1.0

    def __post_init__(self):
        if self.tag not in (CONTRASTIVE, DOT):
            raise InvalidInputError(f"unknown loss kind {self.tag!r}")
        if self.tag == CONTRASTIVE and not self.margin > 0:
            raise InvalidInputError("contrastive margin must be positive")

    @classmethod
    def contrastive(cls, margin=1.0):
        return cls(CONTRASTIVE, float(margin))

    @classmethod
    def dot(cls):
        return cls(DOT, 1.0)

    @property
    def code(self) -> int:
        return 0 if self.tag == CONTRASTIVE else 1


@dataclass
class TargetTable:
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise InvalidInputError("target table must be a 2-D matrix")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("inputs must be finite")


def contrastive_loss_grad(a, b, y, m=1.0):
    """Contrastive loss of one pair and its gradients w.r.t. both embeddings.

    Similar pairs pay the squared distance; dissimilar pairs pay the squared
    shortfall of their distance below the margin ``m``. At coincident points of
    a dissimilar pair the gradient is taken as zero (no defined direction).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_finite(a, b)
    if not m > 0:
        raise InvalidInputError("margin must be positive")
    diff = a - b
    sq = float(diff @ diff)
    if y:
        grad = 2.0 * diff
        return sq, grad, -grad
    dist = np.sqrt(sq)
    hinge = m - dist
    if hinge <= 0.0:
        return 0.0, np.zeros_like(a), np.zeros_like(b)
    if dist == 0.0:
        return hinge * hinge, np.zeros_like(a), np.zeros_like(b)
    grad = (-2.0 * hinge / dist) * diff
    return hinge * hinge, grad, -grad


def dot_loss_grad(a, b, y):
    """Half squared error between the relation label and the dot product."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_finite(a, b)
    r = y - float(a @ b)
    return 0.5 * r * r, -r * b, -r * a


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    buf: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidInputError("Adam betas must lie in [0, 1)")
        if not (self.eps > 0 and self.lr > 0):
            raise InvalidInputError("Adam lr and eps must be positive")


def adam_step(state: AdamState, params, grads):
    """Apply one bias-corrected Adam update to ``params`` in place and return it."""
    params = np.asarray(params)
    grads = np.asarray(grads)
    if params.shape != grads.shape:
        raise InvalidInputError(f"shape mismatch: params {params.shape} vs grads {grads.shape}")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    elif state.m.shape != params.shape:
        raise InvalidInputError("Adam accumulators do not match parameter shape")
    state.t += 1
    buf = state.buf
    if buf is None or buf.shape != params.shape or buf.dtype != params.dtype:
        buf = state.buf = np.empty_like(params)
    dt = params.dtype.type
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    # m <- b1 m + (1 - b1) g
    state.m *= dt(state.beta1)
    np.multiply(grads, dt(1.0 - state.beta1), out=buf)
    state.m += buf
    # v <- b2 v + (1 - b2) g^2
    state.v *= dt(state.beta2)
    np.multiply(grads, grads, out=buf)
    buf *= dt(1.0 - state.beta2)
    state.v += buf
    # p <- p - (lr / bc1) m / (sqrt(v / bc2) + eps)
    np.multiply(state.v, dt(1.0 / bc2), out=buf)
    np.sqrt(buf, out=buf)
    buf += dt(state.eps)
    np.divide(state.m, buf, out=buf)
    buf *= dt(state.lr / bc1)
    params -= buf
    return params


@dataclass
class PhaseOneConfig:
    dim: int = 16
    epochs: int = 30
    batch_size: int = 256
    seed: int = 0
    init_scale: float = 0.1
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    threads: int = 1

    def __post_init__(self):
        if self.dim < 1 or self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("dim, epochs and batch_size must be >= 1")
        if not self.init_scale > 0:
            raise InvalidInputError("init_scale must be positive")
        AdamState(self.lr, self.beta1, self.beta2, self.eps)


@dataclass
class PhaseOneResult:
    table: TargetTable
    objectives: list = field(default_factory=list)
    seconds: float = 0.0
    backend: str = ""


def init_targets(n: int, config: PhaseOneConfig) -> np.ndarray:
    rng = np.random.default_rng(config.seed)
    return config.init_scale * rng.standard_normal((n, config.dim))


def objective(table, pairs, loss: LossKind) -> float:
    """Mean pair loss of ``table`` over the whole constraint set."""
    vectors = table.vectors if isinstance(table, TargetTable) else np.asarray(table, dtype=np.float64)
    pairs = PairArray.from_constraints(pairs)
    return float(
        kernels.pair_objective(np.ascontiguousarray(vectors), pairs.i, pairs.j, pairs.y, loss.code, loss.margin)
    )


def learn_targets(pairs, n: int, loss: LossKind, config: PhaseOneConfig | None = None,
                  backend=None, on_epoch=None) -> PhaseOneResult:
    """Fit the lookup table of target vectors.

    Returns the table together with the full-set objective after every epoch and
    the wall time of the optimisation itself. ``backend`` selects a kernel module
    explicitly ('cython' or 'numpy'); default is whatever :mod:`kernels` picked.
    """
    config = config or PhaseOneConfig()
    pairs = PairArray.from_constraints(pairs)
    if len(pairs) == 0:
        raise InvalidInputError("no pair constraints given")
    lo = min(int(pairs.i.min()), int(pairs.j.min()))
    if lo < 0 or pairs.max_index() >= n:
        raise InvalidInputError(f"pair index out of range for {n} instances")
    impl = kernels.get_backend(backend)

    targets = np.ascontiguousarray(init_targets(n, config))
    m1 = np.zeros_like(targets)
    m2 = np.zeros_like(targets)
    objectives = []
    step = 0
    elapsed = 0.0
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(pairs)).astype(np.int64)
        t0 = time.perf_counter()
        step, _ = impl.phase1_epoch(
            targets, m1, m2, pairs.i, pairs.j, pairs.y, order,
            config.batch_size, loss.code, loss.margin,
            config.lr, config.beta1, config.beta2, config.eps, step, config.threads,
        )
        elapsed += time.perf_counter() - t0
        obj = float(impl.pair_objective(targets, pairs.i, pairs.j, pairs.y, loss.code, loss.margin))
        if not np.isfinite(obj):
            raise NumericFailureError(f"phase-1 objective became non-finite at epoch {epoch + 1}")
        objectives.append(obj)
        log.info("epoch %d objective %.6g", epoch + 1, obj)
        if on_epoch is not None:
            on_epoch(epoch + 1, obj, elapsed)
    return PhaseOneResult(TargetTable(targets), objectives, elapsed, impl.BACKEND)


def standardize_targets(table) -> TargetTable:
    """Centre each component and divide everything by the mean component std.

    A single shared scale keeps the geometry of the target space intact, unlike
    per-component standardisation. Population std (ddof=0).
    """
    vectors = table.vectors if isinstance(table, TargetTable) else np.asarray(table, dtype=np.float64)
    if vectors.shape[0] < 2:
        raise InvalidInputError("need at least two target vectors to standardize")
    centred = vectors - vectors.mean(axis=0)
    scale = centred.std(axis=0).mean()
    if not scale > 0:
        raise NumericFailureError("target vectors are all identical; cannot standardize")
    out = centred / scale
    # second pass absorbs the rounding left by the first
    out -= out.mean(axis=0)
    out /= out.std(axis=0).mean()
    return TargetTable(out)

"""Phase 2: regress features onto the learned targets, plus the Siamese baseline.

Both trainers share one loop. The wall clock in the log counts training work
only; evaluation callbacks, exact-objective passes and snapshots run with the
clock paused so the two methods are timed on the same footing.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import InvalidInputError, NumericFailureError, StandardizationWarning
from .nn import MLP, Optimizer, backward, forward, predict, squared_error
from .relation import PairArray
from .targetopt import TargetTable

log = logging.getLogger(__name__)


class LogEntry(NamedTuple):
    seconds: float
    epoch: float
    objective: float
    test_auroc: Optional[float] = None
    val_score: Optional[float] = None


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    seed: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # log cadence in minibatch steps; None logs once per epoch
    eval_every: Optional[int] = None
    # model -> test AUROC, evaluated at each log point
    evaluator: Optional[Callable] = None
    # model -> validation score (higher is better); best snapshot is restored
    validator: Optional[Callable] = None
    # recompute the exact training objective (eval mode) at each log point
    exact_objective: bool = False
    # seconds added to every timestamp, e.g. the phase-1 time of FML
    time_offset: float = 0.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("epochs and batch_size must be >= 1")
        if self.eval_every is not None and self.eval_every < 1:
            raise InvalidInputError("eval_every must be >= 1")


@dataclass
class TrainRun:
    model: MLP
    config: TrainConfig
    log: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    initial_objective: float = float("nan")
    best_epoch: Optional[float] = None
    best_score: Optional[float] = None

    @property
    def train_seconds(self) -> float:
        return float(sum(self.epoch_seconds))

    @property
    def final_objective(self) -> float:
        return self.log[-1].objective if self.log else float("nan")


def contrastive_batch(oa, ob, y, margin):
    """Mean contrastive loss over a batch of embedding pairs and its gradients."""
    diff = oa - ob
    sq = np.sum(diff * diff, axis=1)
    dist = np.sqrt(sq)
    similar = np.asarray(y) == 1
    hinge = np.maximum(margin - dist, 0.0)
    losses = np.where(similar, sq, hinge * hinge)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(similar, 2.0, np.where((hinge > 0) & (dist > 0), -2.0 * hinge / dist, 0.0))
    rows = len(diff)
    ga = (coef / rows).astype(diff.dtype)[:, None] * diff
    return float(losses.mean()), ga, -ga


def check_standardized(targets: np.ndarray, tol=1e-3) -> bool:
    mean_ok = np.max(np.abs(targets.mean(axis=0))) < tol
    std_ok = abs(targets.std(axis=0).mean() - 1.0) < tol
    return bool(mean_ok and std_ok)


def regression_objective(model: MLP, features, targets) -> float:
    """Eval-mode ``sum ||g(x_i) - t_i||^2 / (2n)``."""
    out = predict(model, features).astype(np.float64)
    diff = out - targets
    return float(0.5 * np.sum(diff * diff) / len(targets))


def siamese_objective(model: MLP, features, pairs: PairArray, margin) -> float:
    emb = predict(model, features).astype(np.float64)
    loss, _, _ = contrastive_batch(emb[pairs.i], emb[pairs.j], pairs.y, margin)
    return loss


class _Clock:
    def __init__(self, offset):
        self.total = offset
        self._t0 = None

    def start(self):
        self._t0 = time.perf_counter()

    def stop(self):
        self.total += time.perf_counter() - self._t0
        self._t0 = None


def _run_loop(model, config, n_items, step_fn, exact_objective_fn):
    run = TrainRun(model, config)
    run.initial_objective = exact_objective_fn()
    optimizer = Optimizer(model, config.lr, config.beta1, config.beta2, config.eps)
    drop_rng = np.random.default_rng([config.seed, 1 << 20])
    steps_per_epoch = -(-n_items // config.batch_size)
    clock = _Clock(config.time_offset)
    best = None
    losses_since_log = []
    step = 0

    def log_point(epoch_value):
        nonlocal best
        model.eval()
        obj = exact_objective_fn() if config.exact_objective else float(np.mean(losses_since_log))
        losses_since_log.clear()
        if not np.isfinite(obj):
            raise NumericFailureError(f"training objective became non-finite at epoch {epoch_value:g}")
        test = config.evaluator(model) if config.evaluator else None
        val = config.validator(model) if config.validator else None
        if val is not None and (best is None or val > best[0]):
            best = (val, epoch_value, model.copy())
        entry = LogEntry(clock.total, epoch_value, obj, test, val)
        run.log.append(entry)
        log.info("t=%.2fs epoch %.3g objective %.6g test_auroc %s", entry.seconds, epoch_value, obj, test)
        model.train()

    model.train()
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(n_items)
        epoch_start = clock.total
        clock.start()
        for k, s in enumerate(range(0, n_items, config.batch_size)):
            loss = step_fn(order[s : s + config.batch_size], optimizer, drop_rng)
            if not np.isfinite(loss):
                clock.stop()
                raise NumericFailureError(f"training loss became non-finite at epoch {epoch + 1}")
            losses_since_log.append(loss)
            step += 1
            last = k == steps_per_epoch - 1
            if (config.eval_every and step % config.eval_every == 0) or (last and not config.eval_every):
                clock.stop()
                log_point(epoch + (k + 1) / steps_per_epoch)
                clock.start()
        clock.stop()
        run.epoch_seconds.append(clock.total - epoch_start)
    model.eval()
    if best is not None:
        run.best_score, run.best_epoch = best[0], best[1]
        model.load_state(best[2])
    return run


def train_regressor(features, targets, model: MLP, config: TrainConfig | None = None) -> TrainRun:
    """Fit ``model`` to map each feature row to its (standardized) target vector."""
    config = config or TrainConfig()
    X = np.ascontiguousarray(features, dtype=model.dtype)
    T = targets.vectors if isinstance(targets, TargetTable) else np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_width:
        raise InvalidInputError(f"feature width {X.shape[-1]} != model input width {model.input_width}")
    if T.ndim != 2 or T.shape[1] != model.output_width:
        raise InvalidInputError(f"target dim {T.shape[-1]} != model output width {model.output_width}")
    if len(T) != len(X):
        raise InvalidInputError("one target vector per feature row is required")
    if not check_standardized(T):
        warnings.warn("targets do not look standardized (mean 0, mean std 1)", StandardizationWarning, stacklevel=2)
    Tm = np.ascontiguousarray(T, dtype=model.dtype)

    def step_fn(idx, optimizer, rng):
        out, cache = forward(model, X[idx], rng, train=True)
        loss, g = squared_error(out, Tm[idx])
        gw, gb, _ = backward(model, cache, g)
        optimizer.step(model, gw, gb)
        return loss

    return _run_loop(model, config, len(X), step_fn, lambda: regression_objective(model, X, T))


def train_siamese(features, pairs, branch: MLP, margin=1.0, config: TrainConfig | None = None) -> TrainRun:
    """Train one shared branch on pairs with the contrastive loss.

    Both members of every pair go through the same parameters; their gradients
    add up in the shared weights.
    """
    config = config or TrainConfig()
    if not margin > 0:
        raise InvalidInputError("margin must be positive")
    X = np.ascontiguousarray(features, dtype=branch.dtype)
    pairs = PairArray.from_constraints(pairs)
    if X.ndim != 2 or X.shape[1] != branch.input_width:
        raise InvalidInputError(f"feature width {X.shape[-1]} != branch input width {branch.input_width}")
    if len(pairs) == 0:
        raise InvalidInputError("no pairs to train on")
    if min(pairs.i.min(), pairs.j.min()) < 0 or pairs.max_index() >= len(X):
        raise InvalidInputError("pair index out of range for the feature matrix")
    y = pairs.y

    def step_fn(idx, optimizer, rng):
        b = len(idx)
        stacked = np.concatenate([X[pairs.i[idx]], X[pairs.j[idx]]])
        out, cache = forward(branch, stacked, rng, train=True)
        loss, ga, gb = contrastive_batch(out[:b], out[b:], y[idx], margin)
        gw, gbias, _ = backward(branch, cache, np.concatenate([ga, gb]))
        optimizer.step(branch, gw, gbias)
        return loss

    return _run_loop(branch, config, len(pairs), step_fn, lambda: siamese_objective(branch, X, pairs, margin))


def embed(model: MLP, x) -> np.ndarray:
    """Deterministic eval-mode embedding of one vector or a batch."""
    return predict(model, x)

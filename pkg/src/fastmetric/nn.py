"""A small dense feed-forward network with exact backprop and Adam training.

Weights are stored as ``(input_width, output_width)`` matrices so that a batch
``X`` of row vectors maps to ``X @ W + b``. Dropout is inverted: surviving
units are scaled by ``1/(1-p)`` during training, so evaluation is a plain
affine/ReLU stack.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, InvalidStateError, NumericFailureError, ParseError
from .targetopt import AdamState, adam_step

RELU = "relu"
LINEAR = "linear"
_ACT_CODES = {RELU: 0, LINEAR: 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}

MODEL_MAGIC = b"FMLM"


@dataclass(frozen=True)
class LayerSpec:
    input_width: int
    output_width: int
    activation: str = RELU
    dropout_before: float = 0.0

    def __post_init__(self):
        if self.input_width < 1 or self.output_width < 1:
            raise InvalidInputError("layer widths must be >= 1")
        if self.activation not in _ACT_CODES:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_before < 1.0:
            raise InvalidInputError("dropout probability must lie in [0, 1)")


def glorot_init(fan_in: int, fan_out: int, seed=None, dtype=np.float64) -> np.ndarray:
    """Uniform on ``[-L, L]`` with ``L = sqrt(6 / (fan_in + fan_out))``."""
    if fan_in < 1 or fan_out < 1:
        raise InvalidInputError("fan_in and fan_out must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def parse_arch(arch: str) -> list:
    try:
        widths = [int(w) for w in arch.strip().split("-")]
    except ValueError:
        raise InvalidInputError(f"bad architecture string {arch!r}") from None
    if len(widths) < 2 or min(widths) < 1:
        raise InvalidInputError(f"bad architecture string {arch!r}")
    return widths


def layer_specs(widths: Sequence[int], dropout: float = 0.0, placement: str = "inner") -> list:
    """Build layer specs for a ReLU MLP with a linear output layer.

    ``placement`` picks where dropout goes:

    ``inner``
        before every hidden layer except the first (nothing on the raw input,
        nothing before the output layer).
    ``all``
        before every hidden layer including the first.
    """
    if placement not in ("inner", "all"):
        raise InvalidInputError(f"unknown dropout placement {placement!r}")
    nlayers = len(widths) - 1
    specs = []
    for k in range(nlayers):
        is_output = k == nlayers - 1
        p = 0.0
        if not is_output and (k > 0 or placement == "all"):
            p = dropout
        specs.append(LayerSpec(widths[k], widths[k + 1], LINEAR if is_output else RELU, p))
    return specs


@dataclass
class Cache:
    inputs: list
    pre: list
    masks: list
    version: int
    model_id: int


class MLP:
    """Dense network: the phase-2 regressor and the Siamese branch."""

    def __init__(self, layers: Sequence[LayerSpec], weights=None, biases=None, seed=None,
                 dtype=np.float32):
        layers = list(layers)
        if not layers:
            raise InvalidInputError("an MLP needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.output_width != b.input_width:
                raise InvalidInputError(
                    f"layer widths do not chain: {a.output_width} -> {b.input_width}"
                )
        if layers[-1].activation != LINEAR:
            raise InvalidInputError("the output layer must be linear")
        self.layers = layers
        self.dtype = np.dtype(dtype)
        if weights is None:
            rng = np.random.default_rng(seed)
            weights = [glorot_init(s.input_width, s.output_width, rng, self.dtype) for s in layers]
        if biases is None:
            biases = [np.zeros(s.output_width, dtype=self.dtype) for s in layers]
        self.weights = [np.ascontiguousarray(w, dtype=self.dtype) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=self.dtype) for b in biases]
        for s, w, b in zip(layers, self.weights, self.biases):
            if w.shape != (s.input_width, s.output_width) or b.shape != (s.output_width,):
                raise InvalidInputError("parameter shapes do not match layer specs")
        self.training = False
        self.version = 0

    @classmethod
    def from_arch(cls, arch, dropout=0.0, placement="inner", seed=None, dtype=np.float32):
        widths = parse_arch(arch) if isinstance(arch, str) else list(arch)
        return cls(layer_specs(widths, dropout, placement), seed=seed, dtype=dtype)

    @property
    def input_width(self) -> int:
        return self.layers[0].input_width

    @property
    def output_width(self) -> int:
        return self.layers[-1].output_width

    @property
    def arch(self) -> str:
        return "-".join(str(w) for w in [self.input_width] + [s.output_width for s in self.layers])

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def copy(self) -> "MLP":
        m = MLP(self.layers, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                dtype=self.dtype)
        m.training = self.training
        return m

    def astype(self, dtype) -> "MLP":
        return MLP(self.layers, self.weights, self.biases, dtype=dtype)

    def load_state(self, other: "MLP"):
        for dst, src in zip(self.params(), other.params()):
            dst[...] = src
        self.version += 1


def forward(model: MLP, x, rng=None, train=None):
    """Evaluate the network on one vector or a batch of row vectors.

    Returns ``(output, cache)``. In training mode ``rng`` (a Generator or seed)
    draws the dropout masks.
    """
    x = np.asarray(x, dtype=model.dtype)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != model.input_width:
        raise InvalidInputError(
            f"input width {h.shape[-1]} does not match model input width {model.input_width}"
        )
    train = model.training if train is None else train
    if train and not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    inputs, pre, masks = [], [], []
    for spec, w, b in zip(model.layers, model.weights, model.biases):
        mask = None
        if train and spec.dropout_before > 0.0:
            keep = 1.0 - spec.dropout_before
            mask = (rng.random(h.shape, dtype=np.float32) < keep).astype(model.dtype) / model.dtype.type(keep)
            h = h * mask
        masks.append(mask)
        inputs.append(h)
        z = h @ w
        z += b
        pre.append(z)
        h = np.maximum(z, 0) if spec.activation == RELU else z
    cache = Cache(inputs, pre, masks, model.version, id(model))
    return (h[0] if single else h), cache


def backward(model: MLP, cache: Cache, grad_output):
    """Reverse-mode pass through a cached forward evaluation.

    Gradients are summed over the rows of the batch. Returns
    ``(weight_grads, bias_grads, input_grad)``.
    """
    if cache is None or not cache.inputs:
        raise InvalidStateError("backward needs the cache from a forward call")
    if cache.model_id != id(model) or cache.version != model.version:
        raise InvalidStateError("cache is stale: the model changed since the forward pass")
    g = np.asarray(grad_output, dtype=model.dtype)
    single = g.ndim == 1
    if single:
        g = g[None, :]
    if g.shape != cache.pre[-1].shape:
        raise InvalidInputError("grad_output shape does not match the forward output")
    nl = len(model.layers)
    gw = [None] * nl
    gb = [None] * nl
    for k in range(nl - 1, -1, -1):
        if model.layers[k].activation == RELU:
            g = g * (cache.pre[k] > 0)
        gw[k] = cache.inputs[k].T @ g
        gb[k] = g.sum(axis=0)
        g = g @ model.weights[k].T
        if cache.masks[k] is not None:
            g = g * cache.masks[k]
    return gw, gb, (g[0] if single else g)


def squared_error(output, target):
    """Loss ``sum ||o - t||^2 / (2 B)`` over a batch and its output gradient."""
    diff = output - target
    rows = diff.shape[0] if diff.ndim == 2 else 1
    return float(0.5 * np.sum(diff * diff) / rows), diff / rows


class Optimizer:
    """One Adam state per parameter tensor of a model."""

    def __init__(self, model: MLP, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.states = [AdamState(lr, beta1, beta2, eps) for _ in model.params()]

    def step(self, model: MLP, gw, gb):
        grads = []
        for a, b in zip(gw, gb):
            grads.extend((a, b))
        for state, p, g in zip(self.states, model.params(), grads):
            adam_step(state, p, g)
        model.version += 1


def train_step(model: MLP, inputs, targets, loss_grad, optimizer: Optimizer, rng=None) -> float:
    """One Adam update on the minibatch; returns the loss before the update.

    ``loss_grad(output, targets)`` must return ``(mean_loss, d mean_loss / d output)``.
    """
    inputs = np.asarray(inputs)
    if len(inputs) == 0:
        raise InvalidInputError("empty minibatch")
    out, cache = forward(model, inputs, rng, train=model.training)
    loss, g = loss_grad(out, targets)
    if not np.isfinite(loss):
        raise NumericFailureError("non-finite training loss")
    gw, gb, _ = backward(model, cache, g)
    optimizer.step(model, gw, gb)
    return float(loss)


def predict(model: MLP, x, batch_size=4096) -> np.ndarray:
    """Eval-mode forward pass over many rows, chunked to bound memory."""
    x = np.asarray(x)
    if x.ndim == 1:
        return forward(model, x, train=False)[0]
    outs = [forward(model, x[s : s + batch_size], train=False)[0] for s in range(0, len(x), batch_size)]
    if not outs:
        return np.empty((0, model.output_width), dtype=model.dtype)
    return np.concatenate(outs)


def save_model(model: MLP, path):
    """Write the binary ``FMLM`` model file (little-endian, float32 payload)."""
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", len(model.layers)))
        for s in model.layers:
            f.write(struct.pack("<IIIf", s.input_width, s.output_width, _ACT_CODES[s.activation], s.dropout_before))
        for w, b in zip(model.weights, model.biases):
            f.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_model(path, dtype=np.float32) -> MLP:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MODEL_MAGIC:
        raise ParseError("bad model magic", offset=0, path=path)
    if len(data) < 8:
        raise ParseError("truncated model header", offset=len(data), path=path)
    (nl,) = struct.unpack_from("<I", data, 4)
    off = 8
    layers = []
    for _ in range(nl):
        if off + 16 > len(data):
            raise ParseError("truncated layer header", offset=off, path=path)
        fi, fo, act, p = struct.unpack_from("<IIIf", data, off)
        if act not in _ACT_NAMES:
            raise ParseError(f"unknown activation code {act}", offset=off + 8, path=path)
        layers.append(LayerSpec(fi, fo, _ACT_NAMES[act], float(np.float32(p))))
        off += 16
    weights, biases = [], []
    for s in layers:
        nw = s.input_width * s.output_width
        need = 4 * (nw + s.output_width)
        if off + need > len(data):
            raise ParseError("truncated parameter payload", offset=off, path=path)
        weights.append(np.frombuffer(data, "<f4", nw, off).reshape(s.input_width, s.output_width))
        off += 4 * nw
        biases.append(np.frombuffer(data, "<f4", s.output_width, off))
        off += 4 * s.output_width
    if off != len(data):
        raise ParseError("trailing bytes after model payload", offset=off, path=path)
    return MLP(layers, weights, biases, dtype=dtype)

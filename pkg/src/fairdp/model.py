"""Small fully-connected binary classifier with manual backprop.

Architecture: input -> (ReLU hidden layers with biases) -> single sigmoid
output unit. The output layer has NO bias on purpose: the fairness
certificate treats the pre-sigmoid output as an inner product between the
output weights and the penultimate activation, and a bias term would break
that form.

Gradients are computed one example at a time (per-example clipping needs
them individually anyway) against the binary cross-entropy loss. The
canonical flattening order is frozen: for each hidden layer its weight
matrix row-major then its bias, and the output weight vector last; the
output weights therefore occupy the final slice of the flat vector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, InvalidParameterError
from .linalg import FloatArray, RngStream

__all__ = [
    "ModelParams",
    "ForwardTrace",
    "OptimizerState",
    "init_params",
    "forward",
    "forward_penultimate",
    "bce_loss",
    "per_example_grad",
    "clip_last_layer",
    "step",
    "save_checkpoint",
    "load_checkpoint",
]

# relative slack below which a norm counts as "already within bound"; keeps
# clipping bitwise idempotent while any overshoot stays ~1e-13 * bound
_CLIP_RTOL = 1e-12


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@dataclass
class ModelParams:
    """Layered weights: hidden (W, b) pairs plus the output weight vector."""

    hidden: list[tuple[FloatArray, FloatArray]]
    w_out: FloatArray

    def __post_init__(self):
        self.w_out = np.asarray(self.w_out, dtype=np.float64)
        prev = None
        for i, (W, b) in enumerate(self.hidden):
            if W.shape[0] != b.shape[0]:
                raise DimensionMismatchError(f"hidden layer {i}: W rows {W.shape[0]} != b size {b.shape[0]}")
            if prev is not None and W.shape[1] != prev:
                raise DimensionMismatchError(f"hidden layer {i}: expected fan-in {prev}, got {W.shape[1]}")
            prev = W.shape[0]
        if prev is not None and self.w_out.shape[0] != prev:
            raise DimensionMismatchError("output weights do not match last hidden width")

    @property
    def input_dim(self) -> int:
        return self.hidden[0][0].shape[1] if self.hidden else self.w_out.shape[0]

    @property
    def hidden_dims(self) -> list[int]:
        return [W.shape[0] for W, _ in self.hidden]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in self.hidden) + self.w_out.size

    @property
    def last_layer_slice(self) -> slice:
        n = self.n_params
        return slice(n - self.w_out.size, n)

    def to_flat(self) -> FloatArray:
        parts = []
        for W, b in self.hidden:
            parts.append(W.ravel())
            parts.append(b)
        parts.append(self.w_out)
        return np.concatenate(parts) if parts else np.empty(0)

    @classmethod
    def from_flat(cls, flat: FloatArray, input_dim: int, hidden_dims: list[int]) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        hidden = []
        pos = 0
        fan_in = input_dim
        for width in hidden_dims:
            W = flat[pos:pos + width * fan_in].reshape(width, fan_in).copy()
            pos += width * fan_in
            b = flat[pos:pos + width].copy()
            pos += width
            hidden.append((W, b))
            fan_in = width
        w_out = flat[pos:pos + fan_in].copy()
        pos += fan_in
        if pos != flat.size:
            raise DimensionMismatchError(f"flat vector has {flat.size} entries, layout needs {pos}")
        return cls(hidden, w_out)

    def copy(self) -> "ModelParams":
        return ModelParams([(W.copy(), b.copy()) for W, b in self.hidden], self.w_out.copy())


@dataclass(frozen=True)
class ForwardTrace:
    """Per-layer pre-activations/activations of one forward pass.

    ``z_prev`` is the penultimate activation (the input itself when there are
    no hidden layers), ``z_out`` the pre-sigmoid output.
    """

    pre_activations: tuple[FloatArray, ...]
    activations: tuple[FloatArray, ...]
    z_prev: FloatArray
    z_out: float

    @property
    def probability(self) -> float:
        return sigmoid(self.z_out)

    @property
    def prediction(self) -> int:
        # ties go to the negative class: yhat = 1 iff z_out > 0
        return int(self.z_out > 0)


def init_params(input_dim: int, hidden_dims: list[int], rng: RngStream) -> ModelParams:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], seeded."""
    hidden = []
    fan_in = input_dim
    for width in hidden_dims:
        bound = 1.0 / math.sqrt(fan_in)
        W = rng.generator.uniform(-bound, bound, size=(width, fan_in))
        b = rng.generator.uniform(-bound, bound, size=width)
        hidden.append((W, b))
        fan_in = width
    bound = 1.0 / math.sqrt(fan_in)
    w_out = rng.generator.uniform(-bound, bound, size=fan_in)
    return ModelParams(hidden, w_out)


def forward(params: ModelParams, x: FloatArray) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_dim,):
        raise DimensionMismatchError(f"input shape {x.shape}, model expects ({params.input_dim},)")
    pre, act = [], []
    a = x
    for W, b in params.hidden:
        z = W @ a + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        act.append(a)
    z_out = float(params.w_out @ a)
    return ForwardTrace(tuple(pre), tuple(act), a, z_out)


def forward_penultimate(params: ModelParams, features: FloatArray) -> FloatArray:
    """Penultimate activations for a whole (n, d) matrix at once."""
    a = np.asarray(features, dtype=np.float64)
    for W, b in params.hidden:
        a = np.maximum(a @ W.T + b, 0.0)
    return a


def bce_loss(z_out: float, y: int) -> float:
    """Binary cross-entropy of sigmoid(z_out) against y, computed stably."""
    return float(np.logaddexp(0.0, z_out)) - y * z_out


def per_example_grad(params: ModelParams, x: FloatArray, y: int) -> FloatArray:
    """Gradient of the BCE loss for one example, flattened canonically.

    The output-layer entries are the final ``params.w_out.size`` coordinates
    (``params.last_layer_slice``).
    """
    grad, _ = grad_and_loss(params, x, y)
    return grad


def grad_and_loss(params: ModelParams, x: FloatArray, y: int) -> tuple[FloatArray, float]:
    trace = forward(params, x)
    residual = trace.probability - y  # d loss / d z_out
    grads: list[FloatArray] = []

    g_out = residual * trace.z_prev
    # backprop through hidden stack; ReLU subgradient at 0 is taken as 0
    delta = residual * params.w_out  # gradient w.r.t. penultimate activation
    hidden_grads: list[tuple[FloatArray, FloatArray]] = []
    for i in range(len(params.hidden) - 1, -1, -1):
        W, _ = params.hidden[i]
        dz = delta * (trace.pre_activations[i] > 0)
        a_in = x if i == 0 else trace.activations[i - 1]
        hidden_grads.append((np.outer(dz, a_in), dz))
        delta = W.T @ dz
    for gW, gb in reversed(hidden_grads):
        grads.append(gW.ravel())
        grads.append(gb)
    grads.append(g_out)
    return np.concatenate(grads), bce_loss(trace.z_out, y)


def clip_last_layer(params: ModelParams, bound: float) -> ModelParams:
    """Rescale the output weights onto the L2 ball of radius ``bound``.

    No-op (same object) when already inside; direction preserved otherwise;
    bitwise idempotent. ``bound = inf`` disables clipping.
    """
    if not bound > 0:
        raise InvalidParameterError(f"weight bound must be > 0, got {bound}")
    norm = float(np.linalg.norm(params.w_out))
    if norm <= bound * (1.0 + _CLIP_RTOL):
        return params
    scaled = params.w_out * (bound / norm)
    return ModelParams([(W.copy(), b.copy()) for W, b in params.hidden], scaled)


@dataclass
class OptimizerState:
    """Adam or plain SGD over the flat parameter vector.

    Switching to SGD discards the Adam moments. Adam uses the usual
    beta1=0.9, beta2=0.999, eps=1e-8 with bias correction.
    """

    mode: str  # "adam" | "sgd"
    eta: float
    m: FloatArray | None = None
    v: FloatArray | None = None
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.mode not in ("adam", "sgd"):
            raise InvalidParameterError(f"unknown optimizer mode {self.mode!r}")
        if not self.eta > 0:
            raise InvalidParameterError(f"learning rate must be > 0, got {self.eta}")

    @staticmethod
    def adam(eta: float) -> "OptimizerState":
        return OptimizerState("adam", eta)

    @staticmethod
    def sgd(eta: float) -> "OptimizerState":
        return OptimizerState("sgd", eta)


def step(params: ModelParams, opt: OptimizerState, update: FloatArray) -> ModelParams:
    """Apply one optimizer step to ``params`` using the flat ``update``.

    SGD: theta <- theta - eta * update, exactly. Adam: standard update with
    the raw ``update`` playing the role of the gradient. The optimizer state
    is mutated (single owner); new parameters are returned.
    """
    flat = params.to_flat()
    update = np.asarray(update, dtype=np.float64)
    if update.shape != flat.shape:
        raise DimensionMismatchError(f"update shape {update.shape} != parameter shape {flat.shape}")
    if opt.mode == "sgd":
        new_flat = flat - opt.eta * update
    else:
        if opt.m is None:
            opt.m = np.zeros_like(flat)
            opt.v = np.zeros_like(flat)
        opt.t += 1
        opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * update
        opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * update * update
        m_hat = opt.m / (1.0 - opt.beta1 ** opt.t)
        v_hat = opt.v / (1.0 - opt.beta2 ** opt.t)
        new_flat = flat - opt.eta * m_hat / (np.sqrt(v_hat) + opt.eps)
    return ModelParams.from_flat(new_flat, params.input_dim, params.hidden_dims)


_CHECKPOINT_FORMAT = "fairdp-model-v1"


def save_checkpoint(params: ModelParams, path) -> None:
    """JSON checkpoint; float repr round-trips bit-exactly."""
    doc = {
        "format": _CHECKPOINT_FORMAT,
        "input_dim": params.input_dim,
        "hidden_dims": params.hidden_dims,
        "flat": params.to_flat().tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_checkpoint(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != _CHECKPOINT_FORMAT:
        raise InvalidParameterError(f"unsupported checkpoint format {doc.get('format')!r}")
    return ModelParams.from_flat(np.asarray(doc["flat"], dtype=np.float64),
                                 int(doc["input_dim"]), list(doc["hidden_dims"]))

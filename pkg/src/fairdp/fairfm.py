"""Functional mechanism for logistic regression with per-group aggregation.

Instead of perturbing gradients, the mechanism privatizes the objective
itself: the mean logistic loss of each group is replaced by its second-order
Taylor expansion around theta = 0,

    L_k(theta) ~= theta^T q2_k theta + theta^T q1_k + q0
    q2_k = (1/n_k) sum (1/8) x x^T,   q1_k = (1/n_k) sum (1/2 - y) x,
    q0   = log 2,

Laplace noise of scale (d^2/4 + 3d)/epsilon is added once to every
coefficient (the quadratic term is re-symmetrized afterwards), and training
then runs entirely on the perturbed polynomials: each round broadcasts
theta, every group takes a plain gradient step 2*q2_k theta + q1_k on its
own polynomial, and the results are averaged. All data access ends at
coefficient construction; everything after the noise is post-processing,
so the whole procedure is epsilon-DP per group and, the groups being
disjoint, epsilon-DP overall.

The trained parameter vector is packaged as a hidden-layer-free model so the
usual forward pass, evaluation and smoothed inference apply unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import GroupPartition, TabularDataset
from .errors import DegenerateGroupError, DivergenceError, InvalidParameterError
from .linalg import FloatArray, RngStream, laplace
from .model import ModelParams

__all__ = [
    "PolyObjective",
    "laplace_sensitivity",
    "taylor_coefficients",
    "perturb",
    "optimize_poly",
    "train_fairfm",
    "STREAM_FM_NOISE",
    "STREAM_FM_INIT",
]

STREAM_FM_NOISE = 10
STREAM_FM_INIT = 11

_DIVERGE_NORM = 1e6


@dataclass(frozen=True)
class PolyObjective:
    """Quadratic surrogate objective theta^T quad theta + theta^T lin + const."""

    quad: FloatArray   # (d, d), symmetric
    lin: FloatArray    # (d,)
    const: float

    def __post_init__(self):
        if self.quad.shape != (self.lin.size, self.lin.size):
            raise InvalidParameterError(
                f"quad shape {self.quad.shape} incompatible with lin size {self.lin.size}")

    @property
    def dim(self) -> int:
        return self.lin.size

    def value(self, theta: FloatArray) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        return float(theta @ self.quad @ theta + theta @ self.lin + self.const)

    def gradient(self, theta: FloatArray) -> FloatArray:
        # exact derivative of the quadratic form when quad is symmetric
        return 2.0 * (self.quad @ theta) + self.lin

    def to_json(self) -> dict:
        return {"quad": self.quad.tolist(), "lin": self.lin.tolist(), "const": self.const}

    @classmethod
    def from_json(cls, doc: dict) -> "PolyObjective":
        return cls(np.asarray(doc["quad"], dtype=np.float64),
                   np.asarray(doc["lin"], dtype=np.float64), float(doc["const"]))


def laplace_sensitivity(dim: int) -> float:
    """Noise sensitivity d^2/4 + 3d for feature dimension d."""
    return dim * dim / 4.0 + 3.0 * dim


def taylor_coefficients(features: FloatArray, labels) -> PolyObjective:
    """Second-order expansion of the mean logistic loss at theta = 0.

    The expansion of log(1 + e^t) - y t at t = 0 is
    log 2 + (1/2 - y) t + t^2 / 8 + O(t^4); substituting t = theta^T x and
    averaging over the group gives the coefficients.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise InvalidParameterError("features must be (n, d) with matching labels")
    n = x.shape[0]
    if n == 0:
        raise DegenerateGroupError("cannot expand the objective of an empty group")
    quad = (x.T @ x) / (8.0 * n)
    lin = ((0.5 - y) @ x) / n
    return PolyObjective(quad=quad, lin=lin, const=math.log(2.0))


def perturb(obj: PolyObjective, epsilon: float, rng: RngStream) -> PolyObjective:
    """Add Laplace(sensitivity/epsilon) noise to every coefficient.

    The quadratic term is re-symmetrized by averaging with its transpose so
    the gradient formula 2*quad@theta stays the exact derivative.
    """
    if not epsilon > 0:
        raise InvalidParameterError(f"epsilon must be > 0, got {epsilon}")
    d = obj.dim
    noise_scale = laplace_sensitivity(d) / epsilon
    draws = laplace(rng, noise_scale, d * d + d + 1)
    quad = obj.quad + draws[: d * d].reshape(d, d)
    quad = 0.5 * (quad + quad.T)
    lin = obj.lin + draws[d * d: d * d + d]
    const = obj.const + float(draws[-1])
    return PolyObjective(quad=quad, lin=lin, const=const)


def optimize_poly(objectives: list[PolyObjective], eta: float, steps: int,
                  rng: RngStream) -> FloatArray:
    """Gradient descent on per-group polynomials with round-wise averaging.

    This function sees only the (already perturbed) coefficients, never the
    data, which is what makes the training loop pure post-processing.
    """
    if not objectives:
        raise InvalidParameterError("need at least one objective")
    if steps < 1:
        raise InvalidParameterError(f"steps must be >= 1, got {steps}")
    d = objectives[0].dim
    bound = 1.0 / math.sqrt(d)
    theta = rng.generator.uniform(-bound, bound, size=d)
    k = len(objectives)
    for t in range(1, steps + 1):
        updated = [theta - eta * obj.gradient(theta) for obj in objectives]
        theta = np.array([math.fsum(col) / k for col in zip(*updated)]) if k > 1 else updated[0]
        norm = float(np.linalg.norm(theta))
        if not np.isfinite(norm) or norm > _DIVERGE_NORM:
            raise DivergenceError(
                f"parameters diverged at round {t} (norm {norm:.3g}); "
                f"reduce eta (currently {eta}) or epsilon noise")
    return theta


def train_fairfm(ds: TabularDataset, part: GroupPartition, epsilon: float,
                 eta: float, steps: int, rng: RngStream) -> ModelParams:
    """Full pipeline: per-group coefficients, one-shot perturbation, descent.

    Returns a hidden-layer-free model whose output weights are the trained
    parameter vector.
    """
    perturbed = []
    for k, idx in enumerate(part.groups):
        obj = taylor_coefficients(ds.features[idx], ds.labels[idx])
        perturbed.append(perturb(obj, epsilon, rng.child(STREAM_FM_NOISE, k)))
    theta = optimize_poly(perturbed, eta, steps, rng.child(STREAM_FM_INIT))
    return ModelParams(hidden=[], w_out=theta)


def save_objectives(objectives: list[PolyObjective], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([o.to_json() for o in objectives], fh, sort_keys=True, indent=2)
        fh.write("\n")

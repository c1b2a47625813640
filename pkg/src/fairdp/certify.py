"""Fairness certificates for noise-perturbed output layers.

After an SGD round over K groups, the aggregated output-layer weight vector
is Gaussian: mean w_prev - eta*mu (w_prev the post-clip broadcast weights,
mu the group-averaged clipped-gradient sum) and covariance
(eta^2 sigma^2 C^2 / K) I. For an input with penultimate activation z, the
pre-sigmoid output is then the scalar Gaussian

    N( <w_prev - eta*mu, z>,  ||z||^2 eta^2 sigma^2 C^2 / K ),

so the positive-prediction probability has a closed erf form, is bounded
above and below by a sandwich that depends only on ||w_prev - eta*mu||
(since the erf argument enters through the cosine of an angle), and the
worst-case bound follows by replacing the measured norms with their clip
bounds: ||w_prev|| <= M and ||mu|| <= m*C/K with m the total batch size.

Three certificate layers, from loosest to tightest:

  worst_case_bound        closed form in (M, K, eta, m, C, sigma) only
  erf of the sandwich     uses the measured ||w_prev - eta*mu||
  empirical certificate   averages the erf probability over each group's
                          event-conditioned rows and takes the largest
                          pairwise gap

and the chain  tau_emp <= erf(A_measured) <= worst_case_bound  holds on
every run. All probability math goes through the package's single erf
implementation so recomputation is byte-stable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import FairnessEvent, GroupPartition, TabularDataset, event_subset
from .errors import InvalidParameterError
from .linalg import FloatArray, RngStream, erf, gaussian
from .model import ModelParams, forward, forward_penultimate
from .training import RoundRecord, TrainConfig

__all__ = [
    "CertContext",
    "FairnessCertificate",
    "pred_prob",
    "prob_sandwich",
    "worst_case_bound",
    "empirical_certificate",
    "certificate_for_event_name",
    "smooth_inference",
    "EVENT_NAMES",
]


@dataclass(frozen=True)
class CertContext:
    """Quantities of one SGD round that the certificate math consumes."""

    w_prev: FloatArray      # post-clip aggregated output weights entering the round
    mu: FloatArray          # group-averaged clipped-gradient sum (output slice)
    eta: float
    sigma: float
    grad_clip: float
    n_groups: int
    batch_total: int = 0       # m, total batch size across groups
    weight_clip: float = math.inf
    round_index: int = 0
    threshold: float = 0.5

    def __post_init__(self):
        if self.w_prev.shape != self.mu.shape:
            raise InvalidParameterError("w_prev and mu must have the same shape")
        if self.n_groups < 1:
            raise InvalidParameterError("n_groups must be >= 1")
        if self.eta <= 0 or self.grad_clip <= 0 or self.sigma < 0:
            raise InvalidParameterError("eta and grad_clip must be > 0, sigma >= 0")

    @classmethod
    def from_round(cls, record: RoundRecord, cfg: TrainConfig) -> "CertContext":
        if record.mode != "sgd":
            raise InvalidParameterError(
                f"round {record.t} ran in {record.mode!r} mode; certificates need an SGD round")
        return cls(
            w_prev=record.w_prev, mu=record.mu, eta=cfg.eta_sgd, sigma=cfg.sigma,
            grad_clip=cfg.grad_clip, n_groups=len(record.mu_groups),
            batch_total=record.m, weight_clip=cfg.weight_clip,
            round_index=record.t, threshold=cfg.threshold,
        )

    @property
    def center(self) -> FloatArray:
        return self.w_prev - self.eta * self.mu

    @property
    def logit_threshold(self) -> float:
        return math.log(self.threshold / (1.0 - self.threshold))

    def sandwich_halfwidth_arg(self) -> float:
        """A = ||w_prev - eta*mu|| sqrt(K) / (eta sigma C sqrt 2)."""
        if self.sigma == 0:
            return math.inf
        return (float(np.linalg.norm(self.center)) * math.sqrt(self.n_groups)
                / (self.eta * self.sigma * self.grad_clip * math.sqrt(2.0)))

    def to_json(self) -> dict:
        return {
            "eta": self.eta,
            "sigma": self.sigma,
            "grad_clip": self.grad_clip,
            "weight_clip": None if math.isinf(self.weight_clip) else self.weight_clip,
            "n_groups": self.n_groups,
            "batch_total": self.batch_total,
            "round_index": self.round_index,
            "threshold": self.threshold,
            "w_prev": self.w_prev.tolist(),
            "mu": self.mu.tolist(),
        }


def pred_prob(ctx: CertContext, z_prev: FloatArray) -> float:
    """Probability (over the injected noise) that the model predicts 1.

    Evaluates the Gaussian CDF complement of the pre-sigmoid output at the
    decision point (0 for the default threshold 0.5, logit(threshold)
    otherwise). Conventions for degenerate inputs: a zero penultimate
    activation gives exactly 1/2 (the output is then pure zero-mean noise);
    with sigma = 0 the output is deterministic and the result is the
    indicator of crossing the decision point, 1/2 exactly at it.
    """
    z = np.asarray(z_prev, dtype=np.float64)
    norm_z = float(np.linalg.norm(z))
    if norm_z == 0.0:
        return 0.5
    b = ctx.logit_threshold
    mean = float(np.dot(ctx.center, z))
    if ctx.sigma == 0:
        if mean > b:
            return 1.0
        return 0.5 if mean == b else 0.0
    arg = (mean - b) * math.sqrt(ctx.n_groups) / (
        norm_z * ctx.eta * ctx.sigma * ctx.grad_clip * math.sqrt(2.0))
    return 0.5 + 0.5 * erf(arg)


def prob_sandwich(ctx: CertContext) -> tuple[float, float]:
    """Bounds on pred_prob valid for every input (default threshold only).

    The erf argument is A * cos(phi) with phi the angle between the Gaussian
    mean vector and the activation, so |argument| <= A and the width of the
    sandwich, erf(A), does not depend on the input at all.
    """
    if ctx.threshold != 0.5:
        raise InvalidParameterError(
            "the input-independent sandwich is only valid at threshold 0.5")
    a = ctx.sandwich_halfwidth_arg()
    half = 0.5 * erf(a) if not math.isinf(a) else 0.5
    return 0.5 - half, 0.5 + half


def worst_case_bound(weight_clip: float, n_groups: int, eta: float,
                     batch_total: int, grad_clip: float, sigma: float) -> float:
    """Closed-form fairness bound from the clip bounds alone.

        erf( (M*K + eta*m*C) * sqrt(K) / (K * eta * sigma * C * sqrt 2) )

    Monotone: nondecreasing in M and m, nonincreasing in sigma and C.
    Mathematically the value lies in [0, 1); float64 saturates to exactly
    1.0 once the argument passes ~5.9, which signals a vacuous certificate.
    """
    if n_groups < 1 or int(n_groups) != n_groups:
        raise InvalidParameterError(f"n_groups must be a positive integer, got {n_groups}")
    for name, v in (("weight_clip", weight_clip), ("eta", eta), ("batch_total", batch_total),
                    ("grad_clip", grad_clip), ("sigma", sigma)):
        if not v > 0:
            raise InvalidParameterError(f"{name} must be > 0, got {v}")
    k = float(n_groups)
    arg = (weight_clip * k + eta * batch_total * grad_clip) * math.sqrt(k) / (
        k * eta * sigma * grad_clip * math.sqrt(2.0))
    return erf(arg)


@dataclass(frozen=True)
class FairnessCertificate:
    """Worst-case and empirical fairness certificates for one model."""

    tau_theoretical: float
    tau_empirical: float
    per_group_p_emp: dict[int, float]
    event: str
    context: CertContext
    measured_gap_bound: float  # erf(A) with the measured center norm

    def __post_init__(self):
        for k, p in self.per_group_p_emp.items():
            if not 0.0 <= p <= 1.0:
                raise InvalidParameterError(f"P_emp for group {k} outside [0, 1]: {p}")
        if not 0.0 <= self.tau_empirical <= 1.0:
            raise InvalidParameterError(f"tau_empirical outside [0, 1]: {self.tau_empirical}")

    def to_json(self) -> dict:
        ctx = self.context.to_json()
        ctx["measured_gap_bound"] = self.measured_gap_bound
        return {
            "tau_theoretical": self.tau_theoretical,
            "tau_empirical": self.tau_empirical,
            "event": self.event,
            "per_group": {str(k): v for k, v in sorted(self.per_group_p_emp.items())},
            "context": ctx,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=2)
            fh.write("\n")


def _group_p_emp(ctx: CertContext, ds: TabularDataset, part: GroupPartition,
                 event: FairnessEvent, model: ModelParams, k: int) -> float:
    rows = event_subset(ds, part, k, event)
    z_prev = forward_penultimate(model, ds.features[rows])
    total = math.fsum(pred_prob(ctx, z_prev[i]) for i in range(len(rows)))
    return total / len(rows)


def _theoretical_bound(ctx: CertContext) -> float:
    """Worst-case bound for a context; vacuous (1.0) when the output layer
    was never clipped or no noise was injected."""
    if ctx.sigma == 0 or not math.isfinite(ctx.weight_clip):
        return 1.0
    k = float(ctx.n_groups)
    arg = (ctx.weight_clip * k + ctx.eta * ctx.batch_total * ctx.grad_clip) * math.sqrt(k) / (
        k * ctx.eta * ctx.sigma * ctx.grad_clip * math.sqrt(2.0))
    return erf(arg)


def empirical_certificate(ctx: CertContext, ds: TabularDataset, part: GroupPartition,
                          event: FairnessEvent, model: ModelParams) -> FairnessCertificate:
    """Empirical certificate: largest pairwise gap of the per-group mean
    positive-prediction probabilities over the event-conditioned rows.

    ``model`` supplies the penultimate activations and must be the post-clip
    broadcast model of the certified round (its output layer is ignored;
    the context's w_prev/mu describe the noisy update).
    """
    p_emp = {k: _group_p_emp(ctx, ds, part, event, model, k) for k in range(part.n_groups)}
    values = list(p_emp.values())
    tau_emp = max(values) - min(values)
    return FairnessCertificate(
        tau_theoretical=_theoretical_bound(ctx),
        tau_empirical=tau_emp,
        per_group_p_emp=p_emp,
        event=event.describe(),
        context=ctx,
        measured_gap_bound=erf(ctx.sandwich_halfwidth_arg()) if ctx.sigma > 0 else 1.0,
    )


EVENT_NAMES = (
    "demographic-parity", "none",
    "equal-opportunity", "positive-label",
    "label-equals-0", "label-equals-1",
    "equal-odds",
)


def certificate_for_event_name(ctx: CertContext, ds: TabularDataset, part: GroupPartition,
                               name: str, model: ModelParams) -> FairnessCertificate:
    """Certificate for a named event/metric.

    "equal-odds" is the maximum of the two label-conditioned certificates;
    the reported per-group values are those of the larger gap.
    """
    if name in ("demographic-parity", "none"):
        return empirical_certificate(ctx, ds, part, FairnessEvent.none(), model)
    if name in ("equal-opportunity", "positive-label"):
        return empirical_certificate(ctx, ds, part, FairnessEvent.positive_label(), model)
    if name == "label-equals-0":
        return empirical_certificate(ctx, ds, part, FairnessEvent.label_equals(0), model)
    if name == "label-equals-1":
        return empirical_certificate(ctx, ds, part, FairnessEvent.label_equals(1), model)
    if name == "equal-odds":
        cert1 = empirical_certificate(ctx, ds, part, FairnessEvent.label_equals(1), model)
        cert0 = empirical_certificate(ctx, ds, part, FairnessEvent.label_equals(0), model)
        best = cert1 if cert1.tau_empirical >= cert0.tau_empirical else cert0
        return FairnessCertificate(
            tau_theoretical=best.tau_theoretical,
            tau_empirical=best.tau_empirical,
            per_group_p_emp=best.per_group_p_emp,
            event="equal-odds",
            context=ctx,
            measured_gap_bound=best.measured_gap_bound,
        )
    raise InvalidParameterError(f"unknown event name {name!r}; expected one of {EVENT_NAMES}")


def smooth_inference(model: ModelParams, sigma_bar: float, n_samples: int,
                     rng: RngStream, x: FloatArray) -> float:
    """Monte-Carlo smoothed probability: mean of sigmoid outputs under
    N(0, sigma_bar^2) perturbations of every parameter."""
    if not sigma_bar > 0:
        raise InvalidParameterError(f"sigma_bar must be > 0, got {sigma_bar}")
    if n_samples < 1:
        raise InvalidParameterError(f"n_samples must be >= 1, got {n_samples}")
    flat = model.to_flat()
    total = 0.0
    for _ in range(int(n_samples)):
        noise = gaussian(rng, 0.0, sigma_bar, flat.size)
        perturbed = ModelParams.from_flat(flat + noise, model.input_dim, model.hidden_dims)
        total += forward(perturbed, x).probability
    return total / n_samples

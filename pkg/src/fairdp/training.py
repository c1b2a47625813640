"""Per-group DP-SGD with round-wise model aggregation.

Each round:

1. the output-layer weights of the shared model are clipped to L2 norm M;
2. the clipped model is broadcast to every protected group;
3. each group draws a Poisson batch from its own rows, computes per-example
   gradients, clips them to L2 norm C, sums them, adds N(0, C^2 sigma^2 I)
   over the full parameter vector, and takes one optimizer step;
4. the K group models are averaged coordinate-wise into the next shared model.

The optimizer is Adam for the first ``switch_fraction`` of the rounds (a
utility warm-up) and plain SGD afterwards; only SGD rounds admit fairness
certificates, because only there does the updated output layer follow the
Gaussian law the certificates rely on. The plain DP-SGD baseline is the
K = 1 special case with weight clipping disabled.

Randomness is organized so results cannot depend on scheduling: every group
owns two streams (batch selection, noise injection) keyed by its group id,
and aggregation uses exactly-rounded per-coordinate summation, which makes
it invariant to group order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import GroupPartition, TabularDataset, poisson_batch
from .errors import InvalidParameterError, TrainingError
from .linalg import FloatArray, RngStream
from .model import ModelParams, OptimizerState, clip_last_layer, grad_and_loss, init_params, step
from .privacy import PrivacyLedger, clip_grad_batch, gaussian_sum_mechanism

__all__ = [
    "STREAM_INIT",
    "STREAM_BATCH",
    "STREAM_NOISE",
    "TrainConfig",
    "RoundRecord",
    "TrainResult",
    "aggregate",
    "train",
    "train_dpsgd_baseline",
    "run_sgd_round",
]

STREAM_INIT = 0
STREAM_BATCH = 1
STREAM_NOISE = 2


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run."""

    q: float                      # per-group Poisson sampling probability
    sigma: float                  # noise multiplier
    grad_clip: float              # per-example gradient norm bound C
    weight_clip: float            # output-layer norm bound M (inf disables)
    steps: int                    # total rounds T
    seed: int
    eta_adam: float = 0.02
    eta_sgd: float = 0.005
    delta: float = 1e-5
    switch_fraction: float = 0.9  # fraction of rounds run with Adam
    hidden_dims: tuple[int, ...] = (32,)
    threshold: float = 0.5

    def __post_init__(self):
        if not 0 < self.q <= 1:
            raise InvalidParameterError(f"q must be in (0, 1], got {self.q}")
        if not self.grad_clip > 0:
            raise InvalidParameterError(f"grad_clip must be > 0, got {self.grad_clip}")
        if not self.weight_clip > 0:
            raise InvalidParameterError(f"weight_clip must be > 0, got {self.weight_clip}")
        if self.steps < 1:
            raise InvalidParameterError(f"steps must be >= 1, got {self.steps}")
        if not 0 <= self.switch_fraction <= 1:
            raise InvalidParameterError("switch_fraction must be in [0, 1]")
        if self.sigma < 0:
            raise InvalidParameterError(f"sigma must be >= 0, got {self.sigma}")
        if not (self.eta_adam > 0 and self.eta_sgd > 0):
            raise InvalidParameterError("learning rates must be > 0")
        if not 0 <= self.delta < 1:
            raise InvalidParameterError(f"delta must be in [0, 1), got {self.delta}")
        if not 0 < self.threshold < 1:
            raise InvalidParameterError(f"threshold must be in (0, 1), got {self.threshold}")

    @property
    def adam_rounds(self) -> int:
        return math.floor(self.switch_fraction * self.steps)


@dataclass
class RoundRecord:
    """Everything the certificates need about one round."""

    t: int
    mode: str                      # "adam" | "sgd"
    w_prev: FloatArray             # post-clip aggregated output weights entering the round
    mu_groups: list[FloatArray]    # per-group clipped-gradient sums, output-layer slice
    mu: FloatArray                 # (1/K) * sum of mu_groups
    batch_sizes: list[int]
    losses: list[float | None]     # per-group mean batch loss (None for empty batch)
    n_clipped: list[int]

    @property
    def m(self) -> int:
        return sum(self.batch_sizes)

    def to_json(self, full: bool = False) -> dict:
        doc = {
            "t": self.t,
            "mode": self.mode,
            "batch_sizes": self.batch_sizes,
            "m": self.m,
            "w_prev_norm": float(np.linalg.norm(self.w_prev)),
            "mu_norm": float(np.linalg.norm(self.mu)),
            "losses": self.losses,
            "n_clipped": self.n_clipped,
        }
        if full:
            doc["w_prev"] = self.w_prev.tolist()
            doc["mu"] = self.mu.tolist()
            doc["mu_groups"] = [m.tolist() for m in self.mu_groups]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "RoundRecord":
        if "w_prev" not in doc:
            raise InvalidParameterError("round record was not serialized with full vectors")
        return cls(
            t=doc["t"],
            mode=doc["mode"],
            w_prev=np.asarray(doc["w_prev"], dtype=np.float64),
            mu_groups=[np.asarray(m, dtype=np.float64) for m in doc["mu_groups"]],
            mu=np.asarray(doc["mu"], dtype=np.float64),
            batch_sizes=list(doc["batch_sizes"]),
            losses=list(doc["losses"]),
            n_clipped=list(doc["n_clipped"]),
        )


@dataclass
class TrainResult:
    params: ModelParams
    records: list[RoundRecord]
    ledger: PrivacyLedger
    # post-clip broadcast model entering the final SGD round; None when the
    # schedule has no SGD rounds (switch_fraction = 1), in which case no
    # certificate can be issued
    cert_model: ModelParams | None

    @property
    def final_record(self) -> RoundRecord:
        return self.records[-1]

    def require_certificate_basis(self) -> tuple[ModelParams, RoundRecord]:
        if self.cert_model is None or self.final_record.mode != "sgd":
            raise TrainingError(
                "no SGD rounds were run (switch_fraction = 1); certificates are "
                "only defined for SGD updates")
        return self.cert_model, self.final_record


def aggregate(params_list: list[ModelParams]) -> ModelParams:
    """Coordinate-wise mean of K parameter sets.

    Uses exactly-rounded summation per coordinate, so the result does not
    depend on the order of the inputs.
    """
    if not params_list:
        raise InvalidParameterError("aggregate needs at least one parameter set")
    first = params_list[0]
    if len(params_list) == 1:
        return first.copy()
    flats = [p.to_flat() for p in params_list]
    n = flats[0].size
    for f in flats[1:]:
        if f.size != n:
            raise InvalidParameterError("parameter sets have different shapes")
    if all(np.array_equal(flats[0], f) for f in flats[1:]):
        return first.copy()  # mean of equals must be exact, not rounded
    k = len(flats)
    mean = np.empty(n)
    cols = np.stack(flats)
    for j in range(n):
        mean[j] = math.fsum(cols[:, j]) / k
    return ModelParams.from_flat(mean, first.input_dim, first.hidden_dims)


def _mean_rows(rows: list[FloatArray]) -> FloatArray:
    k = len(rows)
    out = np.empty(rows[0].size)
    stacked = np.stack(rows)
    for j in range(out.size):
        out[j] = math.fsum(stacked[:, j]) / k
    return out


def _group_update(params: ModelParams, ds: TabularDataset, cfg: TrainConfig,
                  batch_idx, opt: OptimizerState, noise_rng: RngStream):
    """One group's DP update from the broadcast parameters."""
    r = params.n_params
    grads, losses = [], []
    for i in batch_idx:
        g, loss = grad_and_loss(params, ds.features[i], int(ds.labels[i]))
        grads.append(g)
        losses.append(loss)
    clipped, report = clip_grad_batch(grads, cfg.grad_clip)
    clean_sum = np.sum(clipped, axis=0) if clipped else np.zeros(r)
    noisy = gaussian_sum_mechanism(clipped, cfg.grad_clip, cfg.sigma, noise_rng, r)
    theta = step(params, opt, noisy)
    mu_k = clean_sum[params.last_layer_slice].copy()
    mean_loss = float(np.mean(losses)) if losses else None
    return theta, mu_k, mean_loss, report.n_clipped


def _run_round(params: ModelParams, ds: TabularDataset, cfg: TrainConfig, t: int,
               mode: str, opts: list[OptimizerState], batches: list,
               noise_rngs: list[RngStream],
               group_schedule: list[int] | None = None) -> tuple[ModelParams, RoundRecord, ModelParams]:
    k_groups = len(batches)
    broadcast = clip_last_layer(params, cfg.weight_clip)
    w_prev = broadcast.w_out.copy()

    thetas: list[ModelParams | None] = [None] * k_groups
    mu_groups: list[FloatArray | None] = [None] * k_groups
    losses: list[float | None] = [None] * k_groups
    clipped_counts = [0] * k_groups
    # results land in slot k no matter when group k is processed, and every
    # group draws from its own streams, so the schedule cannot leak in
    for k in (group_schedule if group_schedule is not None else range(k_groups)):
        theta, mu_k, loss, n_clip = _group_update(broadcast, ds, cfg, batches[k], opts[k], noise_rngs[k])
        thetas[k] = theta
        mu_groups[k] = mu_k
        losses[k] = loss
        clipped_counts[k] = n_clip

    new_params = aggregate(thetas)
    flat = new_params.to_flat()
    if not np.isfinite(flat).all():
        bad = int(np.count_nonzero(~np.isfinite(flat)))
        raise TrainingError(
            f"non-finite parameters after round {t} (mode={mode}, {bad}/{flat.size} "
            f"coordinates bad); lower the learning rate or the clip bounds")
    record = RoundRecord(
        t=t, mode=mode, w_prev=w_prev, mu_groups=mu_groups,
        mu=_mean_rows(mu_groups),
        batch_sizes=[len(b) for b in batches],
        losses=losses, n_clipped=clipped_counts,
    )
    return new_params, record, broadcast


def train(ds: TabularDataset, part: GroupPartition, cfg: TrainConfig,
          rng: RngStream | None = None, on_round=None,
          group_schedule: list[int] | None = None) -> TrainResult:
    """Run the full per-group DP training loop.

    ``on_round(broadcast_params, record)`` is invoked after every round with
    the post-clip broadcast model that produced the round (useful for
    per-round certificate trajectories). ``group_schedule`` reorders group
    processing within a round; results are bit-identical for any schedule
    because each group owns its random streams. The privacy ledger accounts
    all ``cfg.steps`` rounds at (q, sigma).
    """
    if rng is None:
        rng = RngStream(cfg.seed)
    k_groups = part.n_groups
    params = init_params(ds.n_features, list(cfg.hidden_dims), rng.child(STREAM_INIT))
    batch_rngs = [rng.child(STREAM_BATCH, k) for k in range(k_groups)]
    noise_rngs = [rng.child(STREAM_NOISE, k) for k in range(k_groups)]
    opts = [OptimizerState.adam(cfg.eta_adam) for _ in range(k_groups)]

    records: list[RoundRecord] = []
    cert_model: ModelParams | None = None
    adam_rounds = cfg.adam_rounds
    for t in range(1, cfg.steps + 1):
        mode = "adam" if t <= adam_rounds else "sgd"
        if mode == "sgd" and opts[0].mode == "adam":
            opts = [OptimizerState.sgd(cfg.eta_sgd) for _ in range(k_groups)]  # moments discarded
        batches = [poisson_batch(part, k, cfg.q, batch_rngs[k]) for k in range(k_groups)]
        params, record, broadcast = _run_round(params, ds, cfg, t, mode, opts, batches,
                                               noise_rngs, group_schedule)
        records.append(record)
        if t == cfg.steps and mode == "sgd":
            cert_model = broadcast.copy()
        if on_round is not None:
            on_round(broadcast, record)

    ledger = PrivacyLedger.for_steps(cfg.q, cfg.sigma, cfg.steps, cfg.delta)
    return TrainResult(params=params, records=records, ledger=ledger, cert_model=cert_model)


def run_sgd_round(params: ModelParams, ds: TabularDataset, part: GroupPartition,
                  cfg: TrainConfig, batches: list, noise_rngs: list[RngStream]
                  ) -> tuple[ModelParams, RoundRecord]:
    """One SGD round with frozen batches and caller-supplied noise streams.

    Exposes the exact update applied inside :func:`train` so that the
    distribution of the noisy output layer can be probed by resampling only
    the injected noise.
    """
    opts = [OptimizerState.sgd(cfg.eta_sgd) for _ in range(len(batches))]
    new_params, record, _ = _run_round(params, ds, cfg, 0, "sgd", opts, batches, noise_rngs)
    return new_params, record


def train_dpsgd_baseline(ds: TabularDataset, cfg: TrainConfig,
                         rng: RngStream | None = None) -> TrainResult:
    """Plain DP-SGD: the K = 1 degenerate case with weight clipping disabled.

    Runs the identical loop over a single all-rows group with the weight
    bound set to infinity, so the trajectory matches ``train`` on a
    one-group partition bit for bit under shared seeds.
    """
    part = GroupPartition((np.arange(ds.n, dtype=np.int64),))
    return train(ds, part, replace(cfg, weight_clip=math.inf), rng=rng)

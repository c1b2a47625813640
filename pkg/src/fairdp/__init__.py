"""Differentially private training with simultaneous group-fairness certificates.

The package trains binary classifiers per protected group under DP-SGD,
aggregates the group models every round, and derives both a closed-form
worst-case fairness bound and a tight empirical certificate from the
Gaussian law of the noisy last-layer update. A functional-mechanism
variant (Laplace-perturbed quadratic objectives) and Monte-Carlo smoothed
inference are included as baselines.
"""

from .certify import (
    CertContext,
    FairnessCertificate,
    certificate_for_event_name,
    empirical_certificate,
    pred_prob,
    prob_sandwich,
    smooth_inference,
    worst_case_bound,
)
from .data import (
    DatasetSchema,
    FairnessEvent,
    GroupPartition,
    TabularDataset,
    cross_product_groups,
    event_subset,
    load_csv,
    partition_by_group,
    poisson_batch,
    subsample_major,
    train_test_split,
)
from .errors import FairdpError
from .fairfm import PolyObjective, perturb, taylor_coefficients, train_fairfm
from .linalg import RngStream, erf
from .metrics import GroupOutcomeTable, evaluate, fairness_gap
from .model import ModelParams, OptimizerState, forward, init_params, per_example_grad
from .privacy import (
    PrivacyLedger,
    account,
    calibrate_sigma,
    clip_grad,
    gaussian_sum_mechanism,
    parallel_compose,
)
from .training import RoundRecord, TrainConfig, TrainResult, aggregate, train, train_dpsgd_baseline

__version__ = "0.1.0"

__all__ = [
    "CertContext",
    "DatasetSchema",
    "FairdpError",
    "FairnessCertificate",
    "FairnessEvent",
    "GroupOutcomeTable",
    "GroupPartition",
    "ModelParams",
    "OptimizerState",
    "PolyObjective",
    "PrivacyLedger",
    "RngStream",
    "RoundRecord",
    "TabularDataset",
    "TrainConfig",
    "TrainResult",
    "account",
    "aggregate",
    "calibrate_sigma",
    "certificate_for_event_name",
    "clip_grad",
    "cross_product_groups",
    "empirical_certificate",
    "erf",
    "evaluate",
    "event_subset",
    "fairness_gap",
    "forward",
    "gaussian_sum_mechanism",
    "init_params",
    "load_csv",
    "parallel_compose",
    "partition_by_group",
    "per_example_grad",
    "perturb",
    "poisson_batch",
    "pred_prob",
    "prob_sandwich",
    "smooth_inference",
    "subsample_major",
    "taylor_coefficients",
    "train",
    "train_dpsgd_baseline",
    "train_fairfm",
    "train_test_split",
    "worst_case_bound",
]

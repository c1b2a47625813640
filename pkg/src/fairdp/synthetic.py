"""Seeded synthetic binary-classification data with protected groups.

The generator produces datasets where an unconstrained classifier exhibits a
real demographic-parity gap: features live in [0, 1]^d, the label follows a
shared logistic rule, and each group gets its own intercept shift plus a
group-dependent mean shift on the first feature. Useful for tests, demos
and desk-scale experiments; also writes raw CSV files for exercising the
ingestion path.

Stream ids 20x are reserved here so synthetic draws never collide with
training streams.
"""

from __future__ import annotations

import csv
import math

import numpy as np

from .data import DatasetSchema, TabularDataset
from .errors import InvalidParameterError
from .linalg import RngStream

__all__ = ["make_dataset", "write_csv", "csv_schema"]

_STREAM_FEATURES = 20
_STREAM_LABELS = 21
_STREAM_GROUPS = 22


def make_dataset(n: int, n_groups: int = 2, n_features: int = 6,
                 rng: RngStream | None = None, seed: int = 0,
                 group_weights: list[float] | None = None,
                 bias_spread: float = 1.2, feature_shift: float = 0.25,
                 weight_scale: float = 1.0) -> TabularDataset:
    """Draw a dataset of ``n`` rows over ``n_groups`` groups.

    ``group_weights`` sets the group-membership probabilities (uniform by
    default); ``bias_spread`` controls how strongly the label base rate
    differs across groups; ``feature_shift`` moves the first feature's mean
    per group so the gap is learnable from x alone; ``weight_scale``
    sharpens the label rule (higher Bayes accuracy).
    """
    if n < n_groups:
        raise InvalidParameterError("need at least one row per group")
    rng = rng or RngStream(seed)
    g_feat = rng.child(_STREAM_FEATURES).generator
    g_lab = rng.child(_STREAM_LABELS).generator
    g_grp = rng.child(_STREAM_GROUPS).generator

    if group_weights is None:
        group_weights = [1.0 / n_groups] * n_groups
    w = np.asarray(group_weights, dtype=np.float64)
    w = w / w.sum()
    protected = g_grp.choice(n_groups, size=n, p=w)
    # guarantee every group appears
    for k in range(n_groups):
        if not np.any(protected == k):
            protected[k] = k

    x = g_feat.uniform(0.0, 1.0, size=(n, n_features))
    shift_per_group = np.linspace(-feature_shift, feature_shift, n_groups)
    x[:, 0] = np.clip(x[:, 0] + shift_per_group[protected], 0.0, 1.0)

    weights = weight_scale * np.linspace(2.5, -1.5, n_features)
    biases = np.linspace(-bias_spread / 2, bias_spread / 2, n_groups)
    logits = (x - 0.5) @ weights + biases[protected]
    labels = (g_lab.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(np.int64)
    # avoid degenerate all-one/all-zero label columns in tiny samples
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]

    return TabularDataset(
        features=x,
        protected=protected.astype(np.int64),
        labels=labels,
        n_groups=n_groups,
        feature_names=[f"x{j}" for j in range(n_features)],
        group_names=[f"group={chr(ord('a') + k)}" for k in range(n_groups)],
    )


def csv_schema(n_features: int) -> DatasetSchema:
    """Schema matching :func:`write_csv` output."""
    return DatasetSchema(
        feature_cols=tuple(f"x{j}" for j in range(n_features)),
        protected_cols=("group",),
        label_col="label",
    )


def write_csv(path, n: int, n_groups: int = 2, n_features: int = 6, seed: int = 0,
              group_weights: list[float] | None = None) -> DatasetSchema:
    """Write a raw CSV (numeric features, categorical group column, 0/1 label)."""
    ds = make_dataset(n, n_groups=n_groups, n_features=n_features, seed=seed,
                      group_weights=group_weights)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(n_features)] + ["group", "label"])
        for i in range(ds.n):
            row = [f"{v:.6f}" for v in ds.features[i]]
            row.append(chr(ord("a") + int(ds.protected[i])))
            row.append(str(int(ds.labels[i])))
            writer.writerow(row)
    return csv_schema(n_features)

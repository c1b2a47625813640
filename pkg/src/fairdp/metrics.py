"""Utility and empirical fairness measurement on held-out data.

Hard predictions use the 0.5 probability threshold by default, with ties
going to the negative class (the prediction is 1 iff the pre-sigmoid output
is strictly positive). Rates whose conditioning event is empty for some
group are reported as NaN sentinels, never silently as 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import GroupPartition, TabularDataset
from .errors import InvalidParameterError
from .linalg import FloatArray
from .model import ModelParams, forward_penultimate

__all__ = ["GroupOutcomeTable", "EvalResult", "predict_probabilities", "evaluate", "fairness_gap", "METRIC_NAMES"]

METRIC_NAMES = ("demographic-parity", "equal-opportunity", "equal-odds")


@dataclass(frozen=True)
class GroupOutcomeTable:
    """Per-group confusion counts and the rates derived from them."""

    tp: tuple[int, ...]
    fp: tuple[int, ...]
    tn: tuple[int, ...]
    fn: tuple[int, ...]

    @property
    def n_groups(self) -> int:
        return len(self.tp)

    def group_size(self, k: int) -> int:
        return self.tp[k] + self.fp[k] + self.tn[k] + self.fn[k]

    def positive_rate(self, k: int) -> float:
        n = self.group_size(k)
        return (self.tp[k] + self.fp[k]) / n if n else math.nan

    def tpr(self, k: int) -> float:
        pos = self.tp[k] + self.fn[k]
        return self.tp[k] / pos if pos else math.nan

    def fpr(self, k: int) -> float:
        neg = self.fp[k] + self.tn[k]
        return self.fp[k] / neg if neg else math.nan

    def to_json(self) -> dict:
        return {
            "per_group": [
                {
                    "tp": self.tp[k], "fp": self.fp[k], "tn": self.tn[k], "fn": self.fn[k],
                    "positive_rate": _none_if_nan(self.positive_rate(k)),
                    "tpr": _none_if_nan(self.tpr(k)),
                    "fpr": _none_if_nan(self.fpr(k)),
                }
                for k in range(self.n_groups)
            ]
        }


@dataclass(frozen=True)
class EvalResult:
    table: GroupOutcomeTable
    accuracy: float
    precision: float  # NaN when no positive predictions were made

    def to_json(self) -> dict:
        doc = self.table.to_json()
        doc["accuracy"] = self.accuracy
        doc["precision"] = _none_if_nan(self.precision)
        return doc


def _none_if_nan(v: float):
    return None if isinstance(v, float) and math.isnan(v) else v


def predict_probabilities(model: ModelParams, ds: TabularDataset) -> FloatArray:
    """Sigmoid output for every row, computed in one vectorized pass."""
    z_prev = forward_penultimate(model, ds.features)
    z_out = z_prev @ model.w_out
    return 1.0 / (1.0 + np.exp(-z_out))


def evaluate(model: ModelParams, ds: TabularDataset, part: GroupPartition,
             threshold: float = 0.5, probability_fn=None) -> EvalResult:
    """Confusion counts per group plus overall accuracy and precision.

    ``probability_fn(ds) -> probabilities`` overrides the plain forward pass
    (used for smoothed inference); ties at the threshold predict 0.
    """
    if ds.n == 0:
        raise InvalidParameterError("cannot evaluate on an empty dataset")
    probs = probability_fn(ds) if probability_fn is not None else predict_probabilities(model, ds)
    preds = (probs > threshold).astype(np.int64)
    tp, fp, tn, fn = [], [], [], []
    for idx in part.groups:
        p, y = preds[idx], ds.labels[idx]
        tp.append(int(np.sum((p == 1) & (y == 1))))
        fp.append(int(np.sum((p == 1) & (y == 0))))
        tn.append(int(np.sum((p == 0) & (y == 0))))
        fn.append(int(np.sum((p == 0) & (y == 1))))
    table = GroupOutcomeTable(tuple(tp), tuple(fp), tuple(tn), tuple(fn))
    accuracy = float(np.mean(preds == ds.labels))
    predicted_pos = int(np.sum(preds == 1))
    precision = float(np.sum((preds == 1) & (ds.labels == 1))) / predicted_pos if predicted_pos else math.nan
    return EvalResult(table=table, accuracy=accuracy, precision=precision)


def _max_pairwise_gap(values: list[float]) -> float:
    if any(math.isnan(v) for v in values):
        return math.nan
    return max(values) - min(values)


def fairness_gap(table: GroupOutcomeTable, metric: str) -> float:
    """Largest pairwise rate gap for the named metric.

    demographic-parity compares positive-prediction rates, equal-opportunity
    true-positive rates, equal-odds the larger of the TPR and FPR gaps. NaN
    when some group's conditioning event is empty.
    """
    ks = range(table.n_groups)
    if metric == "demographic-parity":
        return _max_pairwise_gap([table.positive_rate(k) for k in ks])
    if metric == "equal-opportunity":
        return _max_pairwise_gap([table.tpr(k) for k in ks])
    if metric == "equal-odds":
        tpr_gap = _max_pairwise_gap([table.tpr(k) for k in ks])
        fpr_gap = _max_pairwise_gap([table.fpr(k) for k in ks])
        if math.isnan(tpr_gap) or math.isnan(fpr_gap):
            return math.nan
        return max(tpr_gap, fpr_gap)
    raise InvalidParameterError(f"unknown metric {metric!r}; expected one of {METRIC_NAMES}")

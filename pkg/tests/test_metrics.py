import math

import numpy as np
import pytest

from fairdp.data import TabularDataset, partition_by_group
from fairdp.errors import InvalidParameterError
from fairdp.metrics import GroupOutcomeTable, evaluate, fairness_gap, predict_probabilities
from fairdp.model import ModelParams


def dataset_with(labels, groups):
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    feats = np.linspace(0, 1, labels.size)[:, None]
    return TabularDataset(feats, groups, labels, groups.max() + 1)


def fixed_predictions(preds):
    preds = np.asarray(preds, dtype=np.float64)
    return lambda ds: preds * 0.98 + 0.01  # probabilities strictly inside (0,1)


class TestEvaluate:
    def test_perfect_predictor(self):
        ds = dataset_with([1, 0, 1, 0], [0, 0, 1, 1])
        part = partition_by_group(ds)
        res = evaluate(ModelParams([], np.zeros(1)), ds, part,
                       probability_fn=fixed_predictions(ds.labels))
        assert res.accuracy == 1.0
        # equal base rates across groups: every gap is zero
        for metric in ("demographic-parity", "equal-opportunity", "equal-odds"):
            assert fairness_gap(res.table, metric) == 0.0

    def test_constant_positive_predictor(self):
        ds = dataset_with([1, 0, 1, 0, 1, 1], [0, 0, 0, 1, 1, 1])
        part = partition_by_group(ds)
        res = evaluate(ModelParams([], np.zeros(1)), ds, part,
                       probability_fn=fixed_predictions(np.ones(6)))
        assert fairness_gap(res.table, "demographic-parity") == 0.0

    def test_hand_table_rates(self):
        preds = [1, 1, 0, 1, 0, 1, 0, 0]
        ds = dataset_with([1, 1, 0, 0, 1, 1, 0, 0], [0, 0, 0, 0, 1, 1, 1, 1])
        part = partition_by_group(ds)
        res = evaluate(ModelParams([], np.zeros(1)), ds, part,
                       probability_fn=fixed_predictions(preds))
        assert res.table.positive_rate(0) == 0.75
        assert res.table.positive_rate(1) == 0.25
        assert fairness_gap(res.table, "demographic-parity") == 0.5

    def test_precision_undefined_sentinel(self):
        ds = dataset_with([1, 0, 1, 0], [0, 0, 1, 1])
        part = partition_by_group(ds)
        res = evaluate(ModelParams([], np.zeros(1)), ds, part,
                       probability_fn=fixed_predictions(np.zeros(4)))
        assert math.isnan(res.precision)
        assert res.to_json()["precision"] is None

    def test_threshold_tie_goes_negative(self):
        # probability exactly 0.5 (zero weights) predicts the negative class
        ds = dataset_with([1, 1, 0, 0], [0, 0, 1, 1])
        part = partition_by_group(ds)
        res = evaluate(ModelParams([], np.zeros(1)), ds, part)
        assert res.table.positive_rate(0) == 0.0
        assert res.table.positive_rate(1) == 0.0

    def test_counts_sum_to_group_size(self, two_group_ds):
        from fairdp.model import init_params
        from fairdp.linalg import RngStream
        ds = two_group_ds
        part = partition_by_group(ds)
        model = init_params(ds.n_features, [4], RngStream(0).child(1))
        res = evaluate(model, ds, part)
        for k in range(part.n_groups):
            assert res.table.group_size(k) == len(part.groups[k])


class TestFairnessGap:
    def table(self, tp, fp, tn, fn):
        return GroupOutcomeTable(tuple(tp), tuple(fp), tuple(tn), tuple(fn))

    def test_equal_tprs_zero_gap(self):
        t = self.table(tp=[5, 10, 2], fp=[1, 2, 3], tn=[4, 5, 6], fn=[5, 10, 2])
        assert fairness_gap(t, "equal-opportunity") == 0.0

    def test_equal_odds_takes_larger_component(self):
        # TPR gap 0.1, FPR gap 0.3
        t = self.table(tp=[5, 6], fp=[1, 4], tn=[9, 6], fn=[5, 4])
        assert fairness_gap(t, "equal-opportunity") == pytest.approx(0.1)
        assert fairness_gap(t, "equal-odds") == pytest.approx(0.3)

    def test_empty_conditioning_event_sentinel(self):
        t = self.table(tp=[3, 0], fp=[1, 1], tn=[2, 5], fn=[1, 0])  # group 1 has no positives
        assert math.isnan(fairness_gap(t, "equal-opportunity"))
        assert math.isnan(fairness_gap(t, "equal-odds"))
        assert not math.isnan(fairness_gap(t, "demographic-parity"))

    def test_permutation_invariance_and_range(self):
        t = self.table(tp=[5, 6, 1], fp=[1, 4, 2], tn=[9, 6, 7], fn=[5, 4, 3])
        perm = self.table(tp=[1, 5, 6], fp=[2, 1, 4], tn=[7, 9, 6], fn=[3, 5, 4])
        for metric in ("demographic-parity", "equal-opportunity", "equal-odds"):
            g1, g2 = fairness_gap(t, metric), fairness_gap(perm, metric)
            assert g1 == g2
            assert 0.0 <= g1 <= 1.0

    def test_unknown_metric(self):
        with pytest.raises(InvalidParameterError):
            fairness_gap(self.table([1], [1], [1], [1]), "calibration")

    def test_two_path_consistency(self, two_group_ds):
        # the gap from confusion counts equals the gap computed from raw
        # predictions directly
        from fairdp.model import init_params
        from fairdp.linalg import RngStream
        ds = two_group_ds
        part = partition_by_group(ds)
        model = init_params(ds.n_features, [4], RngStream(14).child(1))
        res = evaluate(model, ds, part)
        preds = (predict_probabilities(model, ds) > 0.5).astype(int)
        rates = [float(np.mean(preds[idx])) for idx in part.groups]
        assert fairness_gap(res.table, "demographic-parity") == pytest.approx(
            max(rates) - min(rates), abs=1e-15)

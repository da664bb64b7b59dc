"""Performance measures and the out-of-sample bootstrap.

The rank-based measures are checked against exhaustive pair enumeration with
exact equality: both sides reduce to the same integer pair counts divided the
same way, so not even the last bit may differ.
"""

from __future__ import annotations

import numpy as np
import pytest

from conftest import synthetic_logistic
from revsignal.errors import DataError
from revsignal.evaluate import (
    MEASURES,
    BootstrapReport,
    auc,
    brier,
    cliffs_delta,
    groups_for_topk,
    improvement,
    negative_predictive_value,
    out_of_sample_bootstrap,
    prf,
    report_to_json,
    save_comparison,
    spec_hash,
    topk_accuracy,
)
from revsignal.splinefit import build_model_spec, fit_model


def auc_by_enumeration(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def cliffs_by_enumeration(a, b):
    greater = sum(1 for x in a for y in b if x > y)
    less = sum(1 for x in a for y in b if x < y)
    return (greater - less) / (len(a) * len(b))


class TestAuc:
    def test_hand_case(self):
        assert auc([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0]) == 0.75

    def test_perfect_and_inverted(self):
        assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
        assert auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0

    def test_ties_count_half(self):
        assert auc([0.5, 0.5], [1, 0]) == 0.5
        assert auc([0.4, 0.4, 0.4, 0.9], [0, 1, 0, 1]) == 0.75

    def test_equals_exhaustive_enumeration_exactly(self):
        rng = np.random.default_rng(1001)
        for _ in range(25):
            n = int(rng.integers(5, 120))
            scores = rng.integers(0, 8, size=n) / 7.0  # heavy ties
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                continue
            assert auc(scores, labels) == auc_by_enumeration(scores, labels)

    def test_single_class_rejected(self):
        with pytest.raises(DataError, match="both outcome classes"):
            auc([0.1, 0.9], [1, 1])


class TestBrier:
    def test_coin_flip_predictor_quarter(self):
        labels = np.array([0, 1, 1, 0, 1, 0, 0, 1])
        assert brier(np.full(8, 0.5), labels) == 0.25

    def test_perfect_predictions_zero(self):
        assert brier([1.0, 0.0, 1.0], [1, 0, 1]) == 0.0

    def test_hand_arithmetic(self):
        scores = [0.75, 0.5, 0.25]
        labels = [1, 0, 1]
        # (0.0625 + 0.25 + 0.5625) / 3, every square exact in binary
        assert brier(scores, labels) == 0.875 / 3.0

    def test_worst_case_is_one(self):
        assert brier([1.0, 0.0], [0, 1]) == 1.0


class TestPrecisionRecallF:
    def test_hand_case(self):
        p, r, f = prf([0.9, 0.6, 0.4, 0.1], [1, 0, 1, 0])
        assert (p, r, f) == (0.5, 0.5, 0.5)

    def test_score_at_threshold_counts_as_responder(self):
        assert prf([0.5], [1]) == (1.0, 1.0, 1.0)
        assert prf([0.5], [0], threshold=0.5) == (0.0, 0.0, 0.0)

    def test_zero_denominators_yield_zero(self):
        assert prf([0.1, 0.2], [0, 0]) == (0.0, 0.0, 0.0)  # nothing flagged
        assert prf([0.9, 0.8], [0, 0]) == (0.0, 0.0, 0.0)  # no true responders

    def test_harmonic_mean(self):
        p, r, f = prf([0.9, 0.9, 0.1, 0.1], [1, 0, 1, 0])
        assert (p, r) == (0.5, 0.5)
        assert f == 0.5
        p, r, f = prf([0.9, 0.6, 0.1, 0.2], [1, 1, 1, 0])
        assert (p, r) == (1.0, 2.0 / 3.0)
        assert f == pytest.approx(0.8)

    def test_custom_threshold(self):
        p, r, f = prf([0.3, 0.2, 0.1], [1, 0, 0], threshold=0.25)
        assert (p, r, f) == (1.0, 1.0, 1.0)


class TestNpvAndImprovement:
    def test_npv_hand_case(self):
        assert negative_predictive_value([0.1, 0.2, 0.9], [0, 1, 1]) == 0.5

    def test_npv_needs_predicted_negatives(self):
        with pytest.raises(DataError, match="predicted as not responding"):
            negative_predictive_value([0.9, 0.8], [0, 1])

    def test_improvement_signed_relative_change(self):
        assert improvement(0.8, 0.5) == pytest.approx(0.6)
        assert improvement(0.4, 0.5) == pytest.approx(-0.2)
        assert improvement(0.5, 0.5) == 0.0

    def test_improvement_zero_baseline_rejected(self):
        with pytest.raises(DataError, match="zero baseline"):
            improvement(0.3, 0.0)


class TestCliffsDelta:
    def test_complete_dominance(self):
        assert cliffs_delta([3.0, 4.0], [1.0, 2.0]) == (1.0, "large")
        assert cliffs_delta([1.0, 2.0], [3.0, 4.0]) == (-1.0, "large")

    def test_identical_samples_negligible(self):
        delta, label = cliffs_delta([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert delta == 0.0
        assert label == "negligible"

    def test_magnitude_labels(self):
        b = [1.5] * 10

        def sample(k):  # k low values, rest high: delta = (10 - 2k) / 10
            return [1.0] * k + [2.0] * (10 - k)

        assert cliffs_delta(sample(5), b) == (0.0, "negligible")
        assert cliffs_delta(sample(4), b) == (0.2, "small")
        assert cliffs_delta(sample(3), b) == (0.4, "medium")
        assert cliffs_delta(sample(1), b) == (0.8, "large")

    def test_equals_exhaustive_enumeration_exactly(self):
        rng = np.random.default_rng(1002)
        for _ in range(25):
            a = rng.integers(0, 6, size=int(rng.integers(2, 60))).astype(float)
            b = rng.integers(0, 6, size=int(rng.integers(2, 60))).astype(float)
            delta, _ = cliffs_delta(a, b)
            assert delta == cliffs_by_enumeration(a.tolist(), b.tolist())

    def test_empty_sample_rejected(self):
        with pytest.raises(DataError, match="non-empty"):
            cliffs_delta([], [1.0])


class TestTopkAccuracy:
    def test_hand_case(self):
        groups = [
            [("r1", 0.9, False), ("r2", 0.8, True)],
            [("r1", 0.9, True)],
            [("r1", 0.3, False), ("r2", 0.2, False)],
        ]
        assert topk_accuracy(groups, 1) == pytest.approx(1.0 / 3.0)
        assert topk_accuracy(groups, 2) == pytest.approx(2.0 / 3.0)

    def test_ties_break_by_reviewer_id(self):
        assert topk_accuracy([[("b", 0.5, True), ("a", 0.5, False)]], 1) == 0.0
        assert topk_accuracy([[("b", 0.5, False), ("a", 0.5, True)]], 1) == 1.0

    def test_k_beyond_group_size(self):
        assert topk_accuracy([[("a", 0.1, True)]], 5) == 1.0

    def test_input_validation(self):
        with pytest.raises(DataError, match="at least one change"):
            topk_accuracy([], 1)
        with pytest.raises(DataError, match="k must be"):
            topk_accuracy([[("a", 0.5, True)]], 0)
        with pytest.raises(DataError, match="at least one invited"):
            topk_accuracy([[]], 1)


def small_problem(seed=77, n=150):
    X, y = synthetic_logistic(seed, n, [1.2, -0.6])
    names = ["a", "b"]
    spec, _ = build_model_spec(X, names, y, seed=seed, budget=8)
    return X, names, y, spec


class TestBootstrap:
    def test_serial_and_parallel_agree_bitwise(self):
        X, names, y, spec = small_problem()
        serial = out_of_sample_bootstrap(X, names, y, spec,
                                         iterations=16, seed=5, jobs=1)
        parallel = out_of_sample_bootstrap(X, names, y, spec,
                                           iterations=16, seed=5, jobs=8)
        for name in MEASURES:
            assert np.array_equal(serial.measures[name], parallel.measures[name])
        assert serial.redraws == parallel.redraws

    def test_reruns_are_deterministic(self):
        X, names, y, spec = small_problem()
        first = out_of_sample_bootstrap(X, names, y, spec, iterations=10, seed=3)
        second = out_of_sample_bootstrap(X, names, y, spec, iterations=10, seed=3)
        for name in MEASURES:
            assert np.array_equal(first.measures[name], second.measures[name])

    def test_seed_changes_results(self):
        X, names, y, spec = small_problem()
        a = out_of_sample_bootstrap(X, names, y, spec, iterations=10, seed=3)
        b = out_of_sample_bootstrap(X, names, y, spec, iterations=10, seed=4)
        assert any(not np.array_equal(a.measures[m], b.measures[m])
                   for m in MEASURES)

    def test_report_shape_and_summary(self):
        X, names, y, spec = small_problem()
        report = out_of_sample_bootstrap(X, names, y, spec, iterations=12, seed=1)
        assert report.iterations == 12
        for name in MEASURES:
            assert report.measures[name].shape == (12,)
        summary = report.summary()
        assert set(summary) == set(MEASURES)
        for entry in summary.values():
            assert set(entry) == {"mean", "sd"}
        assert 0.0 <= report.mean("auc") <= 1.0
        assert report.sd("auc") >= 0.0

    def test_threshold_is_plumbed_through(self):
        X, names, y, spec = small_problem()
        report = out_of_sample_bootstrap(X, names, y, spec, iterations=6,
                                         seed=2, threshold=0.0)
        # every score clears a zero threshold, so recall is always perfect
        assert np.all(report.measures["recall"] == 1.0)

    def test_input_validation(self):
        X, names, y, spec = small_problem()
        with pytest.raises(DataError, match="iterations"):
            out_of_sample_bootstrap(X, names, y, spec, iterations=0, seed=1)
        with pytest.raises(DataError, match="both outcome classes"):
            out_of_sample_bootstrap(X, names, np.ones_like(y), spec,
                                    iterations=2, seed=1)

    def test_json_document(self):
        X, names, y, spec = small_problem()
        report = out_of_sample_bootstrap(X, names, y, spec, iterations=5, seed=9)
        doc = report_to_json(report)
        assert set(doc) == {"measures", "iterations", "seed", "threshold",
                            "redraws", "spec_hash"}
        assert doc["iterations"] == 5
        assert doc["seed"] == 9
        assert doc["spec_hash"] == spec_hash(spec)
        assert len(doc["spec_hash"]) == 64
        for name in MEASURES:
            entry = doc["measures"][name]
            assert entry["values"] == [float(v) for v in report.measures[name]]
            assert entry["mean"] == report.mean(name)

    def test_spec_hash_tracks_spec_content(self):
        X, names, y, spec = small_problem()
        other, _ = build_model_spec(X, names, y, seed=99, budget=8)
        assert spec_hash(spec) == spec_hash(spec)
        assert spec_hash(spec) != spec_hash(other)  # seed differs


class TestComparisonFile:
    @staticmethod
    def report(value, sd_pair=(0.0, 0.0)):
        measures = {name: np.array([value - sd_pair[0], value + sd_pair[1]])
                    for name in MEASURES}
        return BootstrapReport(measures=measures, iterations=2, seed=0,
                               threshold=0.5)

    def test_rows_and_percentages(self, tmp_path):
        path = tmp_path / "comparison.csv"
        save_comparison(self.report(0.8), self.report(0.5), path)
        lines = path.read_text().splitlines()
        assert lines[0] == ("measure,proposed_mean,proposed_sd,"
                            "baseline_mean,baseline_sd,improvement_pct")
        assert len(lines) == 1 + len(MEASURES)
        first = lines[1].split(",")
        assert first[0] == "auc"
        assert float(first[1]) == 0.8
        assert float(first[3]) == 0.5
        assert float(first[5]) == pytest.approx(60.0)

    def test_zero_baseline_writes_nan(self, tmp_path):
        path = tmp_path / "comparison.csv"
        save_comparison(self.report(0.8), self.report(0.0), path)
        row = path.read_text().splitlines()[1].split(",")
        assert row[5] == "nan"


class TestGroupsForTopk:
    def test_groups_follow_change_ids(self, golden):
        from conftest import GOLDEN_BOTS
        from revsignal.metrics import build_index, build_instances
        from revsignal.prepare import label_participation
        from revsignal.splinefit import ModelSpec

        changes = list(golden.changes)
        labels = [lab for c in changes
                  for lab in label_participation(c, GOLDEN_BOTS)]
        index = build_index(changes, GOLDEN_BOTS)
        instances = build_instances(changes, labels, index)
        X = np.array([[float(i.patch_size)] for i in instances])
        y = np.array([1.0 if i.outcome else 0.0 for i in instances])
        spec = ModelSpec(variables=("patch_size",), dof={}, knots={})
        model = fit_model(X, ["patch_size"], y, spec)

        groups = groups_for_topk(instances, model, ["patch_size"])
        assert [len(g) for g in groups] == [1, 2, 2, 3]
        assert [sorted(r for r, _, _ in g) for g in groups] == [
            ["bob"], ["bob", "carol"], ["bob", "carol"],
            ["bob", "carol", "dave"]]
        for group in groups:
            for _, score, outcome in group:
                assert 0.0 < score < 1.0
                assert isinstance(outcome, bool)

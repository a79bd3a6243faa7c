import json
from dataclasses import replace

import numpy as np
import pytest

from selmopf.errors import DimensionMismatch
from selmopf.harness import (METHODS, ThresholdSpec, accuracy_counts, accuracy_index,
                             compare_methods, derive_thresholds, dumps_report, evaluate,
                             mean_accuracy, method_config, ordering_holds, report_table,
                             strip_timing)
from selmopf.pipeline import PipelineConfig, group_abs_means, train_pipeline
from selmopf.scenario import TARGET_GROUPS, UncertaintyConfig, group_columns
from selmopf.selm import SelmConfig

from oracles import count_within

LABELS = ["PF:0", "PF:1", "QF:0", "QF:1", "V:1", "V:2", "THETA:1", "THETA:2", "PG:0", "QG:0", "F"]
MEANS = {"PF": 0.5, "QF": 0.2, "V": 1.0, "THETA": 0.1, "PG": 1.0, "QG": 0.3, "F": 4000.0}
BASE = PipelineConfig(selm=SelmConfig(hidden_neurons=60, stack_iterations=2),
                      reinforcement_layers=1)


def _thr():
    return derive_thresholds(MEANS)


def test_default_thresholds():
    spec = ThresholdSpec()
    assert (spec.v_thr, spec.theta_thr, spec.relative, spec.objective_relative) == \
        (0.001, 0.5, 0.01, 0.001)
    with pytest.raises(ValueError):
        ThresholdSpec(v_thr=0)


def test_threshold_formula():
    thr = _thr()
    assert thr["V"] == 0.001 and thr["THETA"] == 0.5
    for g in ("PF", "QF", "PG", "QG"):
        assert thr[g] == pytest.approx(0.01 * MEANS[g], rel=1e-12)
    assert thr["F"] == pytest.approx(4.0, rel=1e-12)
    with pytest.raises(ValueError):
        derive_thresholds({**MEANS, "PG": 0.0})


def test_perfect_prediction_scores_100():
    truth = np.random.default_rng(0).normal(size=(5, len(LABELS)))
    p = accuracy_index(truth, truth, LABELS, _thr())
    assert all(v == 100.0 for v in p.values()) and set(p) == set(TARGET_GROUPS)


def test_uniform_double_threshold_scores_zero():
    thr = _thr()
    truth = np.zeros((4, len(LABELS)))
    pred = np.empty_like(truth)
    for g, cols in group_columns(LABELS).items():
        step = np.radians(2 * thr[g]) if g == "THETA" else 2 * thr[g]
        pred[:, cols] = step
    assert all(v == 0.0 for v in accuracy_index(pred, truth, LABELS, thr).values())


def test_half_of_a_four_element_group():
    thr = _thr()
    truth = np.zeros((2, len(LABELS)))
    pred = truth.copy()
    pf = group_columns(LABELS)["PF"]
    pred[1, pf] = 2 * thr["PF"]
    p = accuracy_index(pred, truth, LABELS, thr)
    assert p["PF"] == 50.0
    assert count_within(pred[:, pf], truth[:, pf], thr["PF"]) == (2, 4)


def test_comparison_is_strict_and_angles_are_degrees():
    thr = _thr()
    truth = np.zeros((1, len(LABELS)))
    pred = truth.copy()
    cols = group_columns(LABELS)
    pred[0, cols["V"]] = [0.001, 0.0009]
    pred[0, cols["THETA"]] = np.radians([0.4, 0.6])
    p = accuracy_index(pred, truth, LABELS, thr)
    assert p["V"] == 50.0 and p["THETA"] == 50.0


def test_matches_counting_oracle_on_random_pairs():
    rng = np.random.default_rng(1)
    thr = _thr()
    cols = group_columns(LABELS)
    for _ in range(20):
        truth = rng.normal(size=(6, len(LABELS)))
        pred = truth + rng.normal(scale=0.01, size=truth.shape)
        counts = accuracy_counts(pred, truth, LABELS, thr)
        for g, c in cols.items():
            a, b = pred[:, c], truth[:, c]
            if g == "THETA":
                a, b = np.degrees(a), np.degrees(b)
            assert counts[g] == count_within(a.tolist(), b.tolist(), thr[g])


def test_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        accuracy_index(np.zeros((2, 3)), np.zeros((2, 4)), LABELS, _thr())


def test_mean_over_groups():
    assert mean_accuracy({g: 70.0 for g in TARGET_GROUPS}) == 70.0


def test_method_definitions():
    m3, m4, m5, m6 = (method_config(m, BASE) for m in METHODS)
    assert (m3.mode, m3.reinforcement_layers, m3.n_classes) == ("direct", 0, 1)
    assert (m4.mode, m4.reinforcement_layers, m4.n_classes) == ("staged", 0, 1)
    assert (m5.mode, m5.reinforcement_layers, m5.n_classes) == ("staged", 1, 1)
    assert (m6.mode, m6.reinforcement_layers, m6.n_classes) == ("staged", 1, 2)
    with pytest.raises(ValueError):
        method_config("M7")


# -- evaluation reports -------------------------------------------------------------

@pytest.fixture(scope="module")
def trained(case3_split, case3):
    train, test = case3_split
    return train_pipeline(train, case3, BASE), train, test


def test_evaluate_report(trained):
    reg, train, test = trained
    rep = evaluate(reg, test)
    assert rep["kind"] == "evaluate" and rep["n_rows"] == len(test)
    assert rep["training_abs_mean"] == group_abs_means(train.targets, train.target_labels)
    # audit: stored thresholds follow from the stored means
    again = derive_thresholds(rep["training_abs_mean"], ThresholdSpec(**rep["threshold_spec"]))
    for g in TARGET_GROUPS:
        assert rep["thresholds"][g] == pytest.approx(again[g], rel=1e-12)
        assert 0 <= rep["accuracy"][g] <= 100
        k, n = rep["counts"][g]
        assert rep["accuracy"][g] == pytest.approx(100 * k / n, rel=1e-12)
    assert rep["timing"]["test_s"] >= 0
    assert sum(rep["class_share"]) == len(test)


def test_evaluate_rejects_foreign_columns(trained, case9):
    from selmopf.scenario import build_dataset

    reg, _, _ = trained
    with pytest.raises(DimensionMismatch):
        evaluate(reg, build_dataset(case9, UncertaintyConfig(0.0), 1))


# -- method comparison --------------------------------------------------------------

UC3 = UncertaintyConfig(load_fluctuation=0.3)


def test_single_method_one_row_per_seed(case3):
    rep = compare_methods(case3, UC3, 120, 40, ["M3"], [1, 2], BASE)
    assert [(r["method"], r["seed"]) for r in rep["results"]] == [("M3", 1), ("M3", 2)]
    assert rep["methods"] == ["M3"] and set(rep["summary"]) == {"M3"}
    assert all(t["train_s"] >= 0 and t["test_s"] >= 0 for t in rep["timing"]["runs"])
    table = report_table(rep).splitlines()
    assert table[0].startswith("method,seed,PF") and len(table) == 3


def test_configuration_alias_rows_match(case3):
    base = replace(BASE, n_classes=1, reinforcement_layers=0)
    rep = compare_methods(case3, UC3, 120, 40, ["M4", "M6"], [3], base)
    a, b = rep["results"]
    for g in TARGET_GROUPS:
        assert a["accuracy"][g] == pytest.approx(b["accuracy"][g], abs=1e-12)


def test_reports_reproduce_without_timing(case3):
    a = compare_methods(case3, UC3, 100, 30, ["M3", "M5"], [4], BASE)
    b = compare_methods(case3, UC3, 100, 30, ["M3", "M5"], [4], BASE)
    assert dumps_report(strip_timing(a)) == dumps_report(strip_timing(b))
    json.loads(dumps_report(a))
    per = a["per_seed"][0]
    assert per["n_train"] + per["n_test"] + per["n_failed"] == 130


def test_compare_argument_checks(case3):
    with pytest.raises(ValueError):
        compare_methods(case3, UC3, 0, 10, ["M3"], [1])
    with pytest.raises(ValueError):
        compare_methods(case3, UC3, 10, 10, ["M9"], [1])


def test_ordering_rule():
    def rep(p):
        return {"results": [{"method": m, "seed": 1, "mean_accuracy": v} for m, v in p.items()]}

    assert ordering_holds(rep({"M3": 90, "M4": 91, "M5": 92, "M6": 93}), 1)
    assert ordering_holds(rep({"M3": 90, "M4": 92.4, "M5": 92, "M6": 92.3}), 1)
    assert not ordering_holds(rep({"M3": 90, "M4": 93, "M5": 92, "M6": 93}), 1)
    assert not ordering_holds(rep({"M3": 90, "M4": 90.5, "M5": 91, "M6": 91.5}), 1)

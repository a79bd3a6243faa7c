"""Accuracy index, threshold derivation, evaluation reports and method comparison.

Report JSON (``schema = "selmopf-report"``, ``version = 1``) holds every
reproducible field at the top level; wall-clock times and the creation
timestamp live under ``"timing"`` only, so reports from identical runs match
byte for byte once that key is removed.  See ``docs/report_schema.md``.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .acopf import OpfConfig
from .case_io import case_hash
from .errors import DimensionMismatch
from .pipeline import PipelineConfig, group_abs_means, predict_targets, train_pipeline
from .scenario import TARGET_GROUPS, build_dataset, group_columns, utc_timestamp

REPORT_SCHEMA = "selmopf-report"
REPORT_VERSION = 1
METHODS = ("M3", "M4", "M5", "M6")
_RELATIVE_GROUPS = ("PF", "QF", "PG", "QG")


@dataclass(frozen=True)
class ThresholdSpec:
    v_thr: float = 0.001  # per unit
    theta_thr: float = 0.5  # degrees
    relative: float = 0.01  # PF, QF, PG, QG: share of the training mean |value|
    objective_relative: float = 0.001  # F

    def __post_init__(self):
        if min(self.v_thr, self.theta_thr, self.relative, self.objective_relative) <= 0:
            raise ValueError("all thresholds must be > 0")


def derive_thresholds(abs_means, spec=None):
    """Absolute threshold per group from the training mean |value| of each group.

    THETA thresholds are in degrees; every other group is in its stored unit.
    """
    spec = spec or ThresholdSpec()
    thr = {}
    for g in TARGET_GROUPS:
        if g == "V":
            thr[g] = spec.v_thr
        elif g == "THETA":
            thr[g] = spec.theta_thr
        elif g == "F":
            thr[g] = spec.objective_relative * abs_means[g]
        else:
            thr[g] = spec.relative * abs_means[g]
    for g, v in thr.items():
        if not v > 0:
            raise ValueError(f"derived threshold for {g} is {v}; training mean is zero")
    return thr


def group_errors(pred, truth, labels):
    """Absolute errors per group; THETA converted to degrees."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[1] != len(labels):
        raise DimensionMismatch(f"pred {pred.shape}, truth {truth.shape}, "
                                f"{len(labels)} labels are inconsistent")
    cols = group_columns(labels)
    out = {}
    for g in TARGET_GROUPS:
        if g not in cols:
            continue
        err = np.abs(pred[:, cols[g]] - truth[:, cols[g]])
        out[g] = np.degrees(err) if g == "THETA" else err
    return out


def accuracy_counts(pred, truth, labels, thresholds):
    """``group -> (n_within, n_total)`` with strict ``error < threshold``."""
    errs = group_errors(pred, truth, labels)
    return {g: (int(np.count_nonzero(e < thresholds[g])), int(e.size)) for g, e in errs.items()}


def accuracy_index(pred, truth, labels, thresholds):
    """Percentage of elements per group whose error is below the group threshold."""
    return {g: 100.0 * k / n if n else float("nan")
            for g, (k, n) in accuracy_counts(pred, truth, labels, thresholds).items()}


def mean_accuracy(p):
    return float(np.mean([p[g] for g in TARGET_GROUPS if g in p]))


def evaluate(reg, dataset, spec=None):
    """Report of ``reg`` on ``dataset``; thresholds come from the regressor's
    training-set group means."""
    spec = spec or ThresholdSpec()
    if list(dataset.target_labels) != list(reg.column_spec["targets"]):
        raise DimensionMismatch("dataset columns do not match the regressor")
    thr = derive_thresholds(reg.group_abs_mean, spec)
    t0 = time.perf_counter()
    pred, labels = predict_targets(reg, dataset.inputs)
    test_s = time.perf_counter() - t0
    p = accuracy_index(pred, dataset.targets, dataset.target_labels, thr)
    return {
        "schema": REPORT_SCHEMA,
        "version": REPORT_VERSION,
        "kind": "evaluate",
        "case_hash": dataset.meta.get("case_hash"),
        "seed": dataset.meta.get("seed"),
        "config": reg.config.to_dict(),
        "threshold_spec": asdict(spec),
        "training_abs_mean": reg.group_abs_mean,
        "thresholds": thr,
        "n_rows": len(dataset),
        "accuracy": p,
        "mean_accuracy": mean_accuracy(p),
        "counts": accuracy_counts(pred, dataset.targets, dataset.target_labels, thr),
        "class_share": np.bincount(labels, minlength=reg.n_classes).tolist(),
        "timing": {"created_at": utc_timestamp(), "test_s": test_s},
    }


def method_config(method, base=None):
    """Pipeline configuration of an ablation method.

    M3: one direct chain, no reinforcement, no classing.  M4: three stages
    only.  M5: three stages with reinforcement.  M6: M5 plus classing.
    """
    base = base or PipelineConfig()
    if method == "M3":
        return replace(base, mode="direct", reinforcement_layers=0, n_classes=1)
    if method == "M4":
        return replace(base, mode="staged", reinforcement_layers=0, n_classes=1)
    if method == "M5":
        return replace(base, mode="staged", n_classes=1)
    if method == "M6":
        return replace(base, mode="staged")
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def compare_methods(case, ucfg, train_n, test_n, methods=METHODS, seeds=(1, 2, 3),
                    base=None, spec=None, opf_cfg=None, progress=None):
    """Paired ablation: every method sees the same train/test split per seed.

    Each seed's dataset holds ``train_n + test_n`` scenarios; scenarios
    ``< train_n`` train, the rest test.  SELM weights are seeded from the
    same seed so reruns reproduce the report.
    """
    if train_n < 1 or test_n < 1:
        raise ValueError("train_n and test_n must be >= 1")
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    base = base or PipelineConfig()
    spec = spec or ThresholdSpec()
    opf_cfg = opf_cfg or OpfConfig()
    results, timing, per_seed = [], [], []
    for seed in seeds:
        ds = build_dataset(case, replace(ucfg, seed=int(seed)), train_n + test_n, opf_cfg)
        train, test = ds.split_by_scenario(train_n)
        means = group_abs_means(train.targets, train.target_labels)
        thr = derive_thresholds(means, spec)
        per_seed.append({"seed": int(seed), "n_train": len(train), "n_test": len(test),
                         "n_failed": ds.meta["n_failed"], "training_abs_mean": means,
                         "thresholds": thr})
        for method in methods:
            cfg = method_config(method, base)
            cfg = replace(cfg, selm=replace(cfg.selm, weight_seed=int(seed)))
            t0 = time.perf_counter()
            reg = train_pipeline(train, case, cfg)
            train_s = time.perf_counter() - t0
            t0 = time.perf_counter()
            pred, labels = predict_targets(reg, test.inputs)
            test_s = time.perf_counter() - t0
            p = accuracy_index(pred, test.targets, test.target_labels, thr)
            results.append({
                "method": method,
                "seed": int(seed),
                "accuracy": p,
                "mean_accuracy": mean_accuracy(p),
                "counts": accuracy_counts(pred, test.targets, test.target_labels, thr),
                "n_classes": reg.n_classes,
                "class_pool": reg.class_pool,
                "notes": reg.notes,
            })
            timing.append({"method": method, "seed": int(seed), "train_s": train_s,
                           "test_s": test_s})
            if progress:
                progress(results[-1], timing[-1])
    summary = {}
    for method in methods:
        rows = [r for r in results if r["method"] == method]
        summary[method] = {
            "mean_accuracy": float(np.mean([r["mean_accuracy"] for r in rows])),
            "accuracy": {g: float(np.mean([r["accuracy"][g] for r in rows]))
                         for g in TARGET_GROUPS},
        }
    return {
        "schema": REPORT_SCHEMA,
        "version": REPORT_VERSION,
        "kind": "compare",
        "case_hash": case_hash(case),
        "case_name": case.name,
        "methods": methods,
        "seeds": [int(s) for s in seeds],
        "train_n": train_n,
        "test_n": test_n,
        "config": base.to_dict(),
        "uncertainty": ucfg.to_dict(),
        "threshold_spec": asdict(spec),
        "per_seed": per_seed,
        "results": results,
        "summary": summary,
        "timing": {"created_at": utc_timestamp(), "runs": timing},
    }


def ordering_holds(report, seed, slack=0.5, margin=2.0):
    """Whether M6 >= M5 >= M4 >= M3 (each within ``slack``) and M6 - M3 >= ``margin``."""
    p = {r["method"]: r["mean_accuracy"] for r in report["results"] if r["seed"] == seed}
    chain = [p["M6"], p["M5"], p["M4"], p["M3"]]
    pairs = all(a >= b - slack for a, b in zip(chain, chain[1:]))
    return pairs and p["M6"] - p["M3"] >= margin


def dumps_report(report):
    return json.dumps(report, indent=1, sort_keys=True) + "\n"


def strip_timing(report):
    return {k: v for k, v in report.items() if k != "timing"}


def report_table(report):
    """CSV text: one row per method and seed, one column per group."""
    lines = ["method,seed," + ",".join(TARGET_GROUPS) + ",mean"]
    for r in report["results"]:
        vals = ",".join(f"{r['accuracy'][g]:.4f}" for g in TARGET_GROUPS)
        lines.append(f"{r['method']},{r['seed']},{vals},{r['mean_accuracy']:.4f}")
    return "\n".join(lines) + "\n"

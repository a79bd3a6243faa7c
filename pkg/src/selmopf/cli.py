"""Command-line driver: generate -> train -> predict / evaluate, and compare.

Exit status is 0 on success, 2 on usage errors and 1 on domain errors; in
the last case stderr carries ``{"error": <class name>, "message": ...}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .acopf import OpfConfig
from .case_io import load_case
from .errors import MalformedFile, SelmOpfError
from .harness import (METHODS, ThresholdSpec, compare_methods, dumps_report, evaluate,
                      report_table)
from .pipeline import PipelineConfig, load_regressor, predict_targets, save_regressor, train_pipeline
from .scenario import (UncertaintyConfig, build_dataset, load_dataset, load_uncertainty,
                       save_dataset)

CONFIG_SECTIONS = ("uncertainty", "pipeline", "opf", "thresholds")


class UsageError(Exception):
    pass


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise MalformedFile(f"cannot read {what} {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{what} {path} is not valid JSON: {exc}") from None


def load_config(path):
    """Sections of a ``--config`` file; unknown sections are usage errors."""
    if path is None:
        return {}
    cfg = _read_json(path, "config")
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = set(cfg) - set(CONFIG_SECTIONS)
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _build(cls, section, **fixed):
    try:
        if hasattr(cls, "from_dict"):
            return cls.from_dict({**section, **fixed})
        return cls(**{**section, **fixed})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {cls.__name__}: {exc}") from None


def _uncertainty(args, cfg, seed):
    section = dict(cfg.get("uncertainty", {}))
    if getattr(args, "uncertainty", None):
        section.update(load_uncertainty(args.uncertainty).to_dict())
    return _build(UncertaintyConfig, section, **({"seed": seed} if seed is not None else {}))


def cmd_generate(args, cfg):
    case = load_case(args.case)
    ucfg = _uncertainty(args, cfg, args.seed)
    opf = _build(OpfConfig, cfg.get("opf", {}))
    ds = build_dataset(case, ucfg, args.samples, opf)
    save_dataset(ds, args.out)
    print(json.dumps({"rows": len(ds), "n_failed": ds.meta["n_failed"], "out": str(args.out)}))


def cmd_train(args, cfg):
    ds = load_dataset(args.dataset)
    if ds.case is None:
        raise MalformedFile(f"dataset {args.dataset} has no case.json")
    pcfg = _build(PipelineConfig, cfg.get("pipeline", {}))
    if args.method:
        from .harness import method_config

        pcfg = method_config(args.method, pcfg)
    reg = train_pipeline(ds, ds.case, pcfg)
    save_regressor(reg, args.out)
    print(json.dumps({"classes": reg.n_classes, "pools": reg.class_pool, "out": str(args.out)}))


def _read_demand(path, n_bus):
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise MalformedFile(f"cannot read demand file {path}: {exc}") from None
    return header, data


def cmd_predict(args, cfg):
    reg = load_regressor(args.model)
    header, x = _read_demand(args.demand, reg.layout.n_bus)
    if header != reg.column_spec["inputs"]:
        raise MalformedFile("demand header must list the model's input columns in order")
    y, labels = predict_targets(reg, x)
    with open(args.out, "w") as fh:
        fh.write(",".join(["class"] + reg.column_spec["targets"]) + "\n")
        for c, row in zip(labels, y):
            fh.write(",".join([str(int(c))] + ["%.17g" % v for v in row]) + "\n")


def cmd_evaluate(args, cfg):
    reg = load_regressor(args.model)
    ds = load_dataset(args.dataset)
    spec = _build(ThresholdSpec, cfg.get("thresholds", {}))
    report = evaluate(reg, ds, spec)
    _write_report(report, args.out)


def cmd_compare(args, cfg):
    case = load_case(args.case)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"methods must be a comma list drawn from {','.join(METHODS)}")
    try:
        seeds = [int(s) for s in args.seeds.split(",")]
    except ValueError:
        raise UsageError("seeds must be a comma list of integers") from None
    ucfg = _uncertainty(args, cfg, None)
    base = _build(PipelineConfig, cfg.get("pipeline", {}))
    spec = _build(ThresholdSpec, cfg.get("thresholds", {}))
    opf = _build(OpfConfig, cfg.get("opf", {}))
    report = compare_methods(case, ucfg, args.train, args.test, methods, seeds, base, spec, opf)
    _write_report(report, args.out)
    if args.table:
        Path(args.table).write_text(report_table(report))


def _write_report(report, out):
    text = dumps_report(report)
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _positive(v):
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser():
    p = argparse.ArgumentParser(prog="selmopf", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file overriding defaults "
                   "(sections: uncertainty, pipeline, opf, thresholds)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample scenarios and label them with ACOPF")
    g.add_argument("--case", required=True, help="case file or bundled name (case3, case9, case14)")
    g.add_argument("--samples", type=_positive, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--uncertainty", help="JSON uncertainty config or bundled name "
                   "(case9_uncertainty)")
    g.add_argument("--out", required=True, help="dataset directory")

    t = sub.add_parser("train", help="train a regressor on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--method", choices=METHODS, help="ablation variant (default: pipeline config)")
    t.add_argument("--out", required=True, help="model archive path")

    r = sub.add_parser("predict", help="predict OPF solutions for demand rows")
    r.add_argument("--model", required=True)
    r.add_argument("--demand", required=True, help="CSV with the model's input columns")
    r.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="accuracy report of a model on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", default="-")

    c = sub.add_parser("compare", help="paired ablation of M3..M6")
    c.add_argument("--case", required=True)
    c.add_argument("--train", type=_positive, required=True)
    c.add_argument("--test", type=_positive, required=True)
    c.add_argument("--methods", default=",".join(METHODS))
    c.add_argument("--seeds", default="1,2,3")
    c.add_argument("--uncertainty", help="JSON uncertainty config or bundled name")
    c.add_argument("--out", default="-")
    c.add_argument("--table", help="also write a CSV summary table here")
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "compare": cmd_compare}


def _fail(code, name, message):
    sys.stderr.write(json.dumps({"error": name, "message": message}) + "\n")
    return code


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        return _fail(2, "UsageError", str(exc))
    except SelmOpfError as exc:
        return _fail(1, type(exc).__name__, str(exc))
    except (ValueError, OSError) as exc:
        return _fail(1, type(exc).__name__, str(exc))
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()

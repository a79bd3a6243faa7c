"""Seeded Monte Carlo demand/renewable scenarios and labelled OPF datasets."""

from __future__ import annotations

import datetime as _dt
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .acopf import (OpfConfig, extract_active_set, inequality_labels,
                    kkt_residuals, solve_acopf)
from .case_io import case_hash, parse_case, serialize_case
from .errors import MalformedFile, OpfError, TooManyFailures

log = logging.getLogger(__name__)

TARGET_GROUPS = ("PF", "QF", "V", "THETA", "PG", "QG", "F")
DATASET_FORMAT = "selmopf-dataset"
DATASET_VERSION = 1
MAX_FAILURE_RATE = 0.2
_DATA = Path(__file__).parent / "data"


@dataclass(frozen=True)
class Renewable:
    """A renewable plant modelled as negative active load at ``bus``."""

    bus: int  # original bus id
    kind: str  # "wind" or "pv"
    capacity: float  # per unit
    weibull_shape: float = 2.0
    weibull_scale: float = 8.0  # m/s
    beta_alpha: float = 2.0
    beta_beta: float = 2.0
    cut_in: float = 3.0
    rated: float = 12.0
    cut_out: float = 25.0

    def __post_init__(self):
        if self.kind not in ("wind", "pv"):
            raise ValueError(f"renewable kind must be 'wind' or 'pv', got {self.kind!r}")
        if self.capacity < 0:
            raise ValueError("renewable capacity must be >= 0")
        if min(self.weibull_shape, self.weibull_scale, self.beta_alpha, self.beta_beta) <= 0:
            raise ValueError("distribution parameters must be > 0")
        if not 0 <= self.cut_in < self.rated < self.cut_out:
            raise ValueError("need 0 <= cut_in < rated < cut_out")

    def draw(self, rng):
        """Output in per unit, within ``[0, capacity]``."""
        if self.kind == "pv":
            return self.capacity * rng.beta(self.beta_alpha, self.beta_beta)
        speed = self.weibull_scale * rng.weibull(self.weibull_shape)
        if speed < self.cut_in or speed >= self.cut_out:
            frac = 0.0
        elif speed >= self.rated:
            frac = 1.0
        else:
            frac = (speed - self.cut_in) / (self.rated - self.cut_in)
        return self.capacity * frac


@dataclass(frozen=True)
class UncertaintyConfig:
    load_fluctuation: float = 0.10
    renewables: tuple = ()
    seed: int = 0
    load_distribution: str = "uniform"  # or "truncnorm" (sd = r/2, cut at +-r)

    def __post_init__(self):
        if not 0 <= self.load_fluctuation < 1:
            raise ValueError("load_fluctuation must lie in [0, 1)")
        if self.load_distribution not in ("uniform", "truncnorm"):
            raise ValueError(f"unknown load distribution {self.load_distribution!r}")
        object.__setattr__(self, "renewables", tuple(
            r if isinstance(r, Renewable) else Renewable(**r) for r in self.renewables))

    def to_dict(self):
        return {
            "load_fluctuation": self.load_fluctuation,
            "load_distribution": self.load_distribution,
            "seed": self.seed,
            "renewables": [asdict(r) for r in self.renewables],
        }

    @classmethod
    def from_dict(cls, d):
        known = {"load_fluctuation", "renewables", "seed", "load_distribution"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown uncertainty keys: {sorted(unknown)}")
        return cls(**d)


def load_uncertainty(source, **overrides):
    """Uncertainty config from a JSON file or a bundled name such as
    ``"case9_uncertainty"``."""
    path = Path(source)
    if not path.exists() and path.suffix == "" and path.parent == Path("."):
        path = _DATA / f"{source}.json"
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise MalformedFile(f"cannot read uncertainty config {source}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"uncertainty config {source} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise MalformedFile(f"uncertainty config {source} must hold a JSON object")
    return UncertaintyConfig.from_dict({**d, **overrides})


def utc_timestamp():
    """Current UTC time, or ``SOURCE_DATE_EPOCH`` when that is set."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        t = _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc)
    else:
        t = _dt.datetime.now(_dt.timezone.utc)
    return t.isoformat(timespec="seconds")


def penetration(case, ucfg):
    """Installed renewable capacity over total base active demand."""
    return sum(r.capacity for r in ucfg.renewables) / float(np.sum(case.pd))


def scenario_rng(seed, index):
    """Independent generator for scenario ``index`` of the stream ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def sample_scenarios(case, ucfg, n, start=0):
    """Demand scenarios ``(pd, qd)``, each an ``(n, n_bus)`` per-unit array.

    Scenario ``k`` depends only on ``(ucfg.seed, start + k)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    nb = case.n_bus
    base_pd = np.asarray(case.pd)
    base_qd = np.asarray(case.qd)
    ren_bus = [case.index_of(r.bus) for r in ucfg.renewables]
    r = ucfg.load_fluctuation
    pd = np.empty((n, nb))
    qd = np.empty((n, nb))
    for k in range(n):
        rng = scenario_rng(ucfg.seed, start + k)
        if ucfg.load_distribution == "uniform":
            u = rng.uniform(-r, r, size=nb)
        elif r > 0:
            u = stats.truncnorm.rvs(-2.0, 2.0, scale=r / 2.0, size=nb, random_state=rng)
        else:
            u = np.zeros(nb)
        scale = 1.0 + u
        pd[k] = base_pd * scale
        qd[k] = base_qd * scale
        for bus, ren in zip(ren_bus, ucfg.renewables):
            pd[k, bus] -= ren.draw(rng)
    return pd, qd


# --------------------------------------------------------------------------
# datasets


def input_labels(case):
    ids = case.bus_ids
    return [f"PD:{i}" for i in ids] + [f"QD:{i}" for i in ids]


def target_labels(case):
    ids = case.bus_ids
    br = range(case.n_branch)
    gens = range(case.n_gen)
    return ([f"PF:{k}" for k in br] + [f"QF:{k}" for k in br] + [f"V:{i}" for i in ids]
            + [f"THETA:{i}" for i in ids] + [f"PG:{g}" for g in gens]
            + [f"QG:{g}" for g in gens] + ["F"])


def label_group(label):
    return label.split(":", 1)[0]


def group_columns(labels):
    """Map each target group to the indices of its columns."""
    out = {}
    for j, lab in enumerate(labels):
        out.setdefault(label_group(lab), []).append(j)
    return {g: np.array(v, dtype=np.intp) for g, v in out.items()}


def solution_row(sol):
    return np.concatenate([sol.pf, sol.qf, sol.state.v, sol.state.theta, sol.pg, sol.qg,
                           [sol.objective]])


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    input_labels: list
    target_labels: list
    signatures: np.ndarray  # bool, one row per sample over the inequality list
    signature_labels: list
    meta: dict = field(default_factory=dict)
    case: object = None

    def __post_init__(self):
        if self.inputs.shape[1] != len(self.input_labels):
            raise ValueError("input labels do not match input width")
        if self.targets.shape[1] != len(self.target_labels):
            raise ValueError("target labels do not match target width")
        if not (len(self.inputs) == len(self.targets) == len(self.signatures)):
            raise ValueError("row counts differ")

    def __len__(self):
        return len(self.inputs)

    @property
    def column_spec(self):
        return {"inputs": list(self.input_labels), "targets": list(self.target_labels)}

    @property
    def scenario_index(self):
        return np.asarray(self.meta.get("scenario_index", range(len(self))), dtype=np.int64)

    def subset(self, rows):
        rows = np.asarray(rows)
        meta = dict(self.meta)
        meta["scenario_index"] = self.scenario_index[rows].tolist()
        return Dataset(self.inputs[rows], self.targets[rows], list(self.input_labels),
                       list(self.target_labels), self.signatures[rows],
                       list(self.signature_labels), meta, self.case)

    def split_by_scenario(self, n_first):
        """Rows from scenarios ``< n_first`` and the remaining rows."""
        idx = self.scenario_index
        return self.subset(np.flatnonzero(idx < n_first)), self.subset(np.flatnonzero(idx >= n_first))


def build_dataset(case, ucfg, n, opf_cfg=None, start=0):
    """Sample ``n`` scenarios and label each with its ACOPF solution.

    Scenarios whose solve fails, or whose solution misses the KKT tolerances,
    are dropped and counted in ``meta["n_failed"]``.
    """
    opf_cfg = opf_cfg or OpfConfig()
    pd_all, qd_all = sample_scenarios(case, ucfg, n, start=start)
    rows, sigs, kept, failed = [], [], [], []
    for k in range(n):
        try:
            sol = solve_acopf(case, pd_all[k], qd_all[k], opf_cfg)
        except OpfError as exc:
            log.debug("scenario %d failed: %s", start + k, exc)
            failed.append(start + k)
            continue
        res = kkt_residuals(sol, case, pd_all[k], qd_all[k])
        if (max(res["primal_eq"], res["primal_ineq"]) > opf_cfg.feas_tol
                or res["complementarity"] > opf_cfg.comp_tol
                or res["dual_feas"] > opf_cfg.dual_tol):
            failed.append(start + k)
            continue
        rows.append(solution_row(sol))
        sigs.append(extract_active_set(sol, case, opf_cfg.active_tol).active)
        kept.append(k)
    if len(failed) > MAX_FAILURE_RATE * n:
        raise TooManyFailures(f"{len(failed)} of {n} scenarios failed to solve")
    kept = np.array(kept, dtype=np.intp)
    ntar = len(target_labels(case))
    nsig = len(inequality_labels(case))
    meta = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "seed": ucfg.seed,
        "case_name": case.name,
        "case_hash": case_hash(case),
        "n_requested": n,
        "n_failed": len(failed),
        "failed_scenarios": failed,
        "scenario_index": (start + kept).tolist(),
        "uncertainty": ucfg.to_dict(),
        "solver": {k: getattr(opf_cfg, k) for k in ("feas_tol", "comp_tol", "dual_tol",
                                                     "active_tol", "max_iter")},
        "generated_at": utc_timestamp(),
    }
    inputs = np.hstack([pd_all[kept], qd_all[kept]]) if len(kept) else np.empty((0, 2 * case.n_bus))
    return Dataset(
        inputs=inputs,
        targets=np.array(rows).reshape(-1, ntar),
        input_labels=input_labels(case),
        target_labels=target_labels(case),
        signatures=np.array(sigs, dtype=bool).reshape(-1, nsig),
        signature_labels=inequality_labels(case),
        meta=meta,
        case=case,
    )


# --------------------------------------------------------------------------
# persistence


def _write_csv(path, header, arr, fmt):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in arr:
            fh.write(",".join(fmt % v for v in row) + "\n")


def _read_csv(path, dtype=float):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=dtype, ndmin=2)
    if data.size == 0:
        data = np.empty((0, len(header)), dtype=dtype)
    return header, data


def save_dataset(ds, directory):
    """Write ``inputs.csv``, ``targets.csv``, ``signatures.csv``, ``meta.json``
    and, when known, ``case.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_csv(d / "inputs.csv", ds.input_labels, ds.inputs, "%.17g")
    _write_csv(d / "targets.csv", ds.target_labels, ds.targets, "%.17g")
    _write_csv(d / "signatures.csv", ds.signature_labels, ds.signatures.astype(np.int8), "%d")
    (d / "meta.json").write_text(json.dumps(ds.meta, indent=1, sort_keys=True) + "\n")
    if ds.case is not None:
        (d / "case.json").write_text(serialize_case(ds.case))
    return d


def load_dataset(directory):
    d = Path(directory)
    try:
        in_labels, inputs = _read_csv(d / "inputs.csv")
        tar_labels, targets = _read_csv(d / "targets.csv")
        sig_labels, sigs = _read_csv(d / "signatures.csv", dtype=np.int8)
        meta = json.loads((d / "meta.json").read_text())
    except (OSError, ValueError) as exc:
        raise MalformedFile(f"cannot read dataset at {d}: {exc}") from None
    case = parse_case((d / "case.json").read_text()) if (d / "case.json").exists() else None
    return Dataset(inputs, targets, in_labels, tar_labels, sigs.astype(bool), sig_labels,
                   meta, case)

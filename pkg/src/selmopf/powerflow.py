"""Full Newton-Raphson AC power flow in polar coordinates (flat start)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import kernels
from .errors import DimensionMismatch, NonConvergence, SingularJacobian
from .grid import StateVector, build_admittance


@dataclass(frozen=True)
class PfConfig:
    tol: float = 1e-8
    max_iter: int = 30

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class PfResult:
    state: StateVector
    p_slack: float
    q_slack: float
    q_gen_bus: np.ndarray  # net reactive injection required at each bus
    iterations: int
    mismatch: float
    history: list = field(default_factory=list)


def _bus_sets(case):
    slack = case.slack
    gen_buses = set(case.gen_bus.tolist())
    pv = np.array(sorted(b for b in gen_buses if b != slack), dtype=np.intp)
    pq = np.array([i for i in range(case.n_bus) if i != slack and i not in gen_buses],
                  dtype=np.intp)
    return slack, pv, pq


def solve_power_flow(case, pd, qd, pg, vm_set, cfg=None, y=None):
    """Solve the AC power flow for given demand and generator setpoints.

    ``pg`` holds one active setpoint per generator (the slack generators'
    entries are ignored); ``vm_set`` holds one voltage per bus, read only at
    the slack bus and at buses with generators, which are treated as PV.
    """
    cfg = cfg or PfConfig()
    n = case.n_bus
    pd = np.asarray(pd, dtype=float)
    qd = np.asarray(qd, dtype=float)
    pg = np.asarray(pg, dtype=float)
    vm_set = np.asarray(vm_set, dtype=float)
    if pd.shape != (n,) or qd.shape != (n,) or vm_set.shape != (n,):
        raise DimensionMismatch("demand and voltage vectors must have one entry per bus")
    if pg.shape != (case.n_gen,):
        raise DimensionMismatch("pg must have one entry per generator")
    if not (np.all(np.isfinite(pd)) and np.all(np.isfinite(qd))):
        raise ValueError("demands must be finite")
    if y is None:
        y = build_admittance(case)

    slack, pv, pq = _bus_sets(case)
    p_spec = case.gen_incidence @ pg - pd
    q_spec = -qd
    vm = np.ones(n)
    va = np.zeros(n)
    fixed_v = np.concatenate([[slack], pv]).astype(np.intp)
    vm[fixed_v] = vm_set[fixed_v]
    pvpq = np.concatenate([pv, pq])
    npvpq = len(pvpq)

    history = []
    it = 0
    while True:
        p, q, dp_da, dp_dv, dq_da, dq_dv = kernels.injection_jacobian(y.g, y.b, vm, va)
        mis = np.concatenate([p[pvpq] - p_spec[pvpq], q[pq] - q_spec[pq]])
        norm = float(np.max(np.abs(mis))) if mis.size else 0.0
        history.append(norm)
        if norm <= cfg.tol:
            break
        if it >= cfg.max_iter or not np.isfinite(norm):
            raise NonConvergence(f"power flow did not converge in {it} iterations "
                                 f"(mismatch {norm:.3e})", mismatch=norm, iterations=it)
        jac = np.block([
            [dp_da[np.ix_(pvpq, pvpq)], dp_dv[np.ix_(pvpq, pq)]],
            [dq_da[np.ix_(pq, pvpq)], dq_dv[np.ix_(pq, pq)]],
        ])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", sla.LinAlgWarning)
                lu = sla.lu_factor(jac, check_finite=True)
            if np.any(np.abs(np.diag(lu[0])) < 1e-14 * max(1.0, np.max(np.abs(jac)))):
                raise sla.LinAlgError("singular")
            dx = sla.lu_solve(lu, -mis)
        except (sla.LinAlgError, sla.LinAlgWarning, ValueError) as exc:
            raise SingularJacobian(f"power-flow Jacobian is singular at iteration {it}") from exc
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        it += 1

    return PfResult(
        state=StateVector(vm, va),
        p_slack=float(p[slack] + pd[slack]),
        q_slack=float(q[slack] + qd[slack]),
        q_gen_bus=q + qd,
        iterations=it,
        mismatch=norm,
        history=history,
    )

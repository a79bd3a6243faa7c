"""AC optimal power flow: primal-dual interior point, KKT residuals, active sets.

Problem (variables ``x = [theta_nonslack, v, pg, qg]``)::

    min  F(pg) / base_mva
    s.t. p(v, theta) - Cg pg + pd = 0          (lam_p, one per bus)
         q(v, theta) - Cg qg + qd = 0          (lam_q, one per bus)
         g(x) <= 0                             (sigma)

The objective is divided by ``base_mva`` so that equality multipliers are
marginal prices in cost units per MWh and every constraint is per unit.

Inequality ordering (fixed per case, also used by active-set signatures)::

    pg - pmax, pmin - pg          (n_gen each)
    qg - qmax, qmin - qg          (n_gen each)
    v - vmax,  vmin - v           (n_bus each)
    pf - rate, -pf - rate         (n_branch each, from-side active flow)
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from . import kernels
from .errors import DimensionMismatch, Infeasible, MaxIterations
from .grid import StateVector, branch_flows, build_admittance

FAMILIES = ("PG_max", "PG_min", "QG_max", "QG_min", "V_max", "V_min", "PF_max", "PF_min")


@dataclass(frozen=True)
class OpfConfig:
    feas_tol: float = 1e-6
    comp_tol: float = 1e-6
    dual_tol: float = 1e-8
    active_tol: float = 1e-5
    # iteration stops once every residual is below these (well inside the
    # tolerances above, so stored solutions survive re-checking)
    stop_feas: float = 1e-10
    stop_stat: float = 1e-9
    stop_comp: float = 1e-10
    max_iter: int = 200
    step_fraction: float = 0.995
    barrier_decrease: float = 0.1
    slack_floor: float = 1.0


@dataclass
class OpfSolution:
    state: StateVector
    pg: np.ndarray
    qg: np.ndarray
    pf: np.ndarray
    qf: np.ndarray
    objective: float
    lam: np.ndarray
    sigma: np.ndarray
    converged: bool = True
    iterations: int = 0
    history: list = field(default_factory=list, repr=False)

    @property
    def lam_p(self):
        return self.lam[: len(self.state.v)]

    @property
    def lam_q(self):
        return self.lam[len(self.state.v):]


@dataclass(frozen=True, eq=False)
class ActiveSetSignature:
    """Bitset over the ordered inequality list."""

    active: np.ndarray

    def __post_init__(self):
        a = np.array(self.active, dtype=bool)
        a.setflags(write=False)
        object.__setattr__(self, "active", a)

    def __eq__(self, other):
        return isinstance(other, ActiveSetSignature) and np.array_equal(self.active, other.active)

    def __hash__(self):
        return hash(self.active.tobytes())

    def __len__(self):
        return len(self.active)

    def __str__(self):
        return "".join("1" if b else "0" for b in self.active)

    @classmethod
    def from_string(cls, bits):
        return cls(np.array([c == "1" for c in bits], dtype=bool))

    def restrict(self, mask):
        return ActiveSetSignature(self.active[np.asarray(mask, dtype=bool)])

    def hamming(self, other):
        return int(np.count_nonzero(self.active != other.active))

    @property
    def indices(self):
        return np.flatnonzero(self.active)


def inequality_labels(case):
    """Labels of the ordered inequality list, e.g. ``"V_max:5"`` (original bus id)."""
    gens = [str(i) for i in range(case.n_gen)]
    buses = [str(b) for b in case.bus_ids]
    branches = [str(k) for k in range(case.n_branch)]
    groups = (gens, gens, gens, gens, buses, buses, branches, branches)
    return [f"{fam}:{e}" for fam, elems in zip(FAMILIES, groups) for e in elems]


def family_mask(case, families):
    """Boolean mask selecting the given inequality families."""
    sizes = _family_sizes(case)
    return np.concatenate([np.full(s, fam in families) for fam, s in zip(FAMILIES, sizes)])


def _family_sizes(case):
    ng, nb, nl = case.n_gen, case.n_bus, case.n_branch
    return (ng, ng, ng, ng, nb, nb, nl, nl)


class _Problem:
    """Structure of the OPF for one case: index maps and constant derivatives."""

    def __init__(self, case):
        self.case = case
        self.y = build_admittance(case)
        n, ng, nl = case.n_bus, case.n_gen, case.n_branch
        self.n, self.ng, self.nl = n, ng, nl
        self.slack = case.slack
        self.ns = np.array([i for i in range(n) if i != self.slack], dtype=np.intp)
        self.nva = n - 1
        self.iva = np.arange(self.nva)
        self.ivm = self.nva + np.arange(n)
        self.ipg = self.nva + n + np.arange(ng)
        self.iqg = self.nva + n + ng + np.arange(ng)
        self.nx = self.nva + n + 2 * ng
        self.niq = 4 * ng + 2 * n + 2 * nl
        # column of each bus angle in x, -1 for the slack
        self.va_col = np.full(n, -1, dtype=np.intp)
        self.va_col[self.ns] = self.iva
        self.cg = np.asarray(case.gen_incidence)
        self.pmin, self.pmax, self.qmin, self.qmax = (np.asarray(a) for a in case.gen_limits)
        self.vmin, self.vmax = np.asarray(case.vmin), np.asarray(case.vmax)
        self.rate = np.asarray(case.flow_limit)
        f, t = case.branch_ends
        self.f = np.ascontiguousarray(f)
        self.t = np.ascontiguousarray(t)
        self.gff = np.ascontiguousarray(self.y.yff.real)
        self.bff = np.ascontiguousarray(self.y.yff.imag)
        self.gft = np.ascontiguousarray(self.y.yft.real)
        self.bft = np.ascontiguousarray(self.y.yft.imag)
        # scaled cost F/base_mva = c2 pg^2 + c1 pg + const, pg per unit
        c = case.cost_coeffs
        self.c2 = c[:, 0] * case.base_mva
        self.c1 = c[:, 1]

        # linear inequality rows
        dg = np.zeros((self.niq, self.nx))
        r = 0
        for cols, sign in ((self.ipg, 1), (self.ipg, -1), (self.iqg, 1), (self.iqg, -1),
                           (self.ivm, 1), (self.ivm, -1)):
            dg[r + np.arange(len(cols)), cols] = sign
            r += len(cols)
        self.r_pf = r
        self.dg_lin = dg
        # branch-flow rows: columns for (theta_f, theta_t, v_f, v_t)
        self.pf_cols = np.stack([self.va_col[self.f], self.va_col[self.t],
                                 self.ivm[self.f], self.ivm[self.t]], axis=1)

    # -- pieces -----------------------------------------------------------
    def split(self, x):
        va = np.zeros(self.n)
        va[self.ns] = x[self.iva]
        return va, np.ascontiguousarray(x[self.ivm]), x[self.ipg], x[self.iqg]

    def pack(self, va, vm, pg, qg):
        return np.concatenate([np.asarray(va)[self.ns], vm, pg, qg])

    def evaluate(self, x, pd, qd):
        va, vm, pg, qg = self.split(x)
        p, q, dp_da, dp_dv, dq_da, dq_dv = kernels.injection_jacobian(self.y.g, self.y.b, vm, va)
        pf, _, dpf = kernels.branch_flows(self.f, self.t, self.gff, self.bff, self.gft,
                                          self.bft, vm, va)
        h = np.concatenate([p - self.cg @ pg + pd, q - self.cg @ qg + qd])
        dh = np.zeros((2 * self.n, self.nx))
        dh[: self.n, self.iva] = dp_da[:, self.ns]
        dh[: self.n, self.ivm] = dp_dv
        dh[: self.n, self.ipg] = -self.cg
        dh[self.n:, self.iva] = dq_da[:, self.ns]
        dh[self.n:, self.ivm] = dq_dv
        dh[self.n:, self.iqg] = -self.cg

        g = np.concatenate([pg - self.pmax, self.pmin - pg, qg - self.qmax, self.qmin - qg,
                            vm - self.vmax, self.vmin - vm, pf - self.rate, -pf - self.rate])
        dg = self.dg_lin.copy()
        rows = self.r_pf + np.arange(self.nl)
        for k in range(4):
            cols = self.pf_cols[:, k]
            ok = cols >= 0
            dg[rows[ok], cols[ok]] += dpf[ok, k]
            dg[rows[ok] + self.nl, cols[ok]] -= dpf[ok, k]

        df = np.zeros(self.nx)
        df[self.ipg] = 2.0 * self.c2 * pg + self.c1
        return h, dh, g, dg, df, pf

    def hessian(self, x, lam, mu):
        va, vm, _, _ = self.split(x)
        n = self.n
        haa, hav, hvv = kernels.injection_hessian(self.y.g, self.y.b, vm, va,
                                                  np.ascontiguousarray(lam[:n]),
                                                  np.ascontiguousarray(lam[n:]))
        w = np.ascontiguousarray(mu[self.r_pf:self.r_pf + self.nl]
                                 - mu[self.r_pf + self.nl:self.r_pf + 2 * self.nl])
        baa, bav, bvv = kernels.branch_hessian(self.f, self.t, self.gff, self.gft, self.bft,
                                               vm, va, w, n)
        haa += baa
        hav += bav
        hvv += bvv
        hxx = np.zeros((self.nx, self.nx))
        ns = self.ns
        hxx[np.ix_(self.iva, self.iva)] = haa[np.ix_(ns, ns)]
        hxx[np.ix_(self.iva, self.ivm)] = hav[ns, :]
        hxx[np.ix_(self.ivm, self.iva)] = hav[ns, :].T
        hxx[np.ix_(self.ivm, self.ivm)] = hvv
        hxx[self.ipg, self.ipg] += 2.0 * self.c2
        return hxx


@lru_cache(maxsize=16)
def _problem_for(case):
    return _Problem(case)


def _demand(case, pd, qd):
    pd = np.asarray(case.pd if pd is None else pd, dtype=float)
    qd = np.asarray(case.qd if qd is None else qd, dtype=float)
    if pd.shape != (case.n_bus,) or qd.shape != (case.n_bus,):
        raise DimensionMismatch("demand vectors must have one entry per bus")
    if not (np.all(np.isfinite(pd)) and np.all(np.isfinite(qd))):
        raise ValueError("demands must be finite")
    return pd, qd


def _residuals(prob, h, g, lx, lam, mu):
    return {
        "stationarity": float(np.max(np.abs(lx))) if lx.size else 0.0,
        "primal_eq": float(np.max(np.abs(h))) if h.size else 0.0,
        "primal_ineq": float(max(np.max(g), 0.0)) if g.size else 0.0,
        "complementarity": float(np.max(np.abs(mu * g))) if g.size else 0.0,
        "dual_feas": float(max(np.max(-mu), 0.0)) if mu.size else 0.0,
    }


def solve_acopf(case, pd=None, qd=None, cfg=None):
    """Solve the AC OPF for the given bus demands (per unit).

    Raises :class:`Infeasible` when generation cannot cover demand or the
    iterates never become feasible, :class:`MaxIterations` when feasible but
    not converged within ``cfg.max_iter`` iterations.
    """
    cfg = cfg or OpfConfig()
    pd, qd = _demand(case, pd, qd)
    prob = _problem_for(case)
    if np.sum(prob.pmax) < np.sum(pd):
        raise Infeasible("total pmax below total demand", {"primal_eq": float(np.sum(pd) - np.sum(prob.pmax))})

    vm0 = np.clip(np.ones(prob.n), prob.vmin, prob.vmax)
    x = prob.pack(np.zeros(prob.n), vm0, 0.5 * (prob.pmin + prob.pmax),
                  0.5 * (prob.qmin + prob.qmax))
    h, dh, g, dg, df, _ = prob.evaluate(x, pd, qd)
    z = np.maximum(-g, cfg.slack_floor)
    mu = np.ones(prob.niq)
    lam = np.zeros(2 * prob.n)
    gamma = 1.0
    history = []
    nx = prob.nx
    neq = 2 * prob.n
    kkt = np.zeros((nx + neq, nx + neq))
    rhs = np.empty(nx + neq)

    it = 0
    while True:
        lx = df + dh.T @ lam + dg.T @ mu
        res = _residuals(prob, h, g, lx, lam, mu)
        history.append(res)
        if (res["primal_eq"] <= cfg.stop_feas and res["primal_ineq"] <= cfg.stop_feas
                and res["stationarity"] <= cfg.stop_stat
                and res["complementarity"] <= cfg.stop_comp):
            break
        if it >= cfg.max_iter or not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e8:
            feas = max(res["primal_eq"], res["primal_ineq"])
            err = Infeasible if (feas > cfg.feas_tol or not np.all(np.isfinite(x))) else MaxIterations
            raise err(f"interior point stopped after {it} iterations", res, it)

        hxx = prob.hessian(x, lam, mu)
        zinv = 1.0 / z
        # a diverging barrier overflows here; the non-finite system is caught below
        with np.errstate(over="ignore", invalid="ignore"):
            dg_z = dg.T * (mu * zinv)
            kkt[:nx, :nx] = hxx + dg_z @ dg
            rhs[:nx] = -(lx + dg.T @ (zinv * (mu * g + gamma)))
        kkt[:nx, nx:] = dh.T
        kkt[nx:, :nx] = dh
        kkt[nx:, nx:] = 0.0
        rhs[nx:] = -h
        if not (np.all(np.isfinite(kkt)) and np.all(np.isfinite(rhs))):
            raise Infeasible(f"barrier diverged at iteration {it}", res, it)
        try:
            with warnings.catch_warnings():
                # degenerate reactive/voltage directions make the system
                # ill-conditioned on lossless networks; the step is still usable
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                sol = sla.solve(kkt, rhs, check_finite=False)
        except (sla.LinAlgError, ValueError):
            raise Infeasible(f"singular KKT system at iteration {it}", res, it) from None
        dx = sol[:nx]
        dlam = sol[nx:]
        dz = -g - z - dg @ dx
        dmu = -mu + zinv * (gamma - mu * dz)

        tau = cfg.step_fraction
        neg = dz < 0
        alpha_p = min(1.0, tau * np.min(-z[neg] / dz[neg])) if np.any(neg) else 1.0
        neg = dmu < 0
        alpha_d = min(1.0, tau * np.min(-mu[neg] / dmu[neg])) if np.any(neg) else 1.0

        x = x + alpha_p * dx
        z = z + alpha_p * dz
        lam = lam + alpha_d * dlam
        mu = mu + alpha_d * dmu
        gamma = cfg.barrier_decrease * float(z @ mu) / prob.niq
        h, dh, g, dg, df, _ = prob.evaluate(x, pd, qd)
        it += 1

    va, vm, pg, qg = prob.split(x)
    state = StateVector(vm.copy(), va)
    pf, qf = branch_flows(state, case, prob.y)
    return OpfSolution(state=state, pg=pg.copy(), qg=qg.copy(), pf=pf, qf=qf,
                       objective=case.objective(pg), lam=lam, sigma=mu,
                       converged=True, iterations=it, history=history)


def _check_dims(sol, case):
    if (sol.state.v.shape != (case.n_bus,) or sol.pg.shape != (case.n_gen,)
            or sol.qg.shape != (case.n_gen,)):
        raise DimensionMismatch("solution does not match the case")


def inequality_values(case, sol):
    """``g(X)`` at a solution, in the documented order (per unit)."""
    _check_dims(sol, case)
    prob = _problem_for(case)
    pf, _ = branch_flows(sol.state, case, prob.y)
    vm = sol.state.v
    return np.concatenate([sol.pg - prob.pmax, prob.pmin - sol.pg, sol.qg - prob.qmax,
                           prob.qmin - sol.qg, vm - prob.vmax, prob.vmin - vm,
                           pf - prob.rate, -pf - prob.rate])


def kkt_residuals(sol, case, pd=None, qd=None):
    """Infinity norms of stationarity, feasibility, complementarity and dual sign."""
    _check_dims(sol, case)
    pd, qd = _demand(case, pd, qd)
    prob = _problem_for(case)
    lam = np.asarray(sol.lam, dtype=float)
    sigma = np.asarray(sol.sigma, dtype=float)
    if lam.shape != (2 * prob.n,) or sigma.shape != (prob.niq,):
        raise DimensionMismatch("dual vectors do not match the case")
    x = prob.pack(sol.state.theta, sol.state.v, sol.pg, sol.qg)
    h, dh, g, dg, df, _ = prob.evaluate(x, pd, qd)
    lx = df + dh.T @ lam + dg.T @ sigma
    return _residuals(prob, h, g, lx, lam, sigma)


def extract_active_set(sol, case, active_tol=1e-5):
    """Signature with bit ``j`` set iff ``|g_j(X)| <= active_tol``."""
    g = inequality_values(case, sol)
    return ActiveSetSignature(np.abs(g) <= active_tol)

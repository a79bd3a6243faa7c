"""Network physics shared by power flow, OPF and the stage-error checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatch, SingularBranch


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Dense bus admittance ``g + jb`` plus per-branch pi-model entries."""

    g: np.ndarray
    b: np.ndarray
    yff: np.ndarray
    yft: np.ndarray
    ytf: np.ndarray
    ytt: np.ndarray

    @property
    def n_bus(self):
        return self.g.shape[0]


@dataclass(frozen=True)
class StateVector:
    v: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        if self.v.shape != self.theta.shape:
            raise DimensionMismatch(f"v has shape {self.v.shape}, theta {self.theta.shape}")

    @classmethod
    def flat(cls, n):
        return cls(np.ones(n), np.zeros(n))


def build_admittance(case):
    """Y-bus with series ``1/(r+jx)``, split charging, from-side taps and shunts."""
    n = case.n_bus
    nl = case.n_branch
    y = np.zeros((n, n), dtype=complex)
    yff = np.empty(nl, dtype=complex)
    yft = np.empty(nl, dtype=complex)
    ytf = np.empty(nl, dtype=complex)
    ytt = np.empty(nl, dtype=complex)
    for k, br in enumerate(case.branches):
        if br.r == 0 and br.x == 0:
            raise SingularBranch(f"branch {k} has zero impedance")
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b_charge
        tap = br.tap
        ytt[k] = ys + ysh
        yff[k] = ytt[k] / (tap * tap)
        yft[k] = -ys / tap
        ytf[k] = -ys / tap
        y[br.f, br.f] += yff[k]
        y[br.f, br.t] += yft[k]
        y[br.t, br.f] += ytf[k]
        y[br.t, br.t] += ytt[k]
    for i, bus in enumerate(case.buses):
        y[i, i] += complex(bus.gs, bus.bs)
    return AdmittanceMatrix(np.ascontiguousarray(y.real), np.ascontiguousarray(y.imag),
                            yff, yft, ytf, ytt)


def _check_state(state, n):
    if state.v.shape != (n,):
        raise DimensionMismatch(f"state has {state.v.shape[0]} buses, network has {n}")


def power_injections(state, y):
    """Net nodal injections ``(p, q)`` in per unit."""
    _check_state(state, y.n_bus)
    return kernels.injections(y.g, y.b, np.ascontiguousarray(state.v),
                              np.ascontiguousarray(state.theta))


def branch_power(state, case, y=None):
    """Complex from-side and to-side power entering each branch."""
    if y is None:
        y = build_admittance(case)
    _check_state(state, case.n_bus)
    f, t = case.branch_ends
    v = state.v * np.exp(1j * state.theta)
    vf = v[f]
    vt = v[t]
    sf = vf * np.conj(y.yff * vf + y.yft * vt)
    st = vt * np.conj(y.ytf * vf + y.ytt * vt)
    return sf, st


def branch_flows(state, case, y=None):
    """From-side ``(pf, qf)`` per branch; positive when leaving the from bus."""
    if y is None:
        y = build_admittance(case)
    _check_state(state, case.n_bus)
    f, t = case.branch_ends
    pf, qf, _ = kernels.branch_flows(
        np.ascontiguousarray(f), np.ascontiguousarray(t),
        np.ascontiguousarray(y.yff.real), np.ascontiguousarray(y.yff.imag),
        np.ascontiguousarray(y.yft.real), np.ascontiguousarray(y.yft.imag),
        np.ascontiguousarray(state.v), np.ascontiguousarray(state.theta))
    return pf, qf


def shunt_power(state, case):
    """Complex power absorbed by bus shunts."""
    ysh = np.array([complex(b.gs, -b.bs) for b in case.buses])
    return ysh * state.v * state.v

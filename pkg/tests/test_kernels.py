"""Analytic derivatives against finite differences, and backend agreement."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from selmopf import _kernels_py, kernels
from selmopf.grid import build_admittance

from conftest import random_state

EPS = 1e-6


def _net(case):
    y = build_admittance(case)
    f, t = case.branch_ends
    return y, np.ascontiguousarray(f), np.ascontiguousarray(t)


def _flow_args(case, y, f, t, vm, va):
    return (f, t, y.yff.real.copy(), y.yff.imag.copy(), y.yft.real.copy(), y.yft.imag.copy(),
            vm, va)


def test_injection_jacobian_by_central_differences(any_case):
    y, _, _ = _net(any_case)
    vm, va = random_state(any_case, np.random.default_rng(0))
    _, _, dp_da, dp_dv, dq_da, dq_dv = _kernels_py.injection_jacobian(y.g, y.b, vm, va)
    n = any_case.n_bus
    for j in range(n):
        e = np.zeros(n)
        e[j] = EPS
        pa, qa = _kernels_py.injections(y.g, y.b, vm, va + e)
        pb, qb = _kernels_py.injections(y.g, y.b, vm, va - e)
        np.testing.assert_allclose(dp_da[:, j], (pa - pb) / (2 * EPS), atol=1e-7)
        np.testing.assert_allclose(dq_da[:, j], (qa - qb) / (2 * EPS), atol=1e-7)
        pa, qa = _kernels_py.injections(y.g, y.b, vm + e, va)
        pb, qb = _kernels_py.injections(y.g, y.b, vm - e, va)
        np.testing.assert_allclose(dp_dv[:, j], (pa - pb) / (2 * EPS), atol=1e-7)
        np.testing.assert_allclose(dq_dv[:, j], (qa - qb) / (2 * EPS), atol=1e-7)


def test_injection_hessian_by_differencing_the_jacobian(any_case):
    y, _, _ = _net(any_case)
    rng = np.random.default_rng(1)
    vm, va = random_state(any_case, rng)
    n = any_case.n_bus
    lp, lq = rng.normal(size=n), rng.normal(size=n)
    h_aa, h_av, h_vv = _kernels_py.injection_hessian(y.g, y.b, vm, va, lp, lq)

    def grad(vm_, va_):
        _, _, pa, pv, qa, qv = _kernels_py.injection_jacobian(y.g, y.b, vm_, va_)
        return lp @ pa + lq @ qa, lp @ pv + lq @ qv

    for j in range(n):
        e = np.zeros(n)
        e[j] = EPS
        ga1, gv1 = grad(vm, va + e)
        ga0, gv0 = grad(vm, va - e)
        np.testing.assert_allclose(h_aa[:, j], (ga1 - ga0) / (2 * EPS), atol=1e-6)
        np.testing.assert_allclose(h_av[j, :], (gv1 - gv0) / (2 * EPS), atol=1e-6)
        ga1, gv1 = grad(vm + e, va)
        ga0, gv0 = grad(vm - e, va)
        np.testing.assert_allclose(h_vv[:, j], (gv1 - gv0) / (2 * EPS), atol=1e-6)


def test_branch_flow_partials_and_hessian(any_case):
    y, f, t = _net(any_case)
    rng = np.random.default_rng(2)
    vm, va = random_state(any_case, rng)
    n = any_case.n_bus
    args = _flow_args(any_case, y, f, t, vm, va)
    pf, _, dpf = _kernels_py.branch_flows(*args)
    w = rng.normal(size=len(f))

    def flows(vm_, va_):
        return _kernels_py.branch_flows(*args[:6], vm_, va_)

    # partials w.r.t. (theta_f, theta_t, v_f, v_t), one branch at a time
    for k in range(len(f)):
        for col, (which, bus) in enumerate([("a", f[k]), ("a", t[k]), ("v", f[k]), ("v", t[k])]):
            e = np.zeros(n)
            e[bus] = EPS
            if which == "a":
                hi, lo = flows(vm, va + e)[0][k], flows(vm, va - e)[0][k]
            else:
                hi, lo = flows(vm + e, va)[0][k], flows(vm - e, va)[0][k]
            assert dpf[k, col] == pytest.approx((hi - lo) / (2 * EPS), abs=1e-7)

    h_aa, h_av, h_vv = _kernels_py.branch_hessian(f, t, y.yff.real.copy(), y.yft.real.copy(),
                                                  y.yft.imag.copy(), vm, va, w, n)

    def grad(vm_, va_):
        _, _, d = flows(vm_, va_)
        ga = np.zeros(n)
        gv = np.zeros(n)
        np.add.at(ga, f, w * d[:, 0])
        np.add.at(ga, t, w * d[:, 1])
        np.add.at(gv, f, w * d[:, 2])
        np.add.at(gv, t, w * d[:, 3])
        return ga, gv

    for j in range(n):
        e = np.zeros(n)
        e[j] = EPS
        ga1, gv1 = grad(vm, va + e)
        ga0, gv0 = grad(vm, va - e)
        np.testing.assert_allclose(h_aa[:, j], (ga1 - ga0) / (2 * EPS), atol=1e-6)
        np.testing.assert_allclose(h_av[j, :], (gv1 - gv0) / (2 * EPS), atol=1e-6)
        ga1, gv1 = grad(vm + e, va)
        ga0, gv0 = grad(vm - e, va)
        np.testing.assert_allclose(h_vv[:, j], (gv1 - gv0) / (2 * EPS), atol=1e-6)


compiled = pytest.mark.skipif("cython" not in kernels.backends(),
                              reason="compiled extension not built")


@compiled
def test_backends_agree(any_case):
    cy = kernels.backends()["cython"]
    py = _kernels_py
    y, f, t = _net(any_case)
    rng = np.random.default_rng(4)
    vm, va = random_state(any_case, rng)
    n = any_case.n_bus
    lp, lq = rng.normal(size=n), rng.normal(size=n)
    w = rng.normal(size=len(f))
    pairs = [
        (cy.injections(y.g, y.b, vm, va), py.injections(y.g, y.b, vm, va)),
        (cy.injection_jacobian(y.g, y.b, vm, va), py.injection_jacobian(y.g, y.b, vm, va)),
        (cy.injection_hessian(y.g, y.b, vm, va, lp, lq),
         py.injection_hessian(y.g, y.b, vm, va, lp, lq)),
        (cy.branch_flows(*_flow_args(any_case, y, f, t, vm, va)),
         py.branch_flows(*_flow_args(any_case, y, f, t, vm, va))),
    ]
    hargs = (f, t, y.yff.real.copy(), y.yft.real.copy(), y.yft.imag.copy(), vm, va, w, n)
    pairs.append((cy.branch_hessian(*hargs), py.branch_hessian(*hargs)))
    for a, b in pairs:
        for x, z in zip(a, b):
            np.testing.assert_allclose(x, z, rtol=1e-12, atol=1e-12)


def test_selected_backend_is_reported():
    assert kernels.BACKEND in kernels.backends()


SOLVE = ("import json; from selmopf.kernels import BACKEND; from selmopf.acopf import solve_acopf;"
         "from selmopf.case_io import load_case; s = solve_acopf(load_case('case14'));"
         "print(json.dumps([BACKEND, s.objective, s.pg.tolist()]))")


def test_forced_fallback_solves_the_same_opf():
    out = {}
    for flag in ("0", "1"):
        env = {**os.environ, "SELMOPF_PURE_PYTHON": flag}
        res = subprocess.run([sys.executable, "-c", SOLVE], env=env, capture_output=True,
                             text=True, check=True)
        backend, obj, pg = json.loads(res.stdout)
        out[flag] = (backend, obj, np.array(pg))
    assert out["1"][0] == "python"
    assert out["1"][1] == pytest.approx(out["0"][1], rel=1e-9)
    np.testing.assert_allclose(out["1"][2], out["0"][2], atol=1e-7)

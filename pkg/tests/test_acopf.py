import numpy as np
import pytest
from dataclasses import replace

from selmopf.acopf import (FAMILIES, ActiveSetSignature, OpfConfig, OpfSolution, _problem_for,
                           extract_active_set, family_mask, inequality_labels, inequality_values,
                           kkt_residuals, solve_acopf)
from selmopf.case_io import Branch, Bus, Gen
from selmopf.errors import DimensionMismatch, Infeasible, MaxIterations
from selmopf.grid import StateVector, branch_flows
from selmopf.powerflow import solve_power_flow

from conftest import make_case, random_state, single_bus_case
from oracles import case3_demand_grid, grid_search_case3


def test_single_bus_balance_fixes_dispatch():
    case = single_bus_case(pd=0.5, cost=(0.0, 40.0, 0.0))
    sol = solve_acopf(case)
    assert sol.pg[0] == pytest.approx(0.5, abs=1e-8)
    assert sol.objective == pytest.approx(40 * 50, rel=1e-8)


def symmetric_case():
    buses = [Bus(1, "slack", 0, 0, 0.95, 1.05), Bus(2, "pv", 0, 0, 0.95, 1.05),
             Bus(3, "pq", 1.2, 0.3, 0.95, 1.05)]
    branches = [Branch(0, 2, 0.01, 0.1, 0.02, 1.0, 2.0), Branch(1, 2, 0.01, 0.1, 0.02, 1.0, 2.0)]
    cost = (0.02, 30.0, 0.0)
    gens = [Gen(0, 0, 2, -1, 1, cost), Gen(1, 0, 2, -1, 1, cost)]
    return make_case(buses, branches, gens, name="symmetric")


def test_identical_units_share_load_equally():
    sol = solve_acopf(symmetric_case())
    assert sol.pg[0] == pytest.approx(sol.pg[1], abs=1e-6)
    assert sol.qg[0] == pytest.approx(sol.qg[1], abs=1e-6)


@pytest.mark.parametrize("k", [0, 6, 12, 18, 24])
def test_matches_grid_search_on_three_bus(case3, k):
    pd, qd = case3_demand_grid(case3)[k]
    ref, ref_pg = grid_search_case3(case3, pd, qd)
    sol = solve_acopf(case3, pd, qd)
    assert sol.objective == pytest.approx(ref, abs=1e-3)
    assert sol.objective == pytest.approx(ref, rel=1e-3)
    np.testing.assert_allclose(sol.pg, ref_pg, atol=2e-4)


def test_line_limit_binds_on_three_bus(case3):
    sol = solve_acopf(case3)
    sig = extract_active_set(sol, case3)
    labels = inequality_labels(case3)
    assert labels[sig.indices[0]] == "PF_max:0" or "PF_max:0" in [labels[i] for i in sig.indices]
    assert sol.pf[0] == pytest.approx(0.8, abs=1e-8)


def test_outputs_are_self_consistent(any_case):
    sol = solve_acopf(any_case)
    assert sol.objective == pytest.approx(any_case.objective(sol.pg), rel=1e-12)
    pf, qf = branch_flows(sol.state, any_case)
    np.testing.assert_allclose(sol.pf, pf, atol=1e-10)
    np.testing.assert_allclose(sol.qf, qf, atol=1e-10)
    assert sol.state.theta[any_case.slack] == 0.0


def test_default_solutions_satisfy_kkt(any_case):
    sol = solve_acopf(any_case)
    res = kkt_residuals(sol, any_case)
    assert max(res.values()) <= 1e-6
    assert np.all(sol.sigma >= -1e-8)
    g = inequality_values(any_case, sol)
    assert np.max(np.abs(sol.sigma * g)) <= 1e-6
    assert np.max(g) <= 1e-6


def test_voltage_perturbation_breaks_balance(case9):
    sol = solve_acopf(case9)
    v = sol.state.v.copy()
    v[4] += 0.01
    bad = replace(sol, state=StateVector(v, sol.state.theta))
    assert kkt_residuals(bad, case9)["primal_eq"] > 1e-3


def test_zero_duals_raise_stationarity(case3):
    sol = solve_acopf(case3)
    base = kkt_residuals(sol, case3)
    res = kkt_residuals(replace(sol, sigma=np.zeros_like(sol.sigma)), case3)
    assert res["complementarity"] == 0.0
    assert res["stationarity"] > base["stationarity"] + 1e-3


def test_power_flow_reproduces_opf_state(any_case):
    sol = solve_acopf(any_case)
    res = solve_power_flow(any_case, any_case.pd, any_case.qd, sol.pg, sol.state.v)
    np.testing.assert_allclose(res.state.v, sol.state.v, atol=1e-6)
    np.testing.assert_allclose(res.state.theta, sol.state.theta, atol=1e-6)


def test_objective_never_falls_as_demand_grows(two_bus):
    objs = [solve_acopf(two_bus, two_bus.pd * s, two_bus.qd * s).objective
            for s in np.linspace(0.2, 1.6, 8)]
    assert all(b >= a for a, b in zip(objs, objs[1:]))


def test_infeasible_when_capacity_short(two_bus):
    with pytest.raises(Infeasible) as info:
        solve_acopf(two_bus, two_bus.pd * 10, two_bus.qd)
    assert "primal_eq" in info.value.residuals


def test_infeasible_when_line_cannot_carry_load():
    case = make_case([Bus(1, "slack", 0, 0, 0.9, 1.1), Bus(2, "pq", 0.5, 0.1, 0.9, 1.1)],
                     [Branch(0, 1, 0.0, 0.1, 0.0, 1.0, 0.3)],
                     [Gen(0, 0, 2, -1, 1, (0, 10, 0))])
    with pytest.raises(Infeasible):
        solve_acopf(case)


def test_iteration_budget(case9):
    # the first iterate already satisfies the balance to tolerance only late,
    # so probe budgets until the solver stops on a feasible point
    raised = set()
    for budget in range(1, 40):
        try:
            solve_acopf(case9, cfg=OpfConfig(max_iter=budget))
            break
        except (Infeasible, MaxIterations) as exc:
            raised.add(type(exc))
            assert exc.iterations == budget
    assert MaxIterations in raised


def test_dimension_checks(case9, case3):
    sol = solve_acopf(case3)
    with pytest.raises(DimensionMismatch):
        kkt_residuals(sol, case9)
    with pytest.raises(DimensionMismatch):
        solve_acopf(case3, np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        solve_acopf(case3, np.array([0, np.inf, 0]), np.zeros(3))


# -- active sets ---------------------------------------------------------------

def _manual_solution(case, v, pg, qg):
    n = case.n_bus
    state = StateVector(np.full(n, v), np.zeros(n))
    pf, qf = branch_flows(state, case)
    niq = 4 * case.n_gen + 2 * n + 2 * case.n_branch
    return OpfSolution(state, np.array(pg), np.array(qg), pf, qf, case.objective(np.array(pg)),
                       np.zeros(2 * n), np.zeros(niq))


def test_generator_at_upper_limit_is_active():
    case = single_bus_case(pd=0.5)
    sol = _manual_solution(case, 1.0, [2.0], [0.0])
    sig = extract_active_set(sol, case)
    assert sig.active[0] and sig.active.sum() == 1


def test_interior_solution_has_empty_set():
    case = single_bus_case(pd=0.5)
    sig = extract_active_set(_manual_solution(case, 1.0, [0.5], [0.0]), case)
    assert not sig.active.any()


@pytest.mark.parametrize("gap,expected", [(0.5, True), (2.0, False)])
def test_threshold_definition(gap, expected):
    case = single_bus_case(pd=0.5)
    tol = 1e-5
    sol = _manual_solution(case, 1.1 - gap * tol, [0.5], [0.0])
    labels = inequality_labels(case)
    sig = extract_active_set(sol, case, active_tol=tol)
    assert sig.active[labels.index("V_max:1")] == expected


def test_signature_layout(case9):
    labels = inequality_labels(case9)
    assert len(labels) == 4 * case9.n_gen + 2 * case9.n_bus + 2 * case9.n_branch
    assert [lab.split(":")[0] for lab in labels[::1]][0] == "PG_max"
    mask = family_mask(case9, ("V_max", "V_min"))
    assert mask.sum() == 2 * case9.n_bus
    assert all(labels[i].startswith("V_") for i in np.flatnonzero(mask))
    assert set(lab.split(":")[0] for lab in labels) == set(FAMILIES)


def test_signature_value_semantics():
    a = ActiveSetSignature.from_string("0110")
    b = ActiveSetSignature(np.array([0, 1, 1, 0]))
    assert a == b and hash(a) == hash(b) and str(a) == "0110"
    assert a.hamming(ActiveSetSignature.from_string("1111")) == 2
    assert str(a.restrict([True, True, False, False])) == "01"
    with pytest.raises(ValueError):
        a.active[0] = True


# -- derivative checks on the problem assembly ---------------------------------

def test_constraint_jacobians_and_lagrangian_hessian(case14):
    prob = _problem_for(case14)
    rng = np.random.default_rng(7)
    v, th = random_state(case14, rng)
    x = prob.pack(th, v, rng.uniform(0, 1, prob.ng), rng.uniform(-0.2, 0.2, prob.ng))
    pd, qd = case14.pd, case14.qd
    lam = rng.normal(size=2 * prob.n)
    mu = rng.uniform(0, 1, prob.niq)
    h, dh, g, dg, df, _ = prob.evaluate(x, pd, qd)
    eps = 1e-6

    def grad_l(x_):
        _, dh_, _, dg_, df_, _ = prob.evaluate(x_, pd, qd)
        return df_ + dh_.T @ lam + dg_.T @ mu

    hxx = prob.hessian(x, lam, mu)
    for j in range(prob.nx):
        e = np.zeros(prob.nx)
        e[j] = eps
        h1, _, g1, _, _, _ = prob.evaluate(x + e, pd, qd)
        h0, _, g0, _, _, _ = prob.evaluate(x - e, pd, qd)
        np.testing.assert_allclose(dh[:, j], (h1 - h0) / (2 * eps), atol=1e-6)
        np.testing.assert_allclose(dg[:, j], (g1 - g0) / (2 * eps), atol=1e-6)
        np.testing.assert_allclose(hxx[:, j], (grad_l(x + e) - grad_l(x - e)) / (2 * eps),
                                   atol=1e-5)

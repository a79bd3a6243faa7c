import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selmopf.case_io import Branch, Bus, Gen
from selmopf.errors import DimensionMismatch, SingularBranch
from selmopf.grid import (StateVector, branch_flows, branch_power, build_admittance,
                          power_injections, shunt_power)

from conftest import make_case, random_state


def two_bus_line(r=0.0, x=0.1, b=0.0, tap=1.0):
    return make_case(
        [Bus(1, "slack", 0, 0, 0.9, 1.1), Bus(2, "pq", 0.5, 0.2, 0.9, 1.1)],
        [Branch(0, 1, r, x, b, tap, 1.0)],
        [Gen(0, 0, 2, -1, 1, (0, 40, 0))])


def test_single_reactive_line(two_bus):
    y = build_admittance(two_bus)
    assert np.all(y.g == 0)
    np.testing.assert_allclose(y.b, [[-10, 10], [10, -10]], rtol=0, atol=1e-14)


def test_shunt_only_bus():
    case = make_case([Bus(1, "slack", 0, 0, 0.9, 1.1, 0.0, 0.05)], [],
                     [Gen(0, 0, 1, -1, 1, (0, 1, 0))])
    y = build_admittance(case)
    assert y.b.tolist() == [[0.05]] and y.g.tolist() == [[0.0]]


def test_three_bus_matches_hand_matrix(case3):
    y = build_admittance(case3)
    b12, b23 = 1 / 0.1, 1 / 0.12
    hand = np.array([[-b12, b12, 0], [b12, -b12 - b23, b23], [0, b23, -b23]])
    np.testing.assert_allclose(y.b, hand, rtol=0, atol=1e-12)
    assert np.all(y.g == 0)


def test_tapped_line_with_charging_by_hand():
    # y = 1/(0.01 + 0.1j) = (0.01 - 0.1j) / 0.0101
    gs, bs = 0.01 / 0.0101, -0.1 / 0.0101
    tap, half = 0.95, 0.01
    y = build_admittance(two_bus_line(r=0.01, b=0.02, tap=tap))
    np.testing.assert_allclose(y.g, [[gs / tap**2, -gs / tap], [-gs / tap, gs]], atol=1e-12)
    np.testing.assert_allclose(y.b, [[(bs + half) / tap**2, -bs / tap], [-bs / tap, bs + half]],
                               atol=1e-12)


def test_zero_impedance_branch_rejected():
    case = two_bus_line()
    bad = make_case(case.buses, [Branch(0, 1, 0.0, 0.0, 0.0, 1.0, 1.0)], case.gens)
    with pytest.raises(SingularBranch):
        build_admittance(bad)


def test_symmetric_and_sparse_without_taps(any_case):
    y = build_admittance(any_case)
    if all(br.tap == 1.0 for br in any_case.branches):
        np.testing.assert_array_equal(y.b, y.b.T)
        np.testing.assert_array_equal(y.g, y.g.T)
    adjacent = np.eye(any_case.n_bus, dtype=bool)
    for br in any_case.branches:
        adjacent[br.f, br.t] = adjacent[br.t, br.f] = True
    assert np.all(y.g[~adjacent] == 0) and np.all(y.b[~adjacent] == 0)


def test_row_sums_of_untapped_series_part():
    case = two_bus_line(r=0.02, x=0.2)
    y = build_admittance(case)
    np.testing.assert_allclose(y.g.sum(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(y.b.sum(axis=1), 0, atol=1e-12)


def test_flat_state_lossless_has_no_active_injection(case3):
    p, q = power_injections(StateVector.flat(3), build_admittance(case3))
    np.testing.assert_allclose(p, 0, atol=1e-15)


def test_flat_state_reactive_is_negated_row_sum(any_case):
    y = build_admittance(any_case)
    _, q = power_injections(StateVector.flat(any_case.n_bus), y)
    np.testing.assert_allclose(q, -y.b.sum(axis=1), atol=1e-12)


def test_two_bus_angle_example(two_bus):
    p, _ = power_injections(StateVector([1, 1], [0, -0.1]), build_admittance(two_bus))
    assert p[0] == pytest.approx(10 * np.sin(0.1), abs=1e-14)
    assert p[0] == pytest.approx(0.99833, abs=1e-5)


def test_dimension_mismatch(two_bus):
    with pytest.raises(DimensionMismatch):
        power_injections(StateVector.flat(3), build_admittance(two_bus))
    with pytest.raises(DimensionMismatch):
        StateVector([1, 1], [0])


def test_equal_endpoints_carry_no_flow(case3):
    pf, qf = branch_flows(StateVector([1.02] * 3, [0.1] * 3), case3)
    np.testing.assert_allclose(pf, 0, atol=1e-14)
    np.testing.assert_allclose(qf, 0, atol=1e-14)


def test_two_bus_loss_is_current_squared_times_r():
    r, x = 0.02, 0.1
    case = two_bus_line(r=r, x=x)
    v = np.array([1.03, 0.97])
    th = np.array([0.0, -0.08])
    pf, _ = branch_flows(StateVector(v, th), case)
    _, st_ = branch_power(StateVector(v, th), case)
    u = v * np.exp(1j * th)
    current = (u[0] - u[1]) / complex(r, x)
    assert pf[0] + st_[0].real == pytest.approx(abs(current) ** 2 * r, rel=1e-12)


def test_flow_reduces_to_bare_line_formula():
    # no charging, unit tap: pf = -V_i^2 G_ij + V_i V_j (G_ij cos + B_ij sin)
    case = two_bus_line(r=0.03, x=0.15)
    y = build_admittance(case)
    v = np.array([1.01, 0.96])
    th = np.array([0.0, -0.12])
    pf, _ = branch_flows(StateVector(v, th), case)
    g, b = y.g[0, 1], y.b[0, 1]
    d = th[0] - th[1]
    bare = -v[0] ** 2 * g + v[0] * v[1] * (g * np.cos(d) + b * np.sin(d))
    assert pf[0] == pytest.approx(bare, rel=1e-13)


def test_kernel_flows_match_complex_arithmetic(any_case):
    rng = np.random.default_rng(3)
    v, th = random_state(any_case, rng)
    state = StateVector(v, th)
    pf, qf = branch_flows(state, any_case)
    sf, _ = branch_power(state, any_case)
    np.testing.assert_allclose(pf, sf.real, atol=1e-12)
    np.testing.assert_allclose(qf, sf.imag, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), name=st.sampled_from(["case3", "case9", "case14"]))
def test_conservation_on_random_states(seed, name, request):
    case = request.getfixturevalue(name)
    v, th = random_state(case, np.random.default_rng(seed))
    state = StateVector(v, th)
    y = build_admittance(case)
    p, q = power_injections(state, y)
    sf, st_ = branch_power(state, case, y)
    sh = shunt_power(state, case)
    assert p.sum() == pytest.approx((sf + st_).real.sum() + sh.real.sum(), abs=1e-10)

    # nodal injection equals incident branch powers plus shunt draw
    s = sh.copy()
    f, t = case.branch_ends
    np.add.at(s, f, sf)
    np.add.at(s, t, st_)
    np.testing.assert_allclose(p, s.real, atol=1e-10)
    np.testing.assert_allclose(q, s.imag, atol=1e-10)

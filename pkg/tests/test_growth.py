import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biphasic.growth import (
    GroupParams,
    GrowthDomainError,
    GrowthParams,
    InitialState,
    integrate,
    rhs,
    richards_cover,
    solve_analytic,
)


def single(alpha, gamma, T_d, alpha_d, K):
    return GrowthParams((GroupParams(alpha, gamma, T_d, alpha_d),), K)


def richards_closed_form(alpha, gamma, K, c0, tau):
    """Textbook single-phase Richards' solution (with the 1/gamma rate convention)."""
    return K / (1.0 + ((K / c0) ** gamma - 1.0) * np.exp(-alpha * tau)) ** (1.0 / gamma)


def biphasic_two_branch(alpha, gamma, T_d, alpha_d, K, c0, tau):
    """Piecewise closed form: slow branch up to T_d, then restart from C_d."""
    tau = np.asarray(tau, dtype=float)
    slow = richards_closed_form(alpha_d * alpha, gamma, K, c0, np.minimum(tau, T_d))
    c_d = richards_closed_form(alpha_d * alpha, gamma, K, c0, T_d)
    fast = richards_closed_form(alpha, gamma, K, c_d, tau - T_d)
    return np.where(tau <= T_d, slow, fast)


def rk4_oracle(params, c0, t0, t_end, h):
    """Fixed-step classical RK4, split at the change points."""
    alpha = np.array([g.alpha for g in params.groups])
    gamma = np.array([g.gamma for g in params.groups])
    alpha_d = np.array([g.alpha_d for g in params.groups])
    change = np.array([t0 + g.T_d for g in params.groups])
    stops = sorted({t_end, *[c for c in change if t0 < c < t_end]})
    y = np.array(c0, dtype=float)
    t = t0
    for s in stops:
        scale = np.where(s <= change, alpha_d, 1.0)
        f = lambda c: scale * alpha / gamma * c * (1 - (c.sum() / params.K) ** gamma)
        n = int(round((s - t) / h))
        hh = (s - t) / n
        for _ in range(n):
            k1 = f(y)
            k2 = f(y + 0.5 * hh * k1)
            k3 = f(y + 0.5 * hh * k2)
            k4 = f(y + hh * k3)
            y = y + hh / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = s
    return y


valid_single = st.tuples(
    st.floats(0.05, 1.0),  # alpha
    st.floats(0.1, 3.0),  # gamma
    st.floats(0.0, 8.0),  # T_d
    st.floats(0.05, 1.0),  # alpha_d
    st.floats(20.0, 100.0),  # K
    st.floats(0.01, 0.9),  # c0 as a fraction of K
)


# --- rhs -------------------------------------------------------------------------

def test_rhs_vanishes_at_capacity():
    p = single(0.5, 1.3, 2.0, 0.4, 90.0)
    assert rhs(5.0, [90.0], p) == pytest.approx([0.0], abs=0)


def test_rhs_hand_value():
    p = single(0.5, 1.0, 0.0, 0.3, 90.0)
    # slow phase is over for t > t0 + T_d
    assert rhs(1.0, [5.0], p, t0=0.0)[0] == pytest.approx(0.5 * 5 * (1 - 5 / 90), rel=1e-14)
    assert rhs(1.0, [5.0], p, t0=0.0)[0] == pytest.approx(2.3611111111, rel=1e-9)


def test_rhs_applies_scale_in_slow_phase():
    p = single(0.5, 1.0, 3.0, 0.3, 90.0)
    assert rhs(2.0, [5.0], p)[0] == pytest.approx(0.3 * rhs(4.0, [5.0], p)[0])
    # the change point itself belongs to the slow phase
    assert rhs(3.0, [5.0], p)[0] == pytest.approx(0.3 * rhs(3.5, [5.0], p)[0])


def test_rhs_two_groups_own_cover_factor():
    g = GroupParams(0.7, 1.5, 1.0, 0.5)
    p = GrowthParams((g, g), 80.0)
    rates = [rhs(5.0, [c, 5.0], p)[0] for c in (1e-2, 1e-4, 1e-8)]
    assert rates[0] > rates[1] > rates[2] > 0
    assert rates[2] < 1e-8


def test_rhs_roundoff_above_capacity_is_clamped():
    p = single(0.5, 1.0, 0.0, 1.0, 90.0)
    assert rhs(1.0, [90.0 + 5e-13], p)[0] == 0.0
    assert rhs(1.0, [91.0], p)[0] < 0


def test_rhs_domain_errors():
    p = single(0.5, 1.0, 0.0, 1.0, 90.0)
    with pytest.raises(GrowthDomainError):
        rhs(1.0, [0.0], p)
    with pytest.raises(GrowthDomainError):
        rhs(1.0, [-1.0], p)


@pytest.mark.parametrize("kwargs", [
    dict(alpha=0.0, gamma=1.0, T_d=1.0, alpha_d=0.5),
    dict(alpha=0.5, gamma=-1.0, T_d=1.0, alpha_d=0.5),
    dict(alpha=0.5, gamma=1.0, T_d=-1.0, alpha_d=0.5),
    dict(alpha=0.5, gamma=1.0, T_d=1.0, alpha_d=0.0),
    dict(alpha=0.5, gamma=1.0, T_d=1.0, alpha_d=1.2),
])
def test_group_params_invariants(kwargs):
    with pytest.raises(GrowthDomainError):
        GroupParams(**kwargs)


def test_growth_params_invariants():
    g = GroupParams(0.5, 1.0, 1.0, 0.5)
    with pytest.raises(GrowthDomainError):
        GrowthParams((g,), 0.0)
    with pytest.raises(GrowthDomainError):
        GrowthParams((g,), 101.0)
    with pytest.raises(GrowthDomainError):
        GrowthParams((), 50.0)
    with pytest.raises(GrowthDomainError):
        InitialState(0.0, [0.0])
    with pytest.raises(GrowthDomainError):
        solve_analytic(GrowthParams((g,), 50.0), InitialState(0.0, [60.0]), [0.0, 1.0])


def test_flat_vector_round_trip():
    p = GrowthParams((GroupParams(0.5, 1.0, 2.0, 0.3), GroupParams(0.2, 0.4, 1.0, 0.9)), 77.0)
    v = p.as_vector()
    np.testing.assert_array_equal(v, [0.5, 1.0, 2.0, 0.3, 0.2, 0.4, 1.0, 0.9, 77.0])
    assert GrowthParams.from_vector(v) == p


# --- closed form -----------------------------------------------------------------

@given(valid_single)
def test_analytic_initial_condition(args):
    alpha, gamma, T_d, alpha_d, K, frac = args
    sol = solve_analytic(single(alpha, gamma, T_d, alpha_d, K), InitialState(3.0, [frac * K]), [3.0, 4.0])
    assert sol.cover[0, 0] == pytest.approx(frac * K, rel=1e-12)


def test_analytic_logistic_hand_value():
    sol = solve_analytic(single(0.5, 1.0, 0.0, 1.0, 90.0), InitialState(0.0, [5.0]), [0.0, 10.0])
    e = np.exp(0.5 * 10)
    oracle = 90 * 5 * e / (90 + 5 * (e - 1))
    assert oracle == pytest.approx(80.75043359125249, rel=1e-14)
    assert sol.cover[1, 0] == pytest.approx(oracle, rel=1e-12)


@given(valid_single, st.floats(-5.0, 5.0))
def test_analytic_matches_two_branch_form(args, t0):
    alpha, gamma, T_d, alpha_d, K, frac = args
    tau = np.linspace(0, 15, 31)
    got = solve_analytic(single(alpha, gamma, T_d, alpha_d, K), InitialState(t0, [frac * K]), t0 + tau)
    want = biphasic_two_branch(alpha, gamma, T_d, alpha_d, K, frac * K, tau)
    np.testing.assert_allclose(got.cover[:, 0], want, rtol=1e-10)


@given(valid_single)
def test_analytic_continuous_at_change_point(args):
    alpha, gamma, T_d, alpha_d, K, frac = args
    c0 = frac * K
    left = richards_closed_form(alpha_d * alpha, gamma, K, c0, T_d)
    c_d = left
    right = richards_closed_form(alpha, gamma, K, c_d, 0.0)
    at = richards_cover(alpha, gamma, T_d, alpha_d, K, c0, T_d)
    after = richards_cover(alpha, gamma, T_d, alpha_d, K, c0, T_d + 1e-13)
    assert abs(left - right) <= 1e-10
    assert abs(at - left) <= 1e-10
    assert abs(after - at) <= 1e-10


def test_analytic_requires_single_group():
    g = GroupParams(0.5, 1.0, 1.0, 0.5)
    with pytest.raises(GrowthDomainError):
        solve_analytic(GrowthParams((g, g), 90.0), InitialState(0.0, [1.0, 1.0]), [0.0, 1.0])


def test_analytic_rejects_times_before_t0():
    with pytest.raises(GrowthDomainError):
        solve_analytic(single(0.5, 1.0, 1.0, 0.5, 90.0), InitialState(1.0, [5.0]), [0.0, 2.0])


def test_analytic_large_gamma_does_not_overflow():
    sol = solve_analytic(single(0.5, 400.0, 1.0, 0.5, 90.0), InitialState(0.0, [1e-3]), [0.0, 1.0, 5.0])
    assert np.all(np.isfinite(sol.cover))
    assert sol.cover[0, 0] == pytest.approx(1e-3)
    assert np.all(np.diff(sol.cover[:, 0]) > 0)


@given(valid_single)
def test_reduction_to_single_phase(args):
    alpha, gamma, T_d, alpha_d, K, frac = args
    tau = np.linspace(0, 12, 20)
    want = richards_closed_form(alpha, gamma, K, frac * K, tau)
    init = InitialState(0.0, [frac * K])
    for p in (single(alpha, gamma, T_d, 1.0, K), single(alpha, gamma, 0.0, alpha_d, K)):
        np.testing.assert_allclose(solve_analytic(p, init, tau).cover[:, 0], want, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(integrate(p, init, tau).cover[:, 0], want, rtol=1e-6)


def test_logistic_special_case():
    tau = np.linspace(0, 20, 41)
    for alpha, K, c0 in [(0.5, 90.0, 5.0), (0.9, 60.0, 0.5), (0.1, 100.0, 30.0)]:
        got = solve_analytic(single(alpha, 1.0, 0.0, 1.0, K), InitialState(0.0, [c0]), tau).cover[:, 0]
        e = np.exp(alpha * tau)
        np.testing.assert_allclose(got, K * c0 * e / (K + c0 * (e - 1)), rtol=1e-8)


def test_gompertz_limit():
    tau = np.linspace(0, 20, 41)
    for alpha, K, c0 in [(0.5, 90.0, 5.0), (0.9, 60.0, 0.5)]:
        got = solve_analytic(single(alpha, 1e-6, 0.0, 1.0, K), InitialState(0.0, [c0]), tau).cover[:, 0]
        gompertz = K * np.exp(np.log(c0 / K) * np.exp(-alpha * tau))
        np.testing.assert_allclose(got, gompertz, atol=1e-3)


@given(valid_single)
def test_monotone_and_bounded(args):
    alpha, gamma, T_d, alpha_d, K, frac = args
    tau = np.linspace(0, 30, 61)
    c = solve_analytic(single(alpha, gamma, T_d, alpha_d, K), InitialState(0.0, [frac * K]), tau).cover[:, 0]
    assert np.all(np.diff(c) >= 0)
    assert np.all(c <= K)
    # strictly increasing while far enough from K to resolve in floating point
    far = c[1:] < K * (1 - 1e-9)
    assert np.all(np.diff(c)[far] > 0)


@given(valid_single, st.floats(0.05, 0.95))
def test_lower_scale_factor_gives_lower_cover(args, shrink):
    alpha, gamma, T_d, alpha_d, K, frac = args
    T_d = max(T_d, 0.5)
    tau = np.linspace(0, T_d, 11)[1:]
    init = InitialState(0.0, [frac * K])
    hi = solve_analytic(single(alpha, gamma, T_d, alpha_d, K), init, tau).cover[:, 0]
    lo = solve_analytic(single(alpha, gamma, T_d, alpha_d * shrink, K), init, tau).cover[:, 0]
    assert np.all(lo <= hi)


# --- numerical -------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(valid_single, st.floats(-3.0, 3.0))
def test_integrate_matches_analytic(args, t0):
    alpha, gamma, T_d, alpha_d, K, frac = args
    p = single(alpha, gamma, T_d, alpha_d, K)
    init = InitialState(t0, [frac * K])
    times = t0 + np.linspace(0, 15, 20)
    exact = solve_analytic(p, init, times).cover
    numeric = integrate(p, init, times).cover
    np.testing.assert_allclose(numeric, exact, rtol=1e-6)


@settings(max_examples=30, deadline=None)
@given(valid_single)
def test_integrate_symmetric_groups_identical(args):
    alpha, gamma, T_d, alpha_d, K, frac = args
    g = GroupParams(alpha, gamma, T_d, alpha_d)
    c = frac * K / 2
    sol = integrate(GrowthParams((g, g), K), InitialState(0.0, [c, c]), np.linspace(0, 12, 13))
    np.testing.assert_array_equal(sol.cover[:, 0], sol.cover[:, 1])


def test_integrate_two_groups_against_rk4():
    p = GrowthParams((GroupParams(0.6, 1.5, 2.3, 0.3), GroupParams(0.25, 0.5, 1.1, 0.6)), 90.0)
    times = np.array([0.0, 5.0, 10.0])
    sol = integrate(p, InitialState(0.0, [2.0, 4.0]), times)
    for k, t in enumerate(times[1:], start=1):
        oracle = rk4_oracle(p, [2.0, 4.0], 0.0, t, 1e-4)
        assert np.max(np.abs(sol.cover[k] - oracle)) <= 1e-5


def test_integrate_two_groups_stays_below_capacity():
    p = GrowthParams((GroupParams(1.0, 2.0, 0.5, 0.5), GroupParams(0.8, 0.3, 0.0, 1.0)), 60.0)
    sol = integrate(p, InitialState(0.0, [10.0, 10.0]), np.linspace(0, 60, 61))
    assert np.all(sol.total() <= 60.0 + 1e-8)
    assert np.all(np.diff(sol.cover, axis=0) >= -1e-12)
    assert sol.total()[-1] == pytest.approx(60.0, rel=1e-6)


def test_integrate_numeric_continuity_at_change_point():
    p = GrowthParams((GroupParams(0.6, 1.5, 2.3, 0.3), GroupParams(0.25, 0.5, 1.1, 0.6)), 90.0)
    for T in (2.3, 1.1):
        sol = integrate(p, InitialState(0.0, [2.0, 4.0]), [0.0, T, T + 1e-12])
        assert np.max(np.abs(sol.cover[2] - sol.cover[1])) <= 1e-10


def test_integrate_output_at_t0_and_validation():
    p = single(0.5, 1.0, 1.0, 0.5, 90.0)
    sol = integrate(p, InitialState(0.0, [5.0]), [0.0, 1.0])
    assert sol.cover[0, 0] == 5.0
    with pytest.raises(ValueError):
        integrate(p, InitialState(0.0, [5.0]), [0.0, 1.0], rel_tol=0.0)
    with pytest.raises(GrowthDomainError):
        integrate(p, InitialState(0.0, [5.0]), [1.0, 0.5])


def test_integrate_step_underflow_is_reported():
    from biphasic.growth import StiffnessError

    p = single(1.0, 1.0, 0.0, 1.0, 90.0)
    with pytest.raises(StiffnessError):
        integrate(p, InitialState(0.0, [5.0]), [0.0, 10.0], rel_tol=1e-30, abs_tol=1e-300, h_min=1e-3)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from liouville.energy_geometry import ENTIRE, construct_E_point, in_E, lambda_J
from liouville.errors import (
    HypothesesNotSatisfied,
    NoConvergenceError,
    OverflowInExponentialError,
    PreconditionError,
)
from liouville.matrix_core import as_matrix
from liouville.radial_solver import (
    CONVERGED,
    DIVERGENT,
    EXTRAPOLATED,
    RadialSolution,
    epsilon_family,
    extrapolate_masses,
    full_alpha,
    integrate_radial,
    sweep_initial_values,
    taylor_start,
    verify_entire_solution,
)
from liouville.sampling import random_h1h2_matrix

from oracles import liouville_closed_form, liouville_mass

INVOLUTION = [[0.0, 1.0], [1.0, 0.0]]
COUPLED = [[1.0, 2.0], [2.0, 1.0]]


def scipy_masses(A, alpha, r_max=1e6):
    """Reference shot in r with DOP853; returns running masses at r_max."""
    a = np.asarray(A, dtype=float)
    n = a.shape[0]
    r0 = 1e-6
    f = a @ np.exp(alpha)
    y0 = np.concatenate([alpha - f * r0**2 / 4, -f * r0 / 2, np.exp(alpha) * r0**2 / 2])

    def rhs(r, y):
        u, du = y[:n], y[n:2 * n]
        e = np.exp(np.minimum(u, 40.0))
        return np.concatenate([du, -du / r - a @ e, e * r])

    out = solve_ivp(rhs, (r0, r_max), y0, method="DOP853", rtol=1e-10, atol=1e-12)
    assert out.success
    return out.y[2 * n:, -1]


def closed_form_solution(R=1e3, points=4000):
    r = np.geomspace(1e-4, R, points)
    return RadialSolution(
        A=as_matrix([[1.0]]),
        alpha=np.zeros(1),
        r_grid=r,
        u=liouville_closed_form(r)[None, :],
        sigma_running=liouville_mass(r)[None, :],
        m_running=liouville_mass(r)[None, :],
        delta=0.05,
    )


def test_taylor_start_scalar():
    u, du = taylor_start([[1.0]], [0.0], 1e-4)
    assert u[0] == pytest.approx(-2.5e-9, rel=1e-12)
    assert du[0] == pytest.approx(-5e-5, rel=1e-12)


def test_taylor_start_symmetric():
    u, du = taylor_start(INVOLUTION, [0.0, 0.0])
    assert u[0] == u[1] and du[0] == du[1]


def test_taylor_start_bad_radius():
    with pytest.raises(PreconditionError):
        taylor_start([[1.0]], [0.0], 0.0)


def test_scalar_matches_closed_form():
    sol = integrate_radial([[1.0]], [0.0])
    keep = sol.r_grid <= 1e3
    err = np.max(np.abs(sol.u[0, keep] - liouville_closed_form(sol.r_grid[keep])))
    assert err <= 1e-7
    assert sol.status == CONVERGED
    assert sol.sigma_infinity.sigma[0] == pytest.approx(4.0, abs=1e-4)


def test_scalar_running_mass_matches_closed_form():
    sol = integrate_radial([[1.0]], [0.0])
    keep = sol.r_grid <= 1e3
    err = np.max(np.abs(sol.sigma_running[0, keep] - liouville_mass(sol.r_grid[keep])))
    assert err <= 1e-7


def test_symmetric_pair_reduces_to_scalar():
    sol = integrate_radial(INVOLUTION, [0.0, 0.0])
    assert np.max(np.abs(sol.u[0] - sol.u[1])) <= 1e-12
    keep = sol.r_grid <= 1e3
    assert np.max(np.abs(sol.u[0, keep] - liouville_closed_form(sol.r_grid[keep]))) <= 1e-7
    np.testing.assert_allclose(sol.sigma_infinity.sigma, [4.0, 4.0], atol=1e-4)


def test_symmetric_pair_agrees_with_e_point():
    sol = integrate_radial(INVOLUTION, [0.0, 0.0])
    np.testing.assert_allclose(sol.sigma_infinity.sigma, construct_E_point(INVOLUTION).sigma, atol=1e-4)


def test_triangle_all_equal_heights():
    T = [[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]
    sol = integrate_radial(T, [0.0, 0.0, 0.0])
    np.testing.assert_allclose(sol.sigma_infinity.sigma, construct_E_point(T).sigma, atol=1e-4)


def test_involution_unit_height_diverges():
    # the partner's mass saturates below 2, so the first component cannot decay fast enough
    sol = integrate_radial(INVOLUTION, [1.0, 0.0])
    assert sol.status == DIVERGENT and sol.sigma_infinity is None
    ref = scipy_masses(INVOLUTION, np.array([1.0, 0.0]))
    assert ref[1] < 2.0
    assert sol.sigma_running[1, -1] == pytest.approx(ref[1], rel=1e-4)


def test_involution_small_offset_converges():
    sol = integrate_radial(INVOLUTION, [0.1, 0.0])
    rep = verify_entire_solution(INVOLUTION, sol)
    assert rep.relative_residual <= 1e-3
    assert rep.m_min > 2 and rep.subset_positivity


@pytest.mark.parametrize("alpha", [(2.0, 0.0), (0.5, 0.0), (-1.0, 0.0)])
def test_coupled_matches_scipy(alpha):
    sol = integrate_radial(COUPLED, alpha)
    ref = scipy_masses(COUPLED, np.array(alpha), r_max=1e5)
    # scipy stops at a finite radius; its remaining tail is far below 1e-4 here
    np.testing.assert_allclose(sol.sigma_infinity.sigma, ref, rtol=1e-4)


def test_asymmetric_in_E():
    sol = integrate_radial(COUPLED, [2.0, 0.0])
    rep = verify_entire_solution(COUPLED, sol)
    assert rep.ok
    assert in_E(COUPLED, sol.sigma_infinity)


def test_requires_h1():
    with pytest.raises(HypothesesNotSatisfied):
        integrate_radial(np.eye(2), [0.0, 0.0])


def test_overflow_guard():
    with pytest.raises(OverflowInExponentialError) as exc:
        integrate_radial([[1.0]], [50.0])
    assert exc.value.max_safe == 40.0


def test_rejects_wrong_alpha_length():
    with pytest.raises(PreconditionError):
        integrate_radial(INVOLUTION, [0.0])


def test_unknown_option():
    with pytest.raises(TypeError):
        integrate_radial([[1.0]], [0.0], bogus=1)


def test_extrapolate_closed_form():
    sol = closed_form_solution(1e3)
    assert sol.sigma_running[0, -1] == pytest.approx(4 * (1 - 8 / (8 + 1e6)), rel=1e-14)
    assert extrapolate_masses(sol).sigma[0] == pytest.approx(4.0, abs=1e-5)


def test_extrapolate_at_interior_radius():
    sol = closed_form_solution(1e4)
    assert extrapolate_masses(sol, R=1e3).sigma[0] == pytest.approx(4.0, abs=1e-5)


def test_extrapolate_symmetric_pair():
    sol = integrate_radial(INVOLUTION, [0.0, 0.0])
    k = int(np.searchsorted(sol.r_grid, 1e3))
    est = extrapolate_masses(sol, R=sol.r_grid[k])
    np.testing.assert_allclose(est.sigma, [4.0, 4.0], atol=1e-4)


def test_extrapolate_precondition():
    r = np.geomspace(1e-4, 1e3, 10)
    sig = np.full((1, 10), 2.01)
    sol = RadialSolution(A=as_matrix([[1.0]]), alpha=np.zeros(1), r_grid=r, u=np.full((1, 10), -10.0),
                         sigma_running=sig, m_running=sig, delta=0.05)
    with pytest.raises(PreconditionError):
        extrapolate_masses(sol)


def test_extrapolate_no_convergence():
    # one update cannot settle the tail feedback
    with pytest.raises(NoConvergenceError):
        extrapolate_masses(closed_form_solution(1e3), max_iter=1)


def test_verify_scalar():
    sol = integrate_radial([[1.0]], [0.0])
    rep = verify_entire_solution([[1.0]], sol)
    assert rep.pohozaev_residual <= 1e-6
    assert rep.m_min == pytest.approx(4.0, abs=1e-4)
    assert rep.subset_positivity


def test_verify_symmetric_pair():
    sol = integrate_radial(INVOLUTION, [0.0, 0.0])
    rep = verify_entire_solution(INVOLUTION, sol)
    assert rep.pohozaev_residual <= 1e-4
    np.testing.assert_allclose(sol.sigma_infinity.m, [4.0, 4.0], atol=1e-4)


def test_verify_needs_masses():
    sol = integrate_radial(INVOLUTION, [1.0, 0.0])
    with pytest.raises(PreconditionError):
        verify_entire_solution(INVOLUTION, sol)


def test_tighter_tolerances_reduce_residual():
    residuals = []
    for atol, rtol in ((1e-8, 1e-6), (1e-9, 1e-7), (1e-12, 1e-9)):
        sol = integrate_radial(COUPLED, [2.0, 0.0], atol=atol, rtol=rtol)
        residuals.append(verify_entire_solution(COUPLED, sol).relative_residual)
    assert residuals[0] > residuals[1] > residuals[2]


def test_halving_first_step_is_stable():
    s1 = integrate_radial(COUPLED, [2.0, 0.0]).sigma_infinity.sigma
    s2 = integrate_radial(COUPLED, [2.0, 0.0], first_step=5e-4).sigma_infinity.sigma
    assert np.max(np.abs(s1 - s2) / s1) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 3), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_radial_invariants(seed, n, a1, a2):
    A = random_h1h2_matrix(np.random.default_rng(seed), n)
    alpha = full_alpha(n, [a1, a2][: n - 1])
    sol = integrate_radial(A, alpha)
    assert np.all(np.diff(sol.r_grid) > 0)
    assert np.all(np.diff(sol.u, axis=1) <= 1e-12)
    assert np.all(np.diff(sol.sigma_running, axis=1) >= 0)
    if not sol.divergent:
        rep = verify_entire_solution(A, sol)
        assert rep.relative_residual <= 1e-3
        assert rep.m_min > 2
        assert rep.subset_positivity
        assert abs(lambda_J(A, sol.sigma_infinity.sigma, range(n), ENTIRE)) <= 1e-3 * 4 * sol.sigma_infinity.sigma.sum()


def test_status_values():
    assert integrate_radial([[1.0]], [0.0]).status == CONVERGED
    # a short horizon leaves the scalar solution with m well above 2 but an unsettled tail
    sol = integrate_radial([[1.0]], [0.0], r_max=1e2)
    assert sol.status == EXTRAPOLATED
    assert sol.sigma_infinity.sigma[0] == pytest.approx(4.0, abs=1e-3)


def test_tail_constants_scalar():
    sol = integrate_radial([[1.0]], [0.0])
    # -2 log(1 + r^2/8) = -4 log r + 2 log 8 + o(1)
    assert sol.tail_constants[0] == pytest.approx(2 * math.log(8), abs=1e-4)


@pytest.mark.parametrize("point, alpha", [((0.5,), [0.5, 0.0]), ((0.5, 1.0), [0.5, 1.0])])
def test_full_alpha(point, alpha):
    assert full_alpha(2, point).tolist() == alpha


def test_full_alpha_bad_length():
    with pytest.raises(PreconditionError):
        full_alpha(3, (1.0,))


def test_sweep_scalar_single_mass():
    table = sweep_initial_values([[1.0]], [(-1.0,), (0.0,), (1.0,)])
    for row in table.rows:
        assert row.masses.sigma[0] == pytest.approx(4.0, abs=1e-4)
    assert len(table.non_injective) == 3


def test_sweep_empty():
    table = sweep_initial_values(INVOLUTION, [])
    assert table.rows == [] and table.non_injective == []


def test_sweep_involution_distinct_points():
    table = sweep_initial_values(INVOLUTION, [(-0.2,), (0.0,), (0.2,)])
    sig = [r.masses.sigma for r in table.rows]
    assert all(r.status in (CONVERGED, EXTRAPOLATED) for r in table.rows)
    assert not table.non_injective
    for s in sig:
        assert abs(lambda_J(INVOLUTION, s, [0, 1], ENTIRE)) <= 1e-3 * 4 * s.sum()
    assert sig[0][0] < sig[1][0] < sig[2][0]


def test_sweep_records_divergent_cells():
    table = sweep_initial_values(INVOLUTION, [(-1.0,), (0.0,), (1.0,)])
    assert [r.status for r in table.rows] == [DIVERGENT, CONVERGED, DIVERGENT]
    assert table.rows[1].masses is not None


def test_sweep_errors_inline():
    table = sweep_initial_values(INVOLUTION, [(0.0,), (1.0, 2.0, 3.0), (50.0, 0.0)])
    assert [r.status for r in table.rows] == [CONVERGED, "error", "error"]
    assert "OverflowInExponential" in table.rows[2].error


def test_sweep_parallel_matches_serial():
    grid = [(-0.2,), (0.0,), (0.2,)]
    seen = []
    serial = sweep_initial_values(INVOLUTION, grid)
    parallel = sweep_initial_values(INVOLUTION, grid, jobs=2, on_row=seen.append)
    assert [r.point for r in seen] == grid
    for a, b in zip(serial.rows, parallel.rows):
        assert a.masses.sigma.tolist() == b.masses.sigma.tolist()


def test_epsilon_one_is_plain_shot():
    a = epsilon_family(COUPLED, 1, [2.0], 1.0)
    b = integrate_radial(COUPLED, [2.0, 0.0])
    assert a.sigma_infinity.sigma.tolist() == b.sigma_infinity.sigma.tolist()


@pytest.mark.parametrize("eps", [0.0, -1e-3, 1.5])
def test_epsilon_bad_eps(eps):
    with pytest.raises(PreconditionError):
        epsilon_family(INVOLUTION, 1, [0.0], eps)


def test_epsilon_bad_l():
    with pytest.raises(PreconditionError):
        epsilon_family(INVOLUTION, 2, [0.0, 0.0], 0.5)


def test_epsilon_involution_trailing_mass_shrinks():
    s3 = epsilon_family(INVOLUTION, 1, [0.0], 1e-3)
    s6 = epsilon_family(INVOLUTION, 1, [0.0], 1e-6)
    assert s6.sigma_running[1, -1] < s3.sigma_running[1, -1]


def test_epsilon_partial_support():
    # inverse row sums (1, 0): the head carries an entire scalar solution
    A = [[1.0, 1.0], [1.0, 0.5]]
    masses = [epsilon_family(A, 1, [0.0], eps).sigma_infinity.sigma for eps in (1e-2, 1e-4)]
    for s in masses:
        assert s[0] == pytest.approx(4.0, abs=0.1)
    assert masses[1][1] < masses[0][1] < 0.1


def test_large_height_uses_scaled_start():
    # u(r) = alpha - 2 log(1 + e^alpha r^2 / 8) for the scalar equation
    sol = integrate_radial([[1.0]], [30.0])
    assert sol.r_grid[0] < 1e-4 * math.exp(-15)
    assert sol.sigma_infinity.sigma[0] == pytest.approx(4.0, abs=1e-4)
    r = sol.r_grid[sol.r_grid <= 1e-3]
    exact = 30.0 - 2 * np.log1p(math.exp(30.0) * r**2 / 8)
    assert np.max(np.abs(sol.u[0, : r.size] - exact)) <= 1e-6

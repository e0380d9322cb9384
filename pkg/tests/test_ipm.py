import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import scalar_nlp
from hetnmpc.errors import InfeasibleIterateError
from hetnmpc.ipm import (LOG_COLUMNS, IpmConfig, barrier_mu, compute_residuals, fraction_to_boundary,
                         init_point, ipm_solve, log_to_csv, recover_dlambda, shift_warm_start)
from hetnmpc.minres import KktSolveConfig

DENSE = KktSolveConfig(method="dense")


def test_unconstrained_quadratic():
    nlp = scalar_nlp(3.0)
    state, log = ipm_solve(nlp, IpmConfig(n_iter=15))
    assert abs(state.theta[nlp.layout.u(0)][0] - 3.0) <= 1e-6
    assert len(log) == 16


def test_bound_constrained_quadratic():
    nlp = scalar_nlp(0.0, u_lb=1.0)
    state, _ = ipm_solve(nlp, IpmConfig(n_iter=15))
    assert abs(state.theta[nlp.layout.u(0)][0] - 1.0) <= 1e-4
    assert abs(state.lam[0] - 1.0) <= 1e-4


@pytest.mark.parametrize("mode", ["averaged", "paper_literal"])
def test_mu_modes_both_converge_on_scalar_problem(mode):
    nlp = scalar_nlp(0.0, u_lb=1.0)
    state, _ = ipm_solve(nlp, IpmConfig(mu_mode=mode))
    assert state.theta[nlp.layout.u(0)][0] == pytest.approx(1.0, abs=1e-4)


def test_barrier_mu_modes():
    lam, g = np.array([1.0, 2.0]), np.array([-0.5, -0.25])
    assert barrier_mu(lam, g, 0.1, "paper_literal") == pytest.approx(0.1)
    assert barrier_mu(lam, g, 0.1, "averaged") == pytest.approx(0.05)
    assert barrier_mu([], [], 0.1) == 0.0
    with pytest.raises(ValueError):
        barrier_mu(lam, g, 0.1, "other")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dlambda_linearizes_complementarity(seed):
    rng = np.random.default_rng(seed)
    lam, g = rng.uniform(0.1, 2, 5), -rng.uniform(0.1, 2, 5)
    jd, mu = rng.normal(size=5), rng.uniform(0, 1)
    dlam = recover_dlambda(lam, g, mu, jd)
    # (lam + dlam)(g + jd) = -mu up to the second-order term dlam * jd
    assert np.allclose(lam * g + lam * jd + dlam * g, -mu)


def test_fraction_to_boundary_hand_values():
    assert fraction_to_boundary([1.0], [-2.0], [-1.0], [0.0]) == pytest.approx(0.4975)
    assert fraction_to_boundary([1.0], [-0.5], [-1.0], [4.0]) == pytest.approx(0.995 * 0.25)
    assert fraction_to_boundary([1.0], [1.0], [-1.0], [-1.0]) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fraction_to_boundary_keeps_strict_interior(seed):
    rng = np.random.default_rng(seed)
    lam, g = rng.uniform(1e-3, 2, 8), -rng.uniform(1e-3, 2, 8)
    dlam, jd = rng.normal(scale=3, size=8), rng.normal(scale=3, size=8)
    a = fraction_to_boundary(lam, dlam, g, jd)
    assert 0 < a <= 1
    assert np.all(lam + a * dlam > 0) and np.all(g + a * jd < 0)


def test_init_point_is_strictly_feasible(crane10):
    st0 = init_point(crane10)
    assert np.all(crane10.g(st0.theta) < 0) and np.all(st0.lam > 0)
    L = crane10.layout
    assert np.allclose(st0.theta[L.x(0)], crane10.x_hat)


def test_crane_solve_reduces_residuals_with_dense_solver(crane10):
    seen = []
    state, log = ipm_solve(crane10, IpmConfig(linear=DENSE), callback=lambda s: seen.append(
        (np.all(crane10.g(s.theta) < 0), np.all(s.lam > 0))))
    assert len(seen) == 15 and all(a and b for a, b in seen)
    assert log[-1].r_eq_inf < 1e-10 and log[-1].compl < 1e-8 and log[-1].r_dual_inf < 1e-6
    assert np.all(np.abs(state.theta[crane10.ineq_var]) < 0.15)


def test_warm_start_shifts_and_stays_feasible(crane10):
    state, _ = ipm_solve(crane10, IpmConfig(linear=DENSE))
    ws = shift_warm_start(crane10, state)
    L = crane10.layout
    assert np.allclose(ws.theta[L.u(0)], np.clip(state.theta[L.u(1)], -0.147, 0.147))
    assert np.all(crane10.g(ws.theta) < 0) and np.all(ws.lam > 0)
    again, log = ipm_solve(crane10, IpmConfig(linear=DENSE), init=ws)
    assert log[-1].r_eq_inf < 1e-8


def test_residuals_reject_infeasible_points(crane10):
    st0 = init_point(crane10)
    theta = st0.theta.copy()
    theta[crane10.layout.u(0).start] = 0.2
    with pytest.raises(InfeasibleIterateError):
        compute_residuals(crane10, theta, st0.nu, st0.lam, 0.0)


def test_log_csv_is_deterministic(tmp_path):
    nlp = scalar_nlp(0.0, u_lb=1.0)
    a = log_to_csv(ipm_solve(nlp)[1], tmp_path / "a.csv")
    b = log_to_csv(ipm_solve(nlp)[1])
    assert a == b == (tmp_path / "a.csv").read_text()
    assert a.splitlines()[0] == ",".join(LOG_COLUMNS)
    assert len(a.splitlines()) == 1 + 16


def test_config_validation():
    for kw in ({"sigma": 0.0}, {"gamma": 1.0}, {"mu_mode": "x"}, {"n_iter": -1}):
        with pytest.raises(ValueError):
            IpmConfig(**kw)

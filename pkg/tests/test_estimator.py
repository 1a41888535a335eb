import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lowrank_bandit.core import History, RepresentationMatrix
from lowrank_bandit.errors import DataError, InsufficientData
from lowrank_bandit.estimator import (
    LAMBDA0_FLOOR,
    SolverSettings,
    bootstrap_lambda0,
    lambda0_from_residuals,
    lambda_schedule,
    loss_and_gradient,
    objective,
    ridge_noise_level,
    solve_nuclear_ls,
    svt,
    zero_threshold,
)
from oracles import fista, lambda0_loop, loss_loop, objective_loop, random_history, svt_full, vec_design

TIGHT = SolverSettings(max_iters=20000, rel_tol=1e-15, fp_tol=1e-12)


def scalar_history(y=1.0, d_a=1, d_x=1):
    a = np.zeros(d_a)
    a[0] = 1.0
    x = np.zeros((1, d_x))
    x[0, 0] = 1.0
    return History.from_arrays(a[None], x[None], [[y]])


# -- svt ---------------------------------------------------------------------

def test_svt_diagonal():
    np.testing.assert_allclose(svt(np.diag([3.0, 1.0]), 1.0), np.diag([2.0, 0.0]), atol=1e-15)


def test_svt_zero_threshold_is_identity():
    m = np.random.default_rng(0).standard_normal((4, 3))
    assert np.linalg.norm(svt(m, 0.0) - m) <= 1e-10 * np.linalg.norm(m)


def test_svt_matches_full_svd_oracle():
    m = np.random.default_rng(1).standard_normal((3, 3))
    assert np.linalg.norm(svt(m, 0.5) - svt_full(m, 0.5)) <= 1e-10


@given(st.integers(1, 6), st.integers(1, 6), st.floats(0, 3), st.integers(0, 2**32 - 1))
def test_svt_shrinks_singular_values(r, c, tau, seed):
    m = np.random.default_rng(seed).standard_normal((r, c))
    s_in = np.linalg.svd(m, compute_uv=False)
    s_out = np.linalg.svd(svt(m, tau), compute_uv=False)
    np.testing.assert_allclose(s_out, np.maximum(s_in - tau, 0), atol=1e-10)


def test_svt_errors():
    with pytest.raises(DataError):
        svt(np.eye(2), -0.1)
    with pytest.raises(DataError):
        svt(np.array([[np.nan]]), 0.1)


# -- loss and gradient -------------------------------------------------------

def test_loss_gradient_scalar():
    val, g = loss_and_gradient(np.zeros((2, 3)), scalar_history(1.0, 2, 3))
    assert val == 0.5
    want = np.zeros((2, 3))
    want[0, 0] = -1.0
    np.testing.assert_array_equal(g, want)


def test_loss_gradient_exact_fit():
    rng = np.random.default_rng(2)
    theta = rng.standard_normal((3, 4))
    h = History.from_arrays(*random_history(rng, 3, 4, 2, 10, theta))
    val, g = loss_and_gradient(theta, h)
    assert val <= 1e-12
    assert np.max(np.abs(g)) <= 1e-12


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_gradient_matches_central_differences(d_a, d_x, L, seed):
    rng = np.random.default_rng(seed)
    h = History.from_arrays(*random_history(rng, d_a, d_x, L, 7))
    theta = rng.standard_normal((d_a, d_x))
    _, g = loss_and_gradient(theta, h)
    A, X, Y = h.actions, h.contexts, h.rewards
    eps = 1e-6
    for i in range(d_a):
        for j in range(d_x):
            e = np.zeros_like(theta)
            e[i, j] = eps
            fd = (loss_loop(theta + e, A, X, Y) - loss_loop(theta - e, A, X, Y)) / (2 * eps)
            assert abs(fd - g[i, j]) <= 1e-5


def test_loss_matches_loop():
    rng = np.random.default_rng(3)
    A, X, Y = random_history(rng, 3, 5, 2, 9)
    theta = rng.standard_normal((3, 5))
    val, _ = loss_and_gradient(theta, History.from_arrays(A, X, Y))
    assert val == pytest.approx(loss_loop(theta, A, X, Y), rel=1e-12)
    assert objective(theta, History.from_arrays(A, X, Y), 0.3) == pytest.approx(
        objective_loop(theta, A, X, Y, 0.3), rel=1e-12
    )


def test_empty_history():
    with pytest.raises(InsufficientData):
        loss_and_gradient(np.zeros((1, 1)), History(1, 1, 1))
    with pytest.raises(InsufficientData):
        solve_nuclear_ls(History(1, 1, 1), 0.1)


# -- solver ------------------------------------------------------------------

@pytest.mark.parametrize("backend", ["direct", "gram"])
def test_solver_scalar_soft_threshold(backend):
    rep = solve_nuclear_ls(scalar_history(1.0, 3, 2), 0.4, settings=SolverSettings(backend=backend))
    want = np.zeros((3, 2))
    want[0, 0] = 0.6
    np.testing.assert_allclose(rep.theta_hat.entries, want, atol=1e-12)
    assert rep.converged


def test_solver_zero_when_lambda_dominates():
    rep = solve_nuclear_ls(scalar_history(1.0, 2, 2), 2.0)
    assert np.all(rep.theta_hat.entries == 0.0)


def test_solver_recovers_rank_one_noiseless():
    rng = np.random.default_rng(4)
    theta = np.outer(rng.standard_normal(4), rng.standard_normal(3))
    A, X, Y = random_history(rng, 4, 3, 1, 200, theta)
    Z, y = vec_design(A, X, Y)
    ls = np.linalg.lstsq(Z, y, rcond=None)[0].reshape(4, 3)
    rep = solve_nuclear_ls(History.from_arrays(A, X, Y), 1e-6, settings=SolverSettings(max_iters=5000))
    assert np.linalg.norm(rep.theta_hat.entries - theta) <= 1e-3
    assert np.linalg.norm(rep.theta_hat.entries - ls) <= 1e-3


@pytest.mark.parametrize(
    "settings",
    [
        SolverSettings(max_iters=20000, rel_tol=1e-15, fp_tol=1e-12),
        SolverSettings(max_iters=20000, rel_tol=1e-15, fp_tol=1e-12, step_rule="backtracking"),
        SolverSettings(max_iters=20000, rel_tol=1e-15, fp_tol=1e-12, accelerated=False),
        SolverSettings(max_iters=20000, rel_tol=1e-15, fp_tol=1e-12, backend="gram"),
    ],
    ids=["power", "backtracking", "plain", "gram"],
)
def test_solver_matches_textbook_fista(settings):
    rng = np.random.default_rng(5)
    A, X, Y = random_history(rng, 4, 5, 2, 15)
    ref = fista(A, X, Y, 0.05)
    rep = solve_nuclear_ls(History.from_arrays(A, X, Y), 0.05, settings=settings)
    assert rep.converged
    assert np.linalg.norm(rep.theta_hat.entries - ref) <= 1e-7


def fixed_point_residual(theta, hist, lam, eta):
    _, g = loss_and_gradient(theta, hist)
    return np.linalg.norm(theta - svt_full(theta - eta * g, eta * lam))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3), st.integers(1, 12),
       st.floats(1e-3, 1.0), st.integers(0, 2**32 - 1))
def test_converged_solves_are_fixed_points(d_a, d_x, L, n, lam, seed):
    rng = np.random.default_rng(seed)
    hist = History.from_arrays(*random_history(rng, d_a, d_x, L, n))
    rep = solve_nuclear_ls(hist, lam)
    th = rep.theta_hat.entries
    if rep.converged:
        assert fixed_point_residual(th, hist, lam, rep.step_size) <= 1e-6 * max(1.0, np.linalg.norm(th))
    else:
        assert rep.iterations == SolverSettings().max_iters


@given(st.integers(1, 5), st.integers(1, 5), st.integers(2, 10), st.floats(1e-3, 1.0),
       st.integers(0, 2**32 - 1), st.booleans())
def test_objective_trace_non_increasing(d_a, d_x, n, lam, seed, warm):
    rng = np.random.default_rng(seed)
    hist = History.from_arrays(*random_history(rng, d_a, d_x, 2, n))
    start = rng.standard_normal((d_a, d_x)) if warm else None
    trace = []
    rep = solve_nuclear_ls(hist, lam, warm_start=start, trace=trace)
    for prev, cur in zip(trace, trace[1:]):
        assert cur <= prev + 1e-12 * max(1.0, abs(prev))
    assert rep.final_objective <= objective(np.zeros((d_a, d_x)), hist, lam) + 1e-12
    if warm:
        assert rep.final_objective <= objective(start, hist, lam) + 1e-12


@given(st.integers(2, 5), st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_nuclear_norm_monotone_in_lambda(d_a, d_x, seed):
    rng = np.random.default_rng(seed)
    hist = History.from_arrays(*random_history(rng, d_a, d_x, 1, 8))
    lam_max = zero_threshold(hist)
    norms = [
        solve_nuclear_ls(hist, f * lam_max, settings=TIGHT).theta_hat.nuclear_norm()
        for f in (0.05, 0.2, 0.6)
    ]
    assert norms[0] + 1e-6 >= norms[1] and norms[1] + 1e-6 >= norms[2]


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_zero_solution_above_threshold(d_a, d_x, n, seed):
    rng = np.random.default_rng(seed)
    hist = History.from_arrays(*random_history(rng, d_a, d_x, 2, n))
    _, g0 = loss_and_gradient(np.zeros((d_a, d_x)), hist)
    thr = np.linalg.svd(g0, compute_uv=False)[0]
    assert zero_threshold(hist) == pytest.approx(thr, rel=1e-12)
    rep = solve_nuclear_ls(hist, thr * 1.0000001)
    assert np.linalg.norm(rep.theta_hat.entries) <= 1e-10


def test_warm_start_shape_checked():
    with pytest.raises(DataError):
        solve_nuclear_ls(scalar_history(1.0, 2, 2), 0.1, warm_start=np.zeros((3, 3)))


def test_lambda_must_be_positive():
    with pytest.raises(DataError):
        solve_nuclear_ls(scalar_history(), 0.0)


def test_settings_validation():
    for bad in (dict(max_iters=0), dict(rel_tol=0.0), dict(step_rule="x"), dict(backend="x")):
        with pytest.raises(DataError):
            SolverSettings(**bad)


# -- lambda schedule and bootstrap -------------------------------------------

def test_lambda_schedule_values():
    assert lambda_schedule(1.0, 1) == 1.0
    assert lambda_schedule(1.0, 4) == 0.5
    getcontext().prec = 50
    want = Decimal("2.5") / Decimal(10).sqrt()
    assert abs(Decimal(lambda_schedule(2.5, 10)) - want) <= Decimal("1e-15")
    with pytest.raises(DataError):
        lambda_schedule(1.0, 0)


def test_bootstrap_zero_residual_floor():
    rng = np.random.default_rng(6)
    theta = rng.standard_normal((3, 4))
    hist = History.from_arrays(*random_history(rng, 3, 4, 1, 5, theta))
    assert bootstrap_lambda0(hist, theta_boot=theta) == LAMBDA0_FLOOR


def test_bootstrap_single_term():
    assert bootstrap_lambda0(scalar_history(1.0), theta_boot=np.zeros((1, 1))) == 2.0


def test_bootstrap_matches_explicit_operator_norm():
    rng = np.random.default_rng(7)
    A, X, Y = random_history(rng, 3, 4, 2, 5)
    theta = rng.standard_normal((3, 4))
    got = bootstrap_lambda0(History.from_arrays(A, X, Y), theta_boot=theta)
    assert got == pytest.approx(lambda0_loop(theta, A, X, Y), rel=1e-8)
    half = lambda0_from_residuals(History.from_arrays(A, X, Y), theta, factor=0.5)
    assert half == pytest.approx(lambda0_loop(theta, A, X, Y, factor=0.5), rel=1e-8)


@pytest.mark.parametrize("method", ["cv", "ridge"])
def test_bootstrap_methods_positive_and_scaled(method):
    rng = np.random.default_rng(8)
    theta = rng.standard_normal((3, 5))
    hist = History.from_arrays(*random_history(rng, 3, 5, 2, 12, theta, sigma=0.1))
    lam0 = bootstrap_lambda0(hist, method=method)
    assert lam0 > LAMBDA0_FLOOR
    assert bootstrap_lambda0(hist, method=method, factor=1.0) == pytest.approx(lam0 / 2, rel=1e-12)


def test_bootstrap_single_round_falls_back_to_ridge():
    assert bootstrap_lambda0(scalar_history(1.0), method="cv") > 0


def test_ridge_noise_level_recovers_sigma():
    rng = np.random.default_rng(9)
    theta = rng.standard_normal((2, 3))
    hist = History.from_arrays(*random_history(rng, 2, 3, 1, 4000, theta, sigma=0.1))
    assert 0.095 <= ridge_noise_level(hist) <= 0.105
    # underdetermined: the ridge fit interpolates
    small = History.from_arrays(*random_history(rng, 4, 5, 1, 6, theta=None))
    assert ridge_noise_level(small) < 1e-4

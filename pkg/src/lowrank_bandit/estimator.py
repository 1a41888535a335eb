"""Nuclear-norm regularized least squares for the bilinear reward model.

Solves::

    min_Theta  1/(2 n L) sum_{i,l} (a_i' Theta x_il - y_il)^2 + lam * ||Theta||_*

with accelerated proximal gradient (singular value thresholding as the
prox), adaptive momentum restart and a backtracking safeguard.

The squared loss is quadratic in ``Theta``: its gradient is
``H(Theta) - B`` for a fixed linear operator ``H`` and matrix ``B``.
Two backends evaluate ``H``: ``direct`` works from the stored samples,
``gram`` from the ``(d_a d_x)^2`` Gram matrix that ``History`` maintains
incrementally. ``auto`` picks the cheaper one for the problem size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg.lapack import dgesdd as _dgesdd

from .core import History, RepresentationMatrix
from .errors import DataError, InsufficientData, NonFiniteObjective

POWER_ITERS = 30
LAMBDA0_FLOOR = 1e-8
GRAM_MAX_DIM = 4096


@dataclass(frozen=True)
class SolverSettings:
    max_iters: int = 500
    rel_tol: float = 1e-8
    step_rule: str = "power"  # "power" | "backtracking"
    accelerated: bool = True
    fp_tol: float = 1e-6  # relative fixed-point residual required for convergence
    backend: str = "auto"  # "auto" | "direct" | "gram"

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise DataError("max_iters must be >= 1")
        if not self.rel_tol > 0 or not self.fp_tol > 0:
            raise DataError("tolerances must be positive")
        if self.step_rule not in ("power", "backtracking"):
            raise DataError(f"unknown step rule {self.step_rule!r}")
        if self.backend not in ("auto", "direct", "gram"):
            raise DataError(f"unknown backend {self.backend!r}")


@dataclass(frozen=True)
class EstimateReport:
    theta_hat: RepresentationMatrix
    lambda_t: float
    iterations: int
    final_objective: float
    converged: bool
    step_size: float
    residual: float


def _thin_svd(m: np.ndarray):
    u, s, vt, info = _dgesdd(m, compute_uv=1, full_matrices=0)
    if info != 0:
        return np.linalg.svd(m, full_matrices=False)
    return u, s, vt


def _svt(m: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    u, s, vt = _thin_svd(m)
    s = np.maximum(s - tau, 0.0)
    k = int(np.count_nonzero(s))
    if k == 0:
        return np.zeros_like(m), s
    return (u[:, :k] * s[:k]) @ vt[:k], s


def svt(m, tau: float) -> np.ndarray:
    """Singular value thresholding: prox of ``tau * ||.||_*`` at ``m``."""
    m = np.asarray(m, dtype=float)
    if tau < 0:
        raise DataError("tau must be non-negative")
    if not np.all(np.isfinite(m)):
        raise DataError("svt input has non-finite entries")
    return _svt(m, float(tau))[0]


class _DirectLoss:
    def __init__(self, history: History):
        self.A = history.actions
        X = history.contexts
        Y = history.rewards
        self.N = X.shape[0] * X.shape[1]
        self.shape = (history.d_a, history.d_x)
        self.X1 = X[:, 0, :] if X.shape[1] == 1 else None
        self.X = X
        self.Y = Y
        self.B = self.A.T @ np.einsum("nl,nld->nd", Y, X) / self.N
        self.c = float(np.sum(Y * Y)) / (2 * self.N)

    def _pred(self, theta):
        P = self.A @ theta
        if self.X1 is not None:
            return np.einsum("nd,nd->n", P, self.X1)[:, None]
        return np.einsum("nd,nld->nl", P, self.X)

    def hess(self, theta):
        pred = self._pred(theta)
        if self.X1 is not None:
            W = pred * self.X1
        else:
            W = np.einsum("nl,nld->nd", pred, self.X)
        return self.A.T @ W / self.N

    def loss(self, theta):
        r = self._pred(theta) - self.Y
        return float(np.sum(r * r)) / (2 * self.N)


class _GramLoss:
    def __init__(self, history: History):
        gram, zy, yy = history.sufficient_stats()
        self.N = len(history) * history.L
        self.shape = (history.d_a, history.d_x)
        self.H = gram / self.N
        self.B = (zy / self.N).reshape(self.shape)
        self.c = yy / (2 * self.N)

    def hess(self, theta):
        return (self.H @ theta.ravel()).reshape(self.shape)

    def loss(self, theta):
        return 0.5 * float(np.vdot(theta, self.hess(theta))) - float(np.vdot(self.B, theta)) + self.c


def _make_loss(history: History, backend: str):
    if len(history) == 0:
        raise InsufficientData("history is empty")
    p = history.d_a * history.d_x
    if backend == "auto":
        N = len(history) * history.L
        use_gram = p <= GRAM_MAX_DIM and 4 * N >= 5 * p
        backend = "gram" if use_gram else "direct"
    return _GramLoss(history) if backend == "gram" else _DirectLoss(history)


def loss_and_gradient(theta, history: History) -> tuple[float, np.ndarray]:
    """Smooth part of the objective and its gradient at ``theta``."""
    m = theta.entries if isinstance(theta, RepresentationMatrix) else np.asarray(theta, float)
    if len(history) == 0:
        raise InsufficientData("history is empty")
    f = _DirectLoss(history)
    if m.shape != f.shape:
        raise DataError(f"theta has shape {m.shape}, expected {f.shape}")
    return f.loss(m), f.hess(m) - f.B


def objective(theta, history: History, lam: float) -> float:
    m = theta.entries if isinstance(theta, RepresentationMatrix) else np.asarray(theta, float)
    return _DirectLoss(history).loss(m) + lam * float(np.sum(np.linalg.svd(m, compute_uv=False)))


def lipschitz_estimate(hess, shape, iters: int = POWER_ITERS) -> float:
    """Power-iteration estimate of the largest eigenvalue of ``hess``."""
    v = np.random.default_rng(0).standard_normal(shape)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = hess(v)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = w / est
    return est


def lambda_schedule(lambda0: float, t: int) -> float:
    if t < 1:
        raise DataError("t must be >= 1")
    return lambda0 / math.sqrt(t)


def solve_nuclear_ls(
    history: History,
    lam: float,
    warm_start=None,
    settings: SolverSettings = SolverSettings(),
    trace: Optional[list] = None,
) -> EstimateReport:
    """Minimize the nuclear-norm regularized squared loss over ``history``.

    When ``trace`` is a list, the objective at the start and after every
    accepted iterate is appended to it.
    """
    if not lam > 0:
        raise DataError("lambda must be positive")
    f = _make_loss(history, settings.backend)
    if warm_start is None:
        x = np.zeros(f.shape)
    else:
        x = np.array(
            warm_start.entries if isinstance(warm_start, RepresentationMatrix) else warm_start,
            dtype=float,
        )
        if x.shape != f.shape:
            raise DataError(f"warm start has shape {x.shape}, expected {f.shape}")
    return _apg(f, float(lam), x, settings, trace)


def _apg(f, lam: float, x: np.ndarray, settings: SolverSettings, trace=None) -> EstimateReport:
    B, c = f.B, f.c
    if settings.step_rule == "power":
        lip = lipschitz_estimate(f.hess, f.shape)
        eta = 1.0 / lip if lip > 0 else 1.0
    else:
        eta = 1.0

    def value(z, Hz, s):
        return 0.5 * float(np.vdot(z, Hz)) - float(np.vdot(B, z)) + c + lam * float(np.sum(s))

    Hx = f.hess(x)
    Fx = value(x, Hx, np.linalg.svd(x, compute_uv=False))
    if not math.isfinite(Fx):
        raise NonFiniteObjective("objective is not finite at the starting point")
    if trace is not None:
        trace.append(Fx)
    y, Hy, tk = x, Hx, 1.0
    momentum = False
    converged = False
    residual = math.inf
    it = 0
    while it < settings.max_iters:
        it += 1
        gy = Hy - B
        while True:
            z, sz = _svt(y - eta * gy, eta * lam)
            Hz = f.hess(z)
            d = z - y
            dd = float(np.vdot(d, d))
            curv = float(np.vdot(d, Hz - Hy))
            if curv * eta <= dd * (1 + 1e-10) + 1e-300:
                break
            eta *= 0.5
            if eta < 1e-300:
                raise NonFiniteObjective("step size underflow")
        Fz = value(z, Hz, sz)
        if not math.isfinite(Fz):
            raise NonFiniteObjective(f"objective diverged at iteration {it}")
        if momentum and Fz > Fx + 1e-13 * max(1.0, abs(Fx)):
            # momentum overshot: restart from the last accepted iterate
            y, Hy, tk, momentum = x, Hx, 1.0, False
            continue
        rel = abs(Fx - Fz) / max(1.0, abs(Fx))
        x_prev, Hx_prev = x, Hx
        x, Hx, Fx = z, Hz, Fz
        if trace is not None:
            trace.append(Fz)
        if it % 50 == 0:
            Hx = f.hess(x)
        if settings.accelerated:
            tk1 = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
            beta = (tk - 1.0) / tk1
            y = x + beta * (x - x_prev)
            Hy = Hx + beta * (Hx - Hx_prev)
            tk = tk1
            momentum = beta > 0
        else:
            y, Hy = x, Hx
        if rel <= settings.rel_tol:
            p, _ = _svt(x - eta * (Hx - B), eta * lam)
            residual = float(np.linalg.norm(x - p))
            if residual <= settings.fp_tol * max(1.0, float(np.linalg.norm(x))):
                converged = True
                break
    final = f.loss(x) + lam * float(np.sum(np.linalg.svd(x, compute_uv=False)))
    if not math.isfinite(final):
        raise NonFiniteObjective("final objective is not finite")
    return EstimateReport(
        theta_hat=RepresentationMatrix(x),
        lambda_t=lam,
        iterations=it,
        final_objective=final,
        converged=converged,
        step_size=eta,
        residual=residual,
    )


def ridge_noise_level(history: History) -> float:
    """RMS residual of a near-unregularized ridge fit on ``vec(Theta)``.

    The ridge weight is ``1e-6 * ||Z||_F`` for the vectorized design ``Z``.
    Works in whichever of sample space or parameter space is smaller.
    """
    A = history.actions
    X = history.contexts
    Y = history.rewards
    n, L, d_x = X.shape
    N = n * L
    p = history.d_a * d_x
    Af = np.repeat(A, L, axis=0)
    Xf = X.reshape(N, d_x)
    y = Y.reshape(N)
    if N <= p:
        K = (Af @ Af.T) * (Xf @ Xf.T)
        w = 1e-6 * math.sqrt(max(float(np.trace(K)), 0.0))
        if w == 0.0:
            return float(np.sqrt(np.mean(y * y)))
        evals, Q = np.linalg.eigh(K)
        r = w * (Q @ ((Q.T @ y) / (np.maximum(evals, 0.0) + w)))
    else:
        Z = (Af[:, :, None] * Xf[:, None, :]).reshape(N, p)
        w = 1e-6 * float(np.linalg.norm(Z))
        if w == 0.0:
            return float(np.sqrt(np.mean(y * y)))
        theta = np.linalg.solve(Z.T @ Z + w * np.eye(p), Z.T @ y)
        r = y - Z @ theta
    return float(np.sqrt(np.mean(r * r)))


def _lambda0_formula(history: History, abs_resid: np.ndarray, factor: float = 2.0) -> float:
    A, X = history.actions, history.contexts
    n, L, _ = X.shape
    M = np.einsum("nl,nld->nd", abs_resid, X).T @ A  # d_x x d_a
    val = factor / (n * L) * float(np.linalg.norm(M, 2))
    return max(val, LAMBDA0_FLOOR)


def lambda0_from_residuals(history: History, theta, factor: float = 2.0) -> float:
    """``factor/(n L) * || sum |a' Theta x - y| x a' ||_op``, floored at 1e-8."""
    m = theta.entries if isinstance(theta, RepresentationMatrix) else np.asarray(theta, float)
    r = np.einsum("nd,nld->nl", history.actions @ m, history.contexts) - history.rewards
    return _lambda0_formula(history, np.abs(r), factor)


def zero_threshold(history: History) -> float:
    """``||grad L(0)||_op``: the smallest lambda whose solution is exactly zero."""
    f = _DirectLoss(history)
    return float(np.linalg.norm(f.B, 2))


def cross_fit(history: History, settings: SolverSettings = SolverSettings(), folds: int = 5, grid: int = 8):
    """K-fold cross-validation of lambda over rounds.

    The grid is ``lam_max * 10**(-k/2)`` for ``k = 1..grid`` where
    ``lam_max`` is the zero-solution threshold; ties favour the larger value.
    Returns ``(lam, oof)`` with the out-of-fold predictions at that lambda.
    """
    n = len(history)
    if n < 2:
        raise InsufficientData("cross-validation needs at least 2 rounds")
    A, X, Y = history.actions, history.contexts, history.rewards
    lam_max = zero_threshold(history)
    if lam_max == 0.0:
        return 1e-6, np.zeros_like(Y)
    lams = lam_max * 10.0 ** (-np.arange(1, grid + 1) / 2.0)
    k = min(folds, n)
    fold_of = np.arange(n) % k
    oof = np.zeros((lams.shape[0],) + Y.shape)
    for f in range(k):
        test = fold_of == f
        train = History.from_arrays(A[~test], X[~test], Y[~test], history.rounds[~test])
        warm = None
        for j, lam in enumerate(lams):
            warm = solve_nuclear_ls(train, float(lam), warm, settings).theta_hat
            oof[j][test] = np.einsum("nd,nld->nl", A[test] @ warm.entries, X[test])
    errs = ((oof - Y) ** 2).sum(axis=(1, 2))
    best = int(np.argmin(errs))
    return float(lams[best]), oof[best]


def bootstrap_lambda0(
    history: History,
    settings: SolverSettings = SolverSettings(),
    theta_boot=None,
    method: str = "cv",
    factor: float = 2.0,
) -> float:
    """Initial regularization level from the initialization rounds.

    Evaluates ``factor/(n L) * || sum |r_il| x_il a_i' ||_op`` on residuals
    ``r``. With an explicit ``theta_boot`` the residuals are in-sample.
    Otherwise ``method="cv"`` uses out-of-fold residuals at the
    cross-validated lambda, which stay honest when the initialization
    rounds are too few to pin down ``Theta``. ``method="ridge"`` fits the
    estimate at ``sigma_hat * sqrt(d_x / (n L))`` with ``sigma_hat`` the
    ridge residual RMS; it is also the fallback for a single round.
    """
    if len(history) == 0:
        raise InsufficientData("bootstrap needs at least one round")
    if theta_boot is not None:
        return lambda0_from_residuals(history, theta_boot, factor)
    if method == "cv" and len(history) >= 2:
        _, oof = cross_fit(history, settings)
        return _lambda0_formula(history, np.abs(oof - history.rewards), factor)
    if method not in ("cv", "ridge"):
        raise DataError(f"unknown bootstrap method {method!r}")
    sigma = ridge_noise_level(history)
    lam_boot = sigma * math.sqrt(history.d_x / (len(history) * history.L)) if sigma > 0 else 1e-6
    theta_boot = solve_nuclear_ls(history, max(lam_boot, 1e-6), settings=settings).theta_hat
    return lambda0_from_residuals(history, theta_boot, factor)

"""Synthetic reward environments and special-case model reductions."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ActionSpace, ContextBatch, History, RepresentationMatrix
from .errors import DataError, InsufficientData, ShapeError
from .estimator import SolverSettings, solve_nuclear_ls

# Demand-model coefficients of the personalized pricing benchmark.
PRICING_ALPHA = (1.1, -0.1, 0, 0.1, 0, 0.2, 0, 0.1, -0.1, 0, 0, 0.1, -0.1, 0.2, -0.2)
PRICING_BETA = tuple(
    -v for v in (0.5, 0.1, -0.1, 0, 0, 0, 0, 0.2, 0.1, 0.2, 0, 0.2, -0.1, -0.2, 0)
)
PRICING_NOISE_STD = 0.01

LOWRANK_DIAG = (1.0, 0.9, 0.9, 0.8, 0.5)


class BilinearEnv:
    """Rewards ``y_l = a' Theta* x_l + eps_l`` with standard normal contexts.

    Every round draws the ``L x d_x`` contexts and then ``L`` noise values,
    in that order, whatever the action, so two runs sharing a seed see the
    same contexts and noise.
    """

    def __init__(self, theta_star: RepresentationMatrix, sigma: float, L: int = 1, seed=None):
        if sigma < 0:
            raise DataError("sigma must be non-negative")
        if L < 1:
            raise DataError("L must be >= 1")
        self.theta_star = theta_star
        self.sigma = float(sigma)
        self.L = int(L)
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self._noise = None

    @property
    def d_a(self) -> int:
        return self.theta_star.d_a

    @property
    def d_x(self) -> int:
        return self.theta_star.d_x

    def next_contexts(self, t: int) -> ContextBatch:
        x = self.rng.standard_normal((self.L, self.d_x))
        self._noise = self.rng.standard_normal(self.L)
        return ContextBatch(t, x)

    def mean_rewards(self, a, batch: ContextBatch) -> np.ndarray:
        return batch.contexts @ (self.theta_star.entries.T @ np.asarray(a, float))

    def rewards(self, a, batch: ContextBatch) -> np.ndarray:
        if self._noise is None:
            raise DataError("next_contexts must be called before rewards")
        y = self.mean_rewards(a, batch) + self.sigma * self._noise
        self._noise = None
        return y

    def sample_round(self, a, t: int) -> tuple[ContextBatch, np.ndarray]:
        a = np.asarray(a, dtype=float)
        if a.shape != (self.d_a,):
            raise ShapeError(f"action has shape {a.shape}, expected ({self.d_a},)")
        batch = self.next_contexts(t)
        return batch, self.rewards(a, batch)


class PricingEnv(BilinearEnv):
    """Linear demand ``D = alpha'x + (beta'x) p + eps`` with revenue ``p D``.

    Actions are ``(p, p**2)``; the mean revenue is bilinear with
    ``Theta* = [alpha; beta]``. The demand noise is scaled by the price.
    """

    def __init__(self, alpha, beta, noise_std: float = PRICING_NOISE_STD, L: int = 1, seed=None):
        alpha = np.asarray(alpha, dtype=float)
        beta = np.asarray(beta, dtype=float)
        if alpha.shape != beta.shape or alpha.ndim != 1:
            raise ShapeError("alpha and beta must be vectors of equal length")
        self.alpha, self.beta = alpha, beta
        theta, _ = pricing_to_bilinear_arrays(alpha, beta)
        super().__init__(theta, noise_std, L, seed)

    @property
    def noise_std(self) -> float:
        return self.sigma

    def demand(self, p: float, x, eps: float = 0.0) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.alpha @ x + (self.beta @ x) * p + eps)

    def rewards(self, a, batch: ContextBatch) -> np.ndarray:
        if self._noise is None:
            raise DataError("next_contexts must be called before rewards")
        p = float(a[0])
        y = self.mean_rewards(a, batch) + p * self.sigma * self._noise
        self._noise = None
        return y

    def price_space(self, lower: float = 0.0, upper: float = 2.0) -> ActionSpace:
        return ActionSpace.lifted_interval(lower, upper, powers=(1, 2))

    def to_bilinear(self):
        return pricing_to_bilinear(self)


class MultiArmEnv(BilinearEnv):
    """K-armed Gaussian bandit in bilinear form: ``d_x = 1`` with context ``x = (1,)``."""

    def __init__(self, means, sigma: float, seed=None):
        theta, self.encode = reduce_multiarm(means)
        super().__init__(theta, sigma, 1, seed)

    def next_contexts(self, t: int) -> ContextBatch:
        self._noise = self.rng.standard_normal(1)
        return ContextBatch(t, np.ones((1, 1)))


def _mgs(m: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt with one re-orthogonalization pass."""
    q = np.array(m, dtype=float)
    k = q.shape[1]
    for j in range(k):
        for _ in range(2):
            for i in range(j):
                q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
        nrm = np.linalg.norm(q[:, j])
        if nrm == 0:
            raise DataError("rank-deficient draw in Gram-Schmidt")
        q[:, j] /= nrm
    return q


def make_lowrank_theta(d_a: int, d_x: int, r: int, diag=LOWRANK_DIAG, seed=None) -> RepresentationMatrix:
    """``Theta* = U D V'`` with orthogonalized Gaussian factors.

    ``V`` has orthonormal columns; ``U``'s orthonormal columns are rescaled
    to norm ``sqrt(d_a)``, so the singular values are ``sqrt(d_a) * diag``.
    """
    diag = np.asarray(diag, dtype=float)
    if r < 1 or r > min(d_a, d_x):
        raise DataError(f"rank {r} must lie in [1, min(d_a, d_x)] = [1, {min(d_a, d_x)}]")
    if diag.shape != (r,) or np.any(diag <= 0):
        raise DataError("diag must hold r positive entries")
    rng = np.random.default_rng(seed)
    u = _mgs(rng.standard_normal((d_a, r))) * math.sqrt(d_a)
    v = _mgs(rng.standard_normal((d_x, r)))
    return RepresentationMatrix((u * diag) @ v.T)


def make_sparse_theta(d_a: int, d_x: int, s0: int, seed=None) -> RepresentationMatrix:
    """Each row has ``s0`` standard normal entries at uniformly chosen columns."""
    if s0 < 1 or s0 > d_x:
        raise DataError(f"s0 must lie in [1, d_x={d_x}]")
    rng = np.random.default_rng(seed)
    theta = np.zeros((d_a, d_x))
    for i in range(d_a):
        cols = rng.choice(d_x, size=s0, replace=False)
        vals = rng.standard_normal(s0)
        while np.any(vals == 0):
            vals = rng.standard_normal(s0)
        theta[i, cols] = vals
    return RepresentationMatrix(theta)


def reduce_multiarm(means: Sequence[float]):
    """K-armed bandit as a ``K x 1`` matrix with a constant context ``x = (1,)``.

    Returns ``(theta, encode)`` where ``encode(i)`` maps the 1-based arm
    index to its basis vector.
    """
    means = np.asarray(means, dtype=float)
    if means.ndim != 1 or means.shape[0] < 1:
        raise DataError("need at least one arm mean")
    K = means.shape[0]

    def encode(arm: int) -> np.ndarray:
        if not 1 <= arm <= K:
            raise DataError(f"arm index {arm} out of range 1..{K}")
        e = np.zeros(K)
        e[arm - 1] = 1.0
        return e

    return RepresentationMatrix(means[:, None]), encode


def reduce_contextual_multiarm(betas) -> RepresentationMatrix:
    """Stack the per-arm parameter vectors as rows."""
    rows = [np.asarray(b, dtype=float) for b in betas]
    if not rows or any(r.shape != rows[0].shape or r.ndim != 1 for r in rows):
        raise ShapeError("betas must be equal-length vectors")
    return RepresentationMatrix(np.vstack(rows))


def lift_polynomial(p, order: int) -> np.ndarray:
    """All monomials of total degree <= ``order``, constant first.

    Graded lexicographic order: degree by degree, and within a degree by
    ``itertools.combinations_with_replacement`` of coordinate indices, so
    ``(a1, a2)`` at order 2 lifts to ``(1, a1, a2, a1^2, a1 a2, a2^2)``.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if order < 1:
        raise DataError("order must be >= 1")
    d = p.shape[0]
    out = []
    for deg in range(order + 1):
        for combo in itertools.combinations_with_replacement(range(d), deg):
            out.append(float(np.prod(p[list(combo)])) if combo else 1.0)
    return np.array(out)


def pricing_to_bilinear_arrays(alpha, beta):
    theta = RepresentationMatrix(np.vstack([np.asarray(alpha, float), np.asarray(beta, float)]))

    def encode(p: float) -> np.ndarray:
        return np.array([p, p * p], dtype=float)

    return theta, encode


def pricing_to_bilinear(env: PricingEnv):
    """``(Theta, encode)`` with ``Theta = [alpha; beta]`` and ``encode(p) = (p, p^2)``."""
    return pricing_to_bilinear_arrays(env.alpha, env.beta)


def fit_pseudo_ground_truth(
    logged: History, lam: float, settings: SolverSettings = SolverSettings()
) -> tuple[RepresentationMatrix, float]:
    """Fit ``Theta`` on the whole log and return it with the residual RMS."""
    if len(logged) == 0:
        raise InsufficientData("empty log")
    theta = solve_nuclear_ls(logged, lam, settings=settings).theta_hat
    return theta, residual_rms(logged, theta)


def residual_rms(history: History, theta) -> float:
    m = theta.entries if isinstance(theta, RepresentationMatrix) else np.asarray(theta, float)
    pred = np.einsum("nd,nld->nl", history.actions @ m, history.contexts)
    r = history.rewards - pred
    return float(np.sqrt(np.mean(r * r)))

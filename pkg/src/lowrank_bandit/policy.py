"""Exploit/explore action selection over a feasible action set."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from numpy.polynomial import polynomial as P

from .core import (
    BALL,
    BOX,
    COORDINATE_STD,
    LIFTED_INTERVAL,
    ActionSpace,
    AlgorithmConfig,
    ContextBatch,
    RepresentationMatrix,
    context_sum,
)
from .errors import InsufficientHistory, ShapeError

VARIANCE_FLOOR = 1e-12


def _linear_argmax(g: np.ndarray, space: ActionSpace, rng: Optional[np.random.Generator]):
    """Maximize ``<a, g>`` over ``space``; returns ``(action, degenerate)``.

    Ties go to the largest-norm maximizer.
    """
    if space.kind == BALL:
        nrm = float(np.linalg.norm(g))
        if nrm == 0.0:
            rng = rng if rng is not None else np.random.default_rng(0)
            v = rng.standard_normal(g.shape[0])
            return v / np.linalg.norm(v), True
        return g / nrm, False
    if space.dim != g.shape[0]:
        raise ShapeError(f"action space has dimension {space.dim}, objective has {g.shape[0]}")
    if space.kind == BOX:
        lo, hi = space.lower, space.upper
        a = np.where(g > 0, hi, lo)
        ties = g == 0
        if np.any(ties):
            big = np.where(np.abs(hi) >= np.abs(lo), hi, lo)
            equal = ties & (np.abs(hi) == np.abs(lo))
            if np.any(equal):
                rng = rng if rng is not None else np.random.default_rng(0)
                coin = rng.random(g.shape[0]) < 0.5
                big = np.where(equal, np.where(coin, hi, lo), big)
            a = np.where(ties, big, a)
        return a.astype(float), bool(np.all(g == 0))
    return _interval_argmax(g, space)


def _interval_argmax(g: np.ndarray, space: ActionSpace):
    lo, hi = float(space.lower[0]), float(space.upper[0])
    coef = np.zeros(max(space.powers) + 1)
    for k, gk in zip(space.powers, g):
        coef[k] += gk
    candidates = [lo, hi]
    deriv = P.polyder(coef)
    nz = np.flatnonzero(deriv)
    if nz.size:
        deriv = deriv[: nz[-1] + 1]
        if deriv.shape[0] == 2:
            candidates.append(-deriv[0] / deriv[1])
        elif deriv.shape[0] > 2:
            for r in P.polyroots(deriv):
                if abs(r.imag) <= 1e-12 * max(1.0, abs(r.real)):
                    candidates.append(float(r.real))
    best, best_val, best_norm = None, -math.inf, -math.inf
    for p in candidates:
        if not lo <= p <= hi:
            continue
        val = float(P.polyval(p, coef))
        a = space.encode(p)
        nrm = float(np.linalg.norm(a))
        if val > best_val or (val == best_val and nrm > best_norm):
            best, best_val, best_norm = a, val, nrm
    return best, bool(np.all(g == 0))


def optimal_action(
    theta,
    batch: ContextBatch,
    space: ActionSpace,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Action maximizing the summed estimated reward ``sum_l a' Theta x_l``."""
    return exploit(theta, batch, space, rng)[0]


def exploit(theta, batch: ContextBatch, space: ActionSpace, rng=None) -> tuple[np.ndarray, bool]:
    m = theta.entries if isinstance(theta, RepresentationMatrix) else np.asarray(theta, float)
    b = context_sum(batch)
    if m.shape[1] != b.shape[0]:
        raise ShapeError(f"theta has {m.shape[1]} columns but contexts have length {b.shape[0]}")
    return _linear_argmax(m @ b, space, rng)


def is_exploration_round(t: int, exponent: float = 1.5) -> bool:
    """True iff ``t == floor(w**exponent)`` for some integer ``w >= 1``."""
    if t < 1:
        return False
    w0 = math.ceil(t ** (1.0 / exponent))
    # floor(w**e) = t needs t <= w**e < t + 1; float roots can be off by one.
    for w in (w0 - 1, w0, w0 + 1):
        if w >= 1 and math.floor(w**exponent) == t:
            return True
    return False


def exploration_rounds(T: int, exponent: float = 1.5) -> list[int]:
    return [t for t in range(1, T + 1) if is_exploration_round(t, exponent)]


@dataclass
class PolicyState:
    config: AlgorithmConfig
    action_space: ActionSpace
    rng: np.random.Generator
    past_actions: list = field(default_factory=list)
    last_explored: bool = False
    last_degenerate: bool = False
    last_left_space: bool = False

    @classmethod
    def create(cls, config: AlgorithmConfig, space: ActionSpace, rng=None) -> "PolicyState":
        if rng is None:
            rng = np.random.default_rng(config.seed)
        return cls(config, space, rng)


def _coordinate_variance(values: np.ndarray) -> np.ndarray:
    if values.shape[0] < 2:
        raise InsufficientHistory("coordinate-std perturbation needs at least 2 past actions")
    return np.maximum(values.std(axis=0, ddof=1), VARIANCE_FLOOR)


def perturb(a_hat, state: PolicyState) -> np.ndarray:
    """Add Gaussian exploration noise to ``a_hat``.

    Isotropic noise has variance ``h`` per coordinate. The coordinate-std
    variant uses the sample standard deviation of each coordinate over past
    actions as that coordinate's variance. Lifted-interval actions are
    perturbed in their scalar and re-encoded.
    """
    a_hat = np.asarray(a_hat, dtype=float)
    space, cfg = state.action_space, state.config
    if space.kind == LIFTED_INTERVAL:
        p = space.scalar_of(a_hat)
        if cfg.perturbation == COORDINATE_STD:
            past = np.array([[space.scalar_of(a)] for a in state.past_actions]).reshape(-1, 1)
            var = float(_coordinate_variance(past)[0])
        else:
            var = cfg.h
        return space.encode(p + math.sqrt(var) * state.rng.standard_normal())
    if cfg.perturbation == COORDINATE_STD:
        var = _coordinate_variance(np.asarray(state.past_actions, dtype=float).reshape(-1, a_hat.shape[0]))
    else:
        var = np.full(a_hat.shape[0], cfg.h)
    return a_hat + np.sqrt(var) * state.rng.standard_normal(a_hat.shape[0])


def expand_action_space(space: ActionSpace, a) -> ActionSpace:
    """Push box (or price interval) bounds out to include ``a``; balls are unchanged."""
    if space.kind == BALL:
        return space
    if space.kind == LIFTED_INTERVAL:
        p = space.scalar_of(a)
        return replace(
            space,
            lower=np.minimum(space.lower, p),
            upper=np.maximum(space.upper, p),
        )
    a = np.asarray(a, dtype=float)
    return replace(space, lower=np.minimum(space.lower, a), upper=np.maximum(space.upper, a))


def step(theta_hat, next_batch: ContextBatch, state: PolicyState, t: int):
    """Choose the action for round ``t + 1`` given the estimate after round ``t``.

    The round is an exploration round when ``t + 1`` is on the schedule.
    Returns ``(action, state)``; ``state`` is updated in place.
    """
    if t < state.config.t_init:
        raise ValueError(f"policy steps start at t_init={state.config.t_init}, got t={t}")
    a_hat, degenerate = exploit(theta_hat, next_batch, state.action_space, state.rng)
    cfg = state.config
    explored = cfg.explore and is_exploration_round(t + 1, cfg.exploration_exponent)
    left = False
    if explored:
        a = perturb(a_hat, state)
        left = not state.action_space.contains(a)
        state.action_space = expand_action_space(state.action_space, a)
    else:
        a = a_hat
    state.past_actions.append(a)
    state.last_explored = explored
    state.last_degenerate = degenerate
    state.last_left_space = left
    return a, state

"""End-to-end trials, regret bookkeeping, aggregation and log validation."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import policy as pol
from .core import ActionSpace, AlgorithmConfig, ContextBatch, History, RepresentationMatrix
from .environments import BilinearEnv
from .errors import DataError, DegenerateDenominator, InsufficientData, NonFiniteObjective, ShapeError
from .estimator import (
    SolverSettings,
    bootstrap_lambda0,
    lambda_schedule,
    solve_nuclear_ls,
)


@dataclass
class TrialMetrics:
    """Per-round trace of one trial; arrays are indexed by ``t - 1``.

    ``cum_reward`` accumulates mean (noise-free) rewards. Estimator
    columns are NaN before the first fit.
    """

    seed: int
    inst_regret: np.ndarray
    cum_reward: np.ndarray
    explored: np.ndarray
    degenerate: np.ndarray
    left_space: np.ndarray
    lambda_t: np.ndarray
    iterations: np.ndarray
    nuclear_norm: np.ndarray
    frob_err: np.ndarray
    actions: np.ndarray
    theta_hat: Optional[RepresentationMatrix] = None
    lambda0: float = math.nan
    gain: Optional[np.ndarray] = None

    @property
    def T(self) -> int:
        return self.inst_regret.shape[0]

    @property
    def avg_regret(self) -> np.ndarray:
        return np.cumsum(self.inst_regret) / np.arange(1, self.T + 1)


@dataclass
class AggregateReport:
    n_trials: int
    mean_avg_regret: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    mean_gain: np.ndarray
    gain_q05: np.ndarray
    gain_q95: np.ndarray

    @property
    def T(self) -> int:
        return self.mean_avg_regret.shape[0]


def clairvoyant_action(theta_star, batch: ContextBatch, space: ActionSpace, rng=None) -> np.ndarray:
    """Best action under the true matrix; same argmax rule as the policy."""
    return pol.optimal_action(theta_star, batch, space, rng)


def instantaneous_regret(theta_star, batch: ContextBatch, a_star, a) -> float:
    """``(a* - a)' Theta* sum_l x_l``."""
    m = theta_star.entries if isinstance(theta_star, RepresentationMatrix) else np.asarray(theta_star, float)
    a_star, a = np.asarray(a_star, float), np.asarray(a, float)
    if a_star.shape != (m.shape[0],) or a.shape != (m.shape[0],):
        raise ShapeError(f"actions must have length {m.shape[0]}")
    d = a_star - a
    return float(d @ (m @ batch.contexts.sum(axis=0)))


def trial_streams(seed: int):
    """Independent generators for initial actions, the policy and the clairvoyant."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def run_trial(
    env: BilinearEnv,
    config: AlgorithmConfig,
    T: int,
    solver: SolverSettings = SolverSettings(),
    space: Optional[ActionSpace] = None,
    init_actions=None,
    callback: Optional[Callable[[int, RepresentationMatrix], None]] = None,
    track_error: bool = True,
) -> TrialMetrics:
    """Run the two-phase learn/act loop for ``T`` rounds.

    Rounds ``1..t_init`` play ``init_actions`` or uniform random feasible
    actions. From then on each round refits the estimate on all data so
    far (warm-started, ``lam_t = lam0 / sqrt(t)``) and picks the next action
    with the policy. ``callback(t, theta_hat)`` sees every fitted estimate.
    """
    if T <= config.t_init:
        raise DataError(f"T={T} must exceed t_init={config.t_init}")
    space = space if space is not None else ActionSpace.unit_ball()
    d_a, d_x, L = env.d_a, env.d_x, env.L
    init_rng, policy_rng, oracle_rng = trial_streams(config.seed)
    state = pol.PolicyState.create(config, space, policy_rng)
    theta_star = env.theta_star
    hist = History(d_a, d_x, L, capacity=T)

    inst = np.zeros(T)
    cum = np.zeros(T)
    explored = np.zeros(T, dtype=bool)
    degenerate = np.zeros(T, dtype=bool)
    left = np.zeros(T, dtype=bool)
    lam_col = np.full(T, np.nan)
    iters = np.zeros(T, dtype=np.int64)
    nuc = np.full(T, np.nan)
    frob = np.full(T, np.nan)
    actions = np.zeros((T, d_a))

    theta_hat = RepresentationMatrix.zeros(d_a, d_x)
    lam0 = config.lambda0
    total = 0.0
    for t in range(1, T + 1):
        batch = env.next_contexts(t)
        if t <= config.t_init:
            if init_actions is not None:
                a = np.asarray(init_actions[t - 1], dtype=float)
            else:
                a = state.action_space.sample(init_rng, d_a)
            state.past_actions.append(a)
        else:
            a, state = pol.step(theta_hat, batch, state, t - 1)
            explored[t - 1] = state.last_explored
            degenerate[t - 1] = state.last_degenerate
            left[t - 1] = state.last_left_space
        a_star = clairvoyant_action(theta_star, batch, state.action_space, oracle_rng)
        inst[t - 1] = instantaneous_regret(theta_star, batch, a_star, a)
        y = env.rewards(a, batch)
        hist.append(a, batch.contexts, y, round=t)
        actions[t - 1] = a
        total += float(a @ (theta_star.entries @ batch.contexts.sum(axis=0)))
        cum[t - 1] = total

        if t < config.t_init:
            continue
        try:
            if lam0 is None:
                lam0 = bootstrap_lambda0(
                    hist, solver, method=config.bootstrap, factor=config.lambda0_factor
                )
            since = t - config.t_init
            if since == 0 or since % config.refit_every == 0 or state.last_explored:
                rep = solve_nuclear_ls(hist, lambda_schedule(lam0, t), theta_hat, solver)
                theta_hat = rep.theta_hat
                iters[t - 1] = rep.iterations
            lam_col[t - 1] = lambda_schedule(lam0, t)
        except NonFiniteObjective as exc:
            raise NonFiniteObjective(f"trial seed={config.seed} aborted at round {t}: {exc}") from exc
        nuc[t - 1] = theta_hat.nuclear_norm()
        if track_error:
            frob[t - 1] = float(np.linalg.norm(theta_hat.entries - theta_star.entries))
        if callback is not None:
            callback(t, theta_hat)

    return TrialMetrics(
        seed=config.seed,
        inst_regret=inst,
        cum_reward=cum,
        explored=explored,
        degenerate=degenerate,
        left_space=left,
        lambda_t=lam_col,
        iterations=iters,
        nuclear_norm=nuc,
        frob_err=frob,
        actions=actions,
        theta_hat=theta_hat,
        lambda0=float(lam0),
    )


def run_trials(jobs: Sequence[Callable[[], TrialMetrics]], threads: int = 1) -> list[TrialMetrics]:
    """Run zero-argument trial callables; results keep the input order."""
    if threads <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def nearest_rank_quantile(values: np.ndarray, q: float, axis: int = 0) -> np.ndarray:
    """Smallest value with at least a fraction ``q`` of the data at or below it."""
    v = np.sort(np.asarray(values, dtype=float), axis=axis)
    n = v.shape[axis]
    k = max(math.ceil(q * n), 1) - 1
    return np.take(v, k, axis=axis)


def aggregate(trials: Sequence[TrialMetrics]) -> AggregateReport:
    if not trials:
        raise InsufficientData("no trials to aggregate")
    T = trials[0].T
    if any(tr.T != T for tr in trials):
        raise ShapeError("trials have different horizons")
    reg = np.vstack([tr.avg_regret for tr in trials])
    if all(tr.gain is not None for tr in trials):
        gains = np.vstack([tr.gain for tr in trials])
        with np.errstate(all="ignore"):
            mean_gain = gains.mean(axis=0)
        g05 = nearest_rank_quantile(gains, 0.05)
        g95 = nearest_rank_quantile(gains, 0.95)
    else:
        mean_gain = g05 = g95 = np.full(T, np.nan)
    return AggregateReport(
        n_trials=len(trials),
        mean_avg_regret=reg.mean(axis=0),
        q05=nearest_rank_quantile(reg, 0.05),
        q95=nearest_rank_quantile(reg, 0.95),
        mean_gain=mean_gain,
        gain_q05=g05,
        gain_q95=g95,
    )


def logged_mean_rewards(logged: History, theta_star) -> np.ndarray:
    m = theta_star.entries if isinstance(theta_star, RepresentationMatrix) else np.asarray(theta_star, float)
    b = logged.contexts.sum(axis=1)
    return np.einsum("nd,de,ne->n", logged.actions, m, b)


def replay_gain(logged: History, policy_trace: TrialMetrics, theta_star, sigma=None) -> np.ndarray:
    """Relative cumulative mean-reward gain of the policy over the logged actions.

    Both cumulative sums use noise-free mean rewards under ``theta_star``;
    ``sigma`` is accepted for symmetry with the simulator and unused.
    Rounds whose logged cumulative reward is below ``1e-12`` in magnitude
    are NaN.
    """
    if len(logged) != policy_trace.T:
        raise ShapeError(f"log has {len(logged)} rounds, trace has {policy_trace.T}")
    base = np.cumsum(logged_mean_rewards(logged, theta_star))
    out = np.full(base.shape[0], np.nan)
    ok = np.abs(base) >= 1e-12
    out[ok] = (policy_trace.cum_reward[ok] - base[ok]) / np.abs(base[ok])
    return out


class ReplayEnv(BilinearEnv):
    """Replays logged contexts; rewards come from a pseudo-ground-truth model."""

    def __init__(self, logged: History, theta_star: RepresentationMatrix, sigma: float, seed=None):
        super().__init__(theta_star, sigma, logged.L, seed)
        self.logged = logged

    def next_contexts(self, t: int) -> ContextBatch:
        self._noise = self.rng.standard_normal(self.L)
        return ContextBatch(t, self.logged.contexts[t - 1])


def logged_box(logged: History) -> ActionSpace:
    return ActionSpace.box(logged.actions.min(axis=0), logged.actions.max(axis=0))


def run_replay_trial(
    logged: History,
    theta_star: RepresentationMatrix,
    sigma: float,
    config: AlgorithmConfig,
    solver: SolverSettings = SolverSettings(),
    env_seed=None,
) -> TrialMetrics:
    """Policy vs. logged actions on the logged contexts.

    The first ``t_init`` rounds replay the logged actions; the action space
    is the bounding box of the logged actions.
    """
    env = ReplayEnv(logged, theta_star, sigma, seed=env_seed)
    tr = run_trial(
        env,
        config,
        len(logged),
        solver,
        space=logged_box(logged),
        init_actions=logged.actions[: config.t_init],
    )
    tr.gain = replay_gain(logged, tr, theta_star, sigma)
    return tr


def loo_prediction_error(
    logged: History,
    lam: float,
    settings: SolverSettings = SolverSettings(),
) -> float:
    """Leave-one-round-out prediction error ``sum (y - yhat)^2 / sum y^2``.

    Each round's ``L`` rewards are predicted by a fit on all other rounds.
    """
    n = len(logged)
    if n < 3:
        raise InsufficientData("leave-one-out needs at least 3 rounds")
    Y = logged.rewards
    denom = float(np.sum(Y * Y))
    if denom == 0.0:
        raise DegenerateDenominator("all logged rewards are zero")
    full = solve_nuclear_ls(logged, lam, settings=settings).theta_hat
    num = 0.0
    for i in range(n):
        fold = logged.without_round(int(logged.rounds[i]))
        th = solve_nuclear_ls(fold, lam, warm_start=full, settings=settings).theta_hat
        yhat = logged.contexts[i] @ (th.entries.T @ logged.actions[i])
        num += float(np.sum((Y[i] - yhat) ** 2))
    return num / denom

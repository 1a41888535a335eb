"""Shared domain types for the bilinear reward model ``E[y] = a' Theta x``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, ShapeError

BALL = "ball"
BOX = "box"
LIFTED_INTERVAL = "lifted_interval"

ISOTROPIC = "isotropic"
COORDINATE_STD = "coordinate_std"


def _finite_array(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def as_action(values, d_a: Optional[int] = None) -> np.ndarray:
    """Validate an action vector; returns a read-only float array."""
    a = _finite_array(values, 1, "action")
    if d_a is not None and a.shape[0] != d_a:
        raise ShapeError(f"action has length {a.shape[0]}, expected {d_a}")
    return a


@dataclass(frozen=True)
class RepresentationMatrix:
    """A ``d_a x d_x`` interaction matrix between actions and contexts."""

    entries: np.ndarray

    def __post_init__(self):
        arr = _finite_array(self.entries, 2, "representation matrix")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"empty representation matrix {arr.shape}")
        object.__setattr__(self, "entries", arr)

    @classmethod
    def zeros(cls, d_a: int, d_x: int) -> "RepresentationMatrix":
        return cls(np.zeros((d_a, d_x)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def d_a(self) -> int:
        return self.entries.shape[0]

    @property
    def d_x(self) -> int:
        return self.entries.shape[1]

    def svd(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Thin SVD ``(U, S, V)`` with ``entries = U @ diag(S) @ V.T``.

        Each left singular vector is signed so that its largest-magnitude
        entry is non-negative; the matching right vector is flipped with it.
        """
        u, s, vt = np.linalg.svd(self.entries, full_matrices=False)
        v = vt.T.copy()
        for j in range(s.shape[0]):
            k = int(np.argmax(np.abs(u[:, j])))
            if u[k, j] < 0:
                u[:, j] = -u[:, j]
                v[:, j] = -v[:, j]
        return u, s, v

    def nuclear_norm(self) -> float:
        return float(np.sum(np.linalg.svd(self.entries, compute_uv=False)))

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.entries))


@dataclass(frozen=True)
class ContextBatch:
    """The ``L`` context vectors observed in one round, stacked as rows."""

    round: int
    contexts: np.ndarray

    def __post_init__(self):
        if int(self.round) < 0:
            raise DataError(f"round must be non-negative, got {self.round}")
        arr = _finite_array(self.contexts, 2, "contexts")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"context batch needs L >= 1 and d_x >= 1, got {arr.shape}")
        object.__setattr__(self, "contexts", arr)

    @property
    def L(self) -> int:
        return self.contexts.shape[0]

    @property
    def d_x(self) -> int:
        return self.contexts.shape[1]

    def total(self) -> np.ndarray:
        return context_sum(self)


@dataclass(frozen=True)
class RewardSample:
    round: int
    target: int
    reward: float

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise DataError("reward must be finite")
        if self.target < 1:
            raise DataError("target index is 1-based")


def context_sum(batch: ContextBatch) -> np.ndarray:
    """Sum of the round's context vectors over targets."""
    return batch.contexts.sum(axis=0)


def expected_reward(theta, a, x) -> float:
    """Mean reward ``a' Theta x``."""
    m = theta.entries if isinstance(theta, RepresentationMatrix) else np.asarray(theta, dtype=float)
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    if a.shape != (m.shape[0],) or x.shape != (m.shape[1],):
        raise ShapeError(
            f"expected a of length {m.shape[0]} and x of length {m.shape[1]}, "
            f"got {a.shape} and {x.shape}"
        )
    return float(a @ m @ x)


class History:
    """Append-only log of ``(action, contexts, rewards)`` rounds.

    Storage is a set of growable buffers; ``actions``, ``contexts``,
    ``rewards`` and ``rounds`` are read-only views of the filled prefix.
    ``sufficient_stats`` lazily builds the Gram matrix of the vectorized
    design and keeps it current on later appends.
    """

    def __init__(self, d_a: int, d_x: int, L: int, capacity: int = 64):
        if min(d_a, d_x, L) < 1:
            raise ShapeError("d_a, d_x and L must all be >= 1")
        self.d_a, self.d_x, self.L = int(d_a), int(d_x), int(L)
        cap = max(int(capacity), 1)
        self._a = np.empty((cap, self.d_a))
        self._x = np.empty((cap, self.L, self.d_x))
        self._y = np.empty((cap, self.L))
        self._t = np.empty(cap, dtype=np.int64)
        self._n = 0
        self._stats = None

    @classmethod
    def from_arrays(cls, actions, contexts, rewards, rounds=None) -> "History":
        actions = np.asarray(actions, dtype=float)
        contexts = np.asarray(contexts, dtype=float)
        rewards = np.asarray(rewards, dtype=float)
        if actions.ndim != 2 or contexts.ndim != 3 or rewards.ndim != 2:
            raise ShapeError("expected actions (n,d_a), contexts (n,L,d_x), rewards (n,L)")
        n = actions.shape[0]
        if contexts.shape[0] != n or rewards.shape != (n, contexts.shape[1]):
            raise ShapeError(
                f"inconsistent shapes {actions.shape}, {contexts.shape}, {rewards.shape}"
            )
        hist = cls(actions.shape[1], contexts.shape[2], contexts.shape[1], capacity=max(n, 1))
        if rounds is None:
            rounds = np.arange(1, n + 1)
        for i in range(n):
            hist.append(actions[i], contexts[i], rewards[i], round=int(rounds[i]))
        return hist

    def __len__(self) -> int:
        return self._n

    @property
    def actions(self) -> np.ndarray:
        return self._view(self._a)

    @property
    def contexts(self) -> np.ndarray:
        return self._view(self._x)

    @property
    def rewards(self) -> np.ndarray:
        return self._view(self._y)

    @property
    def rounds(self) -> np.ndarray:
        return self._view(self._t)

    def _view(self, buf):
        v = buf[: self._n]
        v.setflags(write=False)
        return v

    def _grow(self):
        cap = 2 * self._a.shape[0]
        for name in ("_a", "_x", "_y", "_t"):
            old = getattr(self, name)
            new = np.empty((cap,) + old.shape[1:], dtype=old.dtype)
            new[: self._n] = old[: self._n]
            setattr(self, name, new)

    def append(self, action, contexts, rewards, round: Optional[int] = None) -> None:
        a = np.asarray(action, dtype=float)
        x = np.asarray(contexts, dtype=float)
        y = np.asarray(rewards, dtype=float).reshape(-1)
        if a.shape != (self.d_a,):
            raise ShapeError(f"action has shape {a.shape}, expected ({self.d_a},)")
        if x.shape != (self.L, self.d_x):
            raise ShapeError(f"contexts have shape {x.shape}, expected ({self.L}, {self.d_x})")
        if y.shape != (self.L,):
            raise ShapeError(f"rewards have shape {y.shape}, expected ({self.L},)")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("history entries must be finite")
        last = int(self._t[self._n - 1]) if self._n else 0
        t = last + 1 if round is None else int(round)
        if t <= last:
            raise DataError(f"rounds must be strictly increasing: {t} after {last}")
        if self._n == self._a.shape[0]:
            self._grow()
        i = self._n
        self._a[i], self._x[i], self._y[i], self._t[i] = a, x, y, t
        self._n += 1
        if self._stats is not None:
            self._accumulate(i, i + 1)

    def batch(self, i: int) -> ContextBatch:
        """Context batch of the ``i``-th stored round (0-based position)."""
        return ContextBatch(int(self._t[i]), self._x[i])

    def without_round(self, t: int) -> "History":
        keep = self.rounds != t
        if keep.all():
            raise DataError(f"round {t} not in history")
        return History.from_arrays(
            self.actions[keep], self.contexts[keep], self.rewards[keep], self.rounds[keep]
        )

    def head(self, n: int) -> "History":
        return History.from_arrays(
            self.actions[:n], self.contexts[:n], self.rewards[:n], self.rounds[:n]
        )

    # Gram-form sufficient statistics of the vectorized least-squares design.
    # z = vec(a x') in row-major order, so Theta.ravel() @ z = a' Theta x.
    def sufficient_stats(self) -> tuple[np.ndarray, np.ndarray, float]:
        """Unnormalized ``(sum z z', sum y z, sum y^2)`` over all samples."""
        if self._stats is None:
            p = self.d_a * self.d_x
            self._stats = [np.zeros((p, p)), np.zeros(p), 0.0]
            self._accumulate(0, self._n)
        gram, zy, yy = self._stats
        return gram, zy, yy

    def _accumulate(self, lo: int, hi: int) -> None:
        st = self._stats
        p = self.d_a * self.d_x
        # chunks keep the (rows, p) design block near 32 MB
        step = max(1, (1 << 22) // max(p * self._x.shape[1], 1))
        for s in range(lo, hi, step):
            e = min(s + step, hi)
            A, X, Y = self._a[s:e], self._x[s:e], self._y[s:e]
            Z = np.einsum("na,nld->nlad", A, X).reshape(-1, p)
            st[0] += Z.T @ Z
            st[1] += Z.T @ Y.ravel()
            st[2] += float(np.sum(Y * Y))


@dataclass(frozen=True)
class ActionSpace:
    """Feasible action set.

    ``ball``: the unit Euclidean ball. ``box``: per-coordinate bounds
    ``lower <= a <= upper``. ``lifted_interval``: a scalar ``p`` in
    ``[lower, upper]`` encoded as ``a = (p**k for k in powers)``, used for
    price actions such as ``(p, p**2)``.
    """

    kind: str
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    powers: tuple = ()

    def __post_init__(self):
        if self.kind == BALL:
            return
        if self.kind not in (BOX, LIFTED_INTERVAL):
            raise DataError(f"unknown action space kind {self.kind!r}")
        lo = _finite_array(np.atleast_1d(self.lower), 1, "lower")
        hi = _finite_array(np.atleast_1d(self.upper), 1, "upper")
        if lo.shape != hi.shape:
            raise ShapeError("lower and upper bounds differ in length")
        if np.any(lo > hi):
            raise DataError("box requires lower <= upper in every coordinate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if self.kind == LIFTED_INTERVAL:
            if lo.shape != (1,):
                raise ShapeError("lifted interval has a scalar range")
            if not self.powers or any(int(k) != k or k < 0 for k in self.powers):
                raise DataError("lifted interval needs non-negative integer powers")
            object.__setattr__(self, "powers", tuple(int(k) for k in self.powers))

    @classmethod
    def unit_ball(cls) -> "ActionSpace":
        return cls(BALL)

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "ActionSpace":
        return cls(BOX, np.asarray(lower, float), np.asarray(upper, float))

    @classmethod
    def lifted_interval(cls, lower: float, upper: float, powers=(1, 2)) -> "ActionSpace":
        return cls(LIFTED_INTERVAL, np.array([lower], float), np.array([upper], float), tuple(powers))

    @property
    def dim(self) -> Optional[int]:
        if self.kind == BOX:
            return self.lower.shape[0]
        if self.kind == LIFTED_INTERVAL:
            return len(self.powers)
        return None

    def encode(self, p: float) -> np.ndarray:
        """Lift a scalar into the action coordinates (lifted intervals only)."""
        if self.kind != LIFTED_INTERVAL:
            raise DataError("encode applies to lifted intervals")
        return np.array([float(p) ** k for k in self.powers])

    def contains(self, a, tol: float = 1e-12) -> bool:
        a = np.asarray(a, dtype=float)
        if self.kind == BALL:
            return bool(np.linalg.norm(a) <= 1.0 + tol)
        if self.kind == BOX:
            return bool(np.all(a >= self.lower - tol) and np.all(a <= self.upper + tol))
        p = self.scalar_of(a)
        return bool(self.lower[0] - tol <= p <= self.upper[0] + tol) and np.allclose(
            self.encode(p), a, rtol=1e-9, atol=tol
        )

    def scalar_of(self, a) -> float:
        """Recover the scalar from a lifted action via its first non-constant power."""
        for k, v in zip(self.powers, a):
            if k == 1:
                return float(v)
        for k, v in zip(self.powers, a):
            if k % 2 == 1:
                return float(np.sign(v) * abs(v) ** (1.0 / k))
        raise DataError("scalar is not recoverable without an odd power")

    def sample(self, rng: np.random.Generator, d_a: Optional[int] = None) -> np.ndarray:
        """Uniform random feasible action."""
        if self.kind == BALL:
            if d_a is None:
                raise DataError("d_a is required to sample the unit ball")
            g = rng.standard_normal(d_a)
            nrm = np.linalg.norm(g)
            radius = rng.random() ** (1.0 / d_a)
            return g / nrm * radius if nrm > 0 else np.zeros(d_a)
        if self.kind == BOX:
            return self.lower + (self.upper - self.lower) * rng.random(self.lower.shape[0])
        p = self.lower[0] + (self.upper[0] - self.lower[0]) * rng.random()
        return self.encode(p)


@dataclass(frozen=True)
class AlgorithmConfig:
    t_init: int = 10
    h: float = 0.1
    lambda0: Optional[float] = None  # None: bootstrap from the initialization rounds
    exploration_exponent: float = 1.5
    perturbation: str = ISOTROPIC
    explore: bool = True
    seed: int = 0
    refit_every: int = 1
    lambda0_factor: float = 2.0  # leading constant of the bootstrap formula
    bootstrap: str = "cv"  # "cv" | "ridge"

    def __post_init__(self):
        if int(self.t_init) < 1:
            raise DataError("t_init must be >= 1")
        if not self.h > 0:
            raise DataError("h must be positive")
        if self.lambda0 is not None and not self.lambda0 > 0:
            raise DataError("lambda0 must be positive (or None for auto)")
        if not self.exploration_exponent > 1:
            raise DataError("exploration_exponent must exceed 1")
        if self.perturbation not in (ISOTROPIC, COORDINATE_STD):
            raise DataError(f"unknown perturbation {self.perturbation!r}")
        if int(self.refit_every) < 1:
            raise DataError("refit_every must be >= 1")
        if not self.lambda0_factor > 0:
            raise DataError("lambda0_factor must be positive")
        if self.bootstrap not in ("cv", "ridge"):
            raise DataError(f"unknown bootstrap method {self.bootstrap!r}")

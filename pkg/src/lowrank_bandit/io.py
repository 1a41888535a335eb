"""CSV/JSON readers and writers, experiment configuration and trial seeding.

Floats are written with ``repr`` (shortest round-trip decimal), so every
writer is a deterministic function of its inputs and reading a file back
reproduces the values bit for bit. NaN cells are written blank.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, fields
from typing import Any, Optional, Sequence

import numpy as np

from .core import ActionSpace, AlgorithmConfig, History, RepresentationMatrix
from .environments import (
    LOWRANK_DIAG,
    PRICING_ALPHA,
    PRICING_BETA,
    PRICING_NOISE_STD,
    BilinearEnv,
    MultiArmEnv,
    PricingEnv,
    make_lowrank_theta,
    make_sparse_theta,
)
from .errors import ConfigError, DataError, DimensionMismatch, MissingRound, NonNumericCell
from .estimator import SolverSettings
from .harness import AggregateReport, TrialMetrics

MASK64 = (1 << 64) - 1
PRNG_NAME = "numpy.random.PCG64 seeded through SeedSequence"

METRICS_HEADER = (
    "trial", "t", "inst_regret", "avg_regret", "cum_reward",
    "explored", "degenerate", "lambda_t", "frob_err",
)
AGGREGATE_HEADER = ("t", "mean_avg_regret", "q05", "q95", "mean_gain")


# -- seeds -------------------------------------------------------------------

def splitmix64(x: int) -> int:
    """One step of the SplitMix64 generator: advance by the golden gamma and mix."""
    z = (int(x) + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trial_seed(master: int, trial_index: int) -> int:
    """``splitmix64(master xor trial_index)`` on 64-bit unsigned integers."""
    return splitmix64((int(master) & MASK64) ^ int(trial_index))


def env_rng(seed: int) -> np.random.Generator:
    # fourth child of the trial's SeedSequence; the harness uses the first three
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))


def rng_metadata() -> dict:
    return {"prng": PRNG_NAME, "numpy_version": np.__version__}


# -- formatting --------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def _write_rows(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


# -- logged data -------------------------------------------------------------

def _read_table(path: str, fixed: Sequence[str], prefix: Optional[str]):
    """Read a headed CSV; returns ``(header, int_columns, float_matrix)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file, header required")
    header = [h.strip() for h in rows[0]]
    k = len(fixed)
    if header[:k] != list(fixed):
        raise DataError(f"{path}: header must start with {','.join(fixed)}, got {','.join(header[:k])}")
    rest = header[k:]
    if prefix is None:
        if rest:
            raise DataError(f"{path}: unexpected columns {rest}")
    else:
        want = [f"{prefix}_{i + 1}" for i in range(len(rest))]
        if not rest or rest != want:
            raise DataError(f"{path}: value columns must be {prefix}_1..{prefix}_n, got {rest}")
    ints = np.zeros((len(rows) - 1, k - (prefix is None)), dtype=np.int64)
    n_int = ints.shape[1]
    vals = np.zeros((len(rows) - 1, len(header) - n_int))
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != len(header):
            raise DimensionMismatch(f"{path}: row {line} has {len(row)} cells, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                if j < n_int:
                    ints[i, j] = int(cell)
                else:
                    vals[i, j - n_int] = float(cell)
            except ValueError:
                raise NonNumericCell(path, line, header[j], cell) from None
            if j >= n_int and not math.isfinite(vals[i, j - n_int]):
                raise NonNumericCell(path, line, header[j], cell)
    return header, ints, vals


def load_history_csv(actions_path: str, contexts_path: str, rewards_path: str) -> History:
    """Assemble a History from ``actions.csv``, ``contexts.csv`` and ``rewards.csv``.

    Every round in any file must appear in all three, and every round
    must carry the same targets ``l = 1..L``.
    """
    _, a_t, A = _read_table(actions_path, ("t",), "a")
    _, c_idx, C = _read_table(contexts_path, ("t", "l"), "x")
    _, r_idx, R = _read_table(rewards_path, ("t", "l", "y"), None)
    rounds_a = a_t[:, 0]
    if np.unique(rounds_a).shape[0] != rounds_a.shape[0]:
        raise DataError(f"{actions_path}: duplicate round")
    all_rounds = set(rounds_a.tolist()) | set(c_idx[:, 0].tolist()) | set(r_idx[:, 0].tolist())
    for name, present in (
        (actions_path, set(rounds_a.tolist())),
        (contexts_path, set(c_idx[:, 0].tolist())),
        (rewards_path, set(r_idx[:, 0].tolist())),
    ):
        missing = sorted(all_rounds - present)
        if missing:
            raise MissingRound(missing[0], name)
    if not all_rounds:
        raise DataError("logged data has no rounds")
    rounds = np.sort(rounds_a)
    L = int(c_idx[:, 1].max())
    n, d_a, d_x = rounds.shape[0], A.shape[1], C.shape[1]
    pos = {int(t): i for i, t in enumerate(rounds)}
    actions = np.zeros((n, d_a))
    contexts = np.full((n, L, d_x), np.nan)
    rewards = np.full((n, L), np.nan)
    actions[[pos[int(t)] for t in rounds_a]] = A
    for (t, l), x in zip(c_idx, C):
        if not 1 <= l <= L or not np.isnan(contexts[pos[int(t)], l - 1, 0]):
            raise DimensionMismatch(f"{contexts_path}: bad or duplicate target l={l} in round {t}")
        contexts[pos[int(t)], l - 1] = x
    for (t, l), y in zip(r_idx, R[:, 0]):
        if not 1 <= l <= L or not np.isnan(rewards[pos[int(t)], l - 1]):
            raise DimensionMismatch(f"{rewards_path}: bad or duplicate target l={l} in round {t}")
        rewards[pos[int(t)], l - 1] = y
    for path, arr in ((contexts_path, contexts[:, :, 0]), (rewards_path, rewards)):
        holes = np.argwhere(np.isnan(arr))
        if holes.size:
            i, l = holes[0]
            raise DimensionMismatch(f"{path}: round {int(rounds[i])} lacks target l={l + 1} (L={L})")
    return History.from_arrays(actions, contexts, rewards, rounds)


def save_history(history: History, actions_path: str, contexts_path: str, rewards_path: str) -> None:
    n, L, d_x = history.contexts.shape
    ts = history.rounds
    _write_rows(
        actions_path,
        ["t"] + [f"a_{i + 1}" for i in range(history.d_a)],
        ([int(t)] + list(a) for t, a in zip(ts, history.actions)),
    )
    _write_rows(
        contexts_path,
        ["t", "l"] + [f"x_{i + 1}" for i in range(d_x)],
        ([int(ts[i]), l + 1] + list(history.contexts[i, l]) for i in range(n) for l in range(L)),
    )
    _write_rows(
        rewards_path,
        ["t", "l", "y"],
        ([int(ts[i]), l + 1, history.rewards[i, l]] for i in range(n) for l in range(L)),
    )


def history_paths(directory: str) -> tuple[str, str, str]:
    return tuple(os.path.join(directory, f"{k}.csv") for k in ("actions", "contexts", "rewards"))


# -- representation matrices -------------------------------------------------

def save_theta(path: str, theta: RepresentationMatrix, meta: Optional[dict] = None,
               action_labels=None, context_labels=None) -> str:
    """Dense CSV with a label column, plus a JSON sidecar ``<path>.json``."""
    m = theta.entries
    a_lab = list(action_labels) if action_labels else [f"a_{i + 1}" for i in range(m.shape[0])]
    x_lab = list(context_labels) if context_labels else [f"x_{i + 1}" for i in range(m.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["action"] + x_lab)
        for lab, row in zip(a_lab, m):
            w.writerow([lab] + [fmt(v) for v in row])
    side = dict(meta or {})
    side.update({"d_a": int(m.shape[0]), "d_x": int(m.shape[1])})
    sidecar = path + ".json"
    write_json(sidecar, side)
    return sidecar


def load_theta(path: str):
    """Returns ``(theta, action_labels, context_labels, meta)``; meta is ``{}`` without a sidecar."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or len(rows[0]) < 2:
        raise DataError(f"{path}: expected a header and at least one matrix row")
    x_lab = rows[0][1:]
    a_lab, vals = [], []
    for i, row in enumerate(rows[1:]):
        if len(row) != len(rows[0]):
            raise DimensionMismatch(f"{path}: row {i + 2} has {len(row)} cells, header has {len(rows[0])}")
        a_lab.append(row[0])
        line = []
        for j, cell in enumerate(row[1:]):
            try:
                v = float(cell)
            except ValueError:
                raise NonNumericCell(path, i + 2, x_lab[j], cell) from None
            if not math.isfinite(v):
                raise NonNumericCell(path, i + 2, x_lab[j], cell)
            line.append(v)
        vals.append(line)
    meta = {}
    if os.path.exists(path + ".json"):
        with open(path + ".json") as fh:
            meta = json.load(fh)
    return RepresentationMatrix(np.array(vals)), a_lab, x_lab, meta


def write_json(path: str, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


# -- metrics -----------------------------------------------------------------

def write_metrics_csv(path: str, trials: Sequence[TrialMetrics]) -> None:
    def rows():
        for k, tr in enumerate(trials):
            avg = tr.avg_regret
            for i in range(tr.T):
                yield (
                    k + 1, i + 1, tr.inst_regret[i], avg[i], tr.cum_reward[i],
                    bool(tr.explored[i]), bool(tr.degenerate[i]), tr.lambda_t[i], tr.frob_err[i],
                )

    _write_rows(path, METRICS_HEADER, rows())


def write_aggregate_csv(path: str, report: AggregateReport) -> None:
    _write_rows(
        path,
        AGGREGATE_HEADER,
        (
            (t + 1, report.mean_avg_regret[t], report.q05[t], report.q95[t], report.mean_gain[t])
            for t in range(report.T)
        ),
    )


# -- experiment configuration ------------------------------------------------

ENV_KINDS = ("lowrank", "sparse", "pricing", "multiarm")

_ENV_REQUIRED = {
    "lowrank": ("d_a", "d_x", "r", "sigma"),
    "sparse": ("d_a", "d_x", "s0", "sigma"),
    "pricing": (),
    "multiarm": ("means", "sigma"),
}

_ALGO_KEYS = tuple(f.name for f in fields(AlgorithmConfig) if f.name != "seed")
_SOLVER_KEYS = tuple(f.name for f in fields(SolverSettings))

# key -> (accepted python types, default); a default of ... marks a required key
_KEYS: dict[str, tuple[tuple, Any]] = {
    "env": ((str,), ...),
    "T": ((int,), ...),
    "trials": ((int,), ...),
    "seed": ((int,), 0),
    "out_dir": ((str,), "."),
    "theta_seed": ((int, type(None)), None),
    "d_a": ((int,), None),
    "d_x": ((int,), None),
    "r": ((int,), None),
    "diag": ((list, type(None)), None),
    "s0": ((int,), None),
    "sigma": ((int, float), None),
    "L": ((int,), 1),
    "alpha": ((list,), list(PRICING_ALPHA)),
    "beta": ((list,), list(PRICING_BETA)),
    "price_lower": ((int, float), 0.0),
    "price_upper": ((int, float), 2.0),
    "means": ((list,), None),
    "action_space": ((str,), "ball"),
    "box_lower": ((int, float), -1.0),
    "box_upper": ((int, float), 1.0),
    "save_theta": ((bool,), True),
}


def _types_like(default) -> tuple:
    if isinstance(default, bool):
        return (bool,)
    if isinstance(default, int):
        return (int,)
    if isinstance(default, float):
        return (int, float)
    if isinstance(default, str):
        return (str,)
    return (int, float, type(None))


for _f in fields(AlgorithmConfig):
    if _f.name != "seed":
        _KEYS[_f.name] = (_types_like(_f.default), _f.default)
for _f in fields(SolverSettings):
    _KEYS[_f.name] = (_types_like(_f.default), _f.default)


@dataclass
class ExperimentConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def algorithm(self, seed: int) -> AlgorithmConfig:
        kw = {k: self.values[k] for k in _ALGO_KEYS}
        return AlgorithmConfig(seed=seed, **kw)

    def solver(self) -> SolverSettings:
        return SolverSettings(**{k: self.values[k] for k in _SOLVER_KEYS})

    def theta_star(self) -> RepresentationMatrix:
        v = self.values
        tseed = v["theta_seed"] if v["theta_seed"] is not None else v["seed"]
        if v["env"] == "lowrank":
            diag = v["diag"] if v["diag"] is not None else LOWRANK_DIAG[: v["r"]]
            return make_lowrank_theta(v["d_a"], v["d_x"], v["r"], diag, seed=tseed)
        if v["env"] == "sparse":
            return make_sparse_theta(v["d_a"], v["d_x"], v["s0"], seed=tseed)
        return self.make_env(0).theta_star

    def make_env(self, trial_seed_: int, theta_star: Optional[RepresentationMatrix] = None) -> BilinearEnv:
        v = self.values
        rng = env_rng(trial_seed_)
        if v["env"] == "pricing":
            sigma = v["sigma"] if v["sigma"] is not None else PRICING_NOISE_STD
            return PricingEnv(v["alpha"], v["beta"], sigma, v["L"], seed=rng)
        if v["env"] == "multiarm":
            return MultiArmEnv(v["means"], v["sigma"], seed=rng)
        theta = theta_star if theta_star is not None else self.theta_star()
        return BilinearEnv(theta, v["sigma"], v["L"], seed=rng)

    def action_space(self) -> ActionSpace:
        v = self.values
        if v["env"] == "pricing":
            return ActionSpace.lifted_interval(v["price_lower"], v["price_upper"])
        if v["action_space"] == "box":
            d_a = len(v["means"]) if v["env"] == "multiarm" else v["d_a"]
            return ActionSpace.box(np.full(d_a, v["box_lower"]), np.full(d_a, v["box_upper"]))
        return ActionSpace.unit_ball()


def parse_config(doc: dict, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Validate a flat key-value document; unknown and missing keys are named."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = dict(doc)
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v
    unknown = sorted(set(doc) - set(_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    for k, (_, default) in _KEYS.items():
        if default is ... and k not in doc:
            raise ConfigError(f"missing required config key {k!r}")
    kind = doc["env"]
    if kind not in ENV_KINDS:
        raise ConfigError(f"config key 'env' must be one of {ENV_KINDS}, got {kind!r}")
    for k in _ENV_REQUIRED[kind]:
        if doc.get(k) is None:
            raise ConfigError(f"missing required config key {k!r} for env {kind!r}")
    values = {}
    for k, (types, default) in _KEYS.items():
        v = doc.get(k, None if default is ... else default)
        if k in doc:
            ok = isinstance(v, types) and not (isinstance(v, bool) and bool not in types)
            if not ok:
                raise ConfigError(f"config key {k!r} has invalid value {v!r}")
        values[k] = v
    for k in ("alpha", "beta", "means", "diag"):
        if values[k] is not None and not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in values[k]
        ):
            raise ConfigError(f"config key {k!r} must be a list of numbers")
    if values["trials"] < 1:
        raise ConfigError("config key 'trials' must be >= 1")
    if values["T"] <= values["t_init"]:
        raise ConfigError("config key 'T' must exceed 't_init'")
    if values["action_space"] not in ("ball", "box"):
        raise ConfigError("config key 'action_space' must be 'ball' or 'box'")
    cfg = ExperimentConfig(values)
    try:
        cfg.algorithm(0)
        cfg.solver()
        if kind in ("lowrank", "sparse"):
            cfg.theta_star()
    except DataError as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    return cfg


def load_config(path: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from None
    return parse_config(doc, overrides)

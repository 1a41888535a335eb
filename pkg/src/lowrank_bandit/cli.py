"""Command-line entry point: ``python -m lowrank_bandit <command> ...``.

Exit status: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure. Diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import io
from .core import AlgorithmConfig
from .environments import fit_pseudo_ground_truth
from .errors import ConfigError, DataError, NumericalError
from .estimator import SolverSettings, solve_nuclear_ls
from .harness import aggregate, loo_prediction_error, run_replay_trial, run_trial, run_trials
from .interpret import spectral_decompose
from .policy import exploration_rounds


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, seed=True, threads=True, out_dir=True):
    if seed:
        p.add_argument("--seed", type=int, default=None, help="master 64-bit seed")
    if threads:
        p.add_argument("--threads", type=int, default=1, help="concurrent trials")
    if out_dir:
        p.add_argument("--out-dir", default=None, help="directory for output files")


def _log_args(p: argparse.ArgumentParser):
    p.add_argument("--actions", required=True, help="actions.csv (t,a_1..)")
    p.add_argument("--contexts", required=True, help="contexts.csv (t,l,x_1..)")
    p.add_argument("--rewards", required=True, help="rewards.csv (t,l,y)")
    p.add_argument("--lambda", dest="lam", type=float, required=True, help="regularization weight")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lowrank_bandit", description="Low-rank bilinear contextual bandits.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run seeded trials on a synthetic environment")
    p.add_argument("--config", required=True, help="JSON experiment config")
    _common(p)

    p = sub.add_parser("estimate", help="one nuclear-norm fit on a logged dataset")
    _log_args(p)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--rel-tol", type=float, default=1e-12)
    _common(p, seed=False, threads=False)

    p = sub.add_parser("replay", help="fit a pseudo ground truth and compare the policy to logged actions")
    _log_args(p)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--t-init", type=int, default=None, help="rounds replayed before the policy starts")
    p.add_argument("--h", type=float, default=0.1)
    p.add_argument("--lambda0", type=float, default=None)
    _common(p)

    p = sub.add_parser("loo", help="leave-one-round-out prediction error")
    _log_args(p)
    _common(p, seed=False, threads=False, out_dir=False)

    p = sub.add_parser("interpret", help="latent factors of a saved matrix")
    p.add_argument("--theta", required=True, help="matrix CSV written by estimate")
    p.add_argument("--rel-tol", type=float, default=0.0)
    _common(p, seed=False, threads=False)

    p = sub.add_parser("schedule", help="print exploration rounds up to T")
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--exponent", type=float, default=1.5)
    return parser


def _out_dir(path: Optional[str]) -> str:
    d = path or "."
    os.makedirs(d, exist_ok=True)
    return d


def cmd_simulate(args, out) -> None:
    cfg = io.load_config(args.config, {"seed": args.seed})
    out_dir = _out_dir(args.out_dir or cfg["out_dir"])
    theta_star = cfg.theta_star()
    solver = cfg.solver()
    space = cfg.action_space()
    seeds = [io.trial_seed(cfg["seed"], k) for k in range(cfg["trials"])]

    def job(s):
        return lambda: run_trial(cfg.make_env(s, theta_star), cfg.algorithm(s), cfg["T"], solver, space)

    trials = run_trials([job(s) for s in seeds], max(args.threads, 1))
    io.write_metrics_csv(os.path.join(out_dir, "metrics.csv"), trials)
    io.write_aggregate_csv(os.path.join(out_dir, "aggregate.csv"), aggregate(trials))
    meta = {
        "command": "simulate",
        "config": cfg.values,
        "trial_seeds": [str(s) for s in seeds],
        "seed_rule": "splitmix64(master xor trial_index)",
        **io.rng_metadata(),
    }
    io.write_json(os.path.join(out_dir, "run.json"), meta)
    if cfg["save_theta"]:
        for k, tr in enumerate(trials):
            io.save_theta(
                os.path.join(out_dir, f"theta_hat_trial{k + 1}.csv"),
                tr.theta_hat,
                {"lambda": float(tr.lambda_t[-1]), "round": tr.T, "trial": k + 1},
            )
    final = [tr.avg_regret[-1] for tr in trials]
    print(f"trials={len(trials)} T={cfg['T']} mean_avg_regret={io.fmt(float(np.mean(final)))}", file=out)


def _load_log(args):
    return io.load_history_csv(args.actions, args.contexts, args.rewards)


def cmd_estimate(args, out) -> None:
    hist = _load_log(args)
    rep = solve_nuclear_ls(
        hist, args.lam, settings=SolverSettings(max_iters=args.max_iters, rel_tol=args.rel_tol)
    )
    if args.out_dir:
        d = _out_dir(args.out_dir)
        io.save_theta(
            os.path.join(d, "theta_hat.csv"),
            rep.theta_hat,
            {
                "lambda": rep.lambda_t,
                "round": int(hist.rounds[-1]),
                "iterations": rep.iterations,
                "converged": rep.converged,
                "objective": rep.final_objective,
            },
        )
    m = rep.theta_hat.entries
    for i, row in enumerate(m):
        print(",".join(io.fmt(v) for v in row), file=out)
    if not rep.converged:
        print(f"warning: solver stopped after {rep.iterations} iterations", file=sys.stderr)


def cmd_replay(args, out) -> None:
    hist = _load_log(args)
    theta, sigma = fit_pseudo_ground_truth(hist, args.lam)
    t_init = args.t_init if args.t_init is not None else max(2, len(hist) // 10)
    if not 1 <= t_init < len(hist):
        raise DataError(f"t_init={t_init} must lie in [1, {len(hist) - 1}]")
    master = args.seed if args.seed is not None else 0
    seeds = [io.trial_seed(master, k) for k in range(max(args.trials, 1))]

    def job(s):
        cfg = AlgorithmConfig(t_init=t_init, h=args.h, lambda0=args.lambda0, seed=s)
        return lambda: run_replay_trial(hist, theta, sigma, cfg, env_seed=io.env_rng(s))

    trials = run_trials([job(s) for s in seeds], max(args.threads, 1))
    d = _out_dir(args.out_dir)
    io.write_metrics_csv(os.path.join(d, "metrics.csv"), trials)
    io.write_aggregate_csv(os.path.join(d, "aggregate.csv"), aggregate(trials))
    io.save_theta(os.path.join(d, "pseudo_theta.csv"), theta, {"lambda": args.lam, "sigma": sigma})
    io.write_json(
        os.path.join(d, "run.json"),
        {"command": "replay", "trial_seeds": [str(s) for s in seeds], "t_init": t_init, **io.rng_metadata()},
    )
    gains = [tr.gain[-1] for tr in trials]
    print(f"sigma_hat={io.fmt(sigma)} final_gain={io.fmt(float(np.nanmean(gains)))}", file=out)


def cmd_loo(args, out) -> None:
    err = loo_prediction_error(_load_log(args), args.lam)
    print(io.fmt(err), file=out)


def cmd_interpret(args, out) -> None:
    theta, a_lab, x_lab, meta = io.load_theta(args.theta)
    if not 0.0 <= args.rel_tol < 1.0:
        raise DataError("--rel-tol must lie in [0, 1)")
    rep = spectral_decompose(theta, args.rel_tol, a_lab, x_lab)
    doc = rep.to_dict()
    if meta:
        doc["source"] = meta
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out_dir:
        with open(os.path.join(_out_dir(args.out_dir), "spectral.json"), "w") as fh:
            fh.write(text + "\n")
    print(text, file=out)


def cmd_schedule(args, out) -> None:
    if args.T < 1:
        raise UsageError("--T must be >= 1")
    if not args.exponent > 1:
        raise UsageError("--exponent must exceed 1")
    print(",".join(str(t) for t in exploration_rounds(args.T, args.exponent)), file=out)


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "replay": cmd_replay,
    "loo": cmd_loo,
    "interpret": cmd_interpret,
    "schedule": cmd_schedule,
}


def run_cli(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = out if out is not None else sys.stdout
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args, out)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    return 0


def main() -> None:
    sys.exit(run_cli())

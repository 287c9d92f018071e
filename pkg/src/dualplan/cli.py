"""Command-line entry point: single trials, sweeps and policy comparisons."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .harness import (ExperimentConfig, SweepTable, load_config, run_sweep, run_trial, trial_seed,
                      write_tables)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="key = value file; flags override it")
    p.add_argument("--model", choices=["1d", "pm"])
    p.add_argument("--policy", choices=["mcts", "mpc"])
    p.add_argument("--reward", choices=["l1", "l2"])
    p.add_argument("--iters", type=int, help="MCTS iterations per decision")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--steps", type=int)
    p.add_argument("--process-sigma", type=float, dest="process_sigma")
    p.add_argument("--param-sigma", type=float, dest="param_sigma")
    p.add_argument("--timing", choices=["pre_step", "post_step", "lagged"], dest="observation_timing")
    p.add_argument("--out", metavar="FILE", help="CSV output path")


def _add_batch(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sweep", choices=["process_sigma", "param_sigma", "none"])
    p.add_argument("--values", type=lambda s: tuple(float(v) for v in s.split(",")), dest="sweep_values",
                   help="comma separated sweep values (default: the standard grid for the model)")
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualplan", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trial", help="run one closed-loop trial and write its step log")
    _add_common(p)
    p.add_argument("--trial", type=int, default=0, help="trial index under the master seed")

    p = sub.add_parser("sweep", help="run one policy over a sweep and write mean/SEM per point")
    _add_common(p)
    _add_batch(p)

    p = sub.add_parser("compare", help="run MCTS and MPC on the same seeds over a sweep")
    _add_common(p)
    _add_batch(p)
    return parser


_NOT_CONFIG = {"command", "verbose", "config", "out", "trial"}


def make_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG and v is not None}
    if args.config:
        return load_config(args.config, **overrides)
    return ExperimentConfig(**overrides)


def _print_table(name: str, table: SweepTable, out) -> None:
    for r in table.rows:
        extra = f"  ({r.flagged} flagged)" if r.flagged else ""
        print(f"{name:5s} {r.sweep_value:10.4g}  {r.mean_reward:14.1f} +/- {r.sem:9.1f}  n={r.trials}{extra}",
              file=out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = make_config(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "trial":
        result = run_trial(config, trial_seed(config.seed, 0, args.trial))
        print(f"total reward {result.total_reward:.3f} over {result.steps} steps"
              + (f" (flagged: {result.error})" if result.flagged else ""))
        if args.out:
            result.write_log(args.out)
        return 1 if result.flagged else 0

    if args.command == "sweep":
        table = run_sweep(config)
        _print_table(config.policy, table, sys.stdout)
        if args.out:
            table.write_csv(args.out)
        return 0

    tables = {}
    for policy in ("mcts", "mpc"):
        tables[policy] = run_sweep(dataclasses.replace(config, policy=policy))
        _print_table(policy, tables[policy], sys.stdout)
    if args.out:
        write_tables(args.out, tables)
    return 0


if __name__ == "__main__":
    sys.exit(main())

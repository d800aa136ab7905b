"""Command line interface: ``faircb run | solve | oracle``.

Exit codes: 0 success, 1 configuration or input error, 2 runtime or solver error.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

import numpy as np

from ..core import ConstraintSpec, ContextDistribution
from ..solver import (ConvergenceError, InfeasibleConstraintError, SolverConfig, SolverError,
                      brute_force_step, solve_raw)
from .config import ConfigError, load_config
from .runner import aggregate_rows, fmt, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.replace(" ", "").split(",") if x], dtype=np.float64)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faircb", description="Fair contextual bandit simulations.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config and write CSV summaries")
    run.add_argument("--config", required=True, help="TOML experiment file")
    run.add_argument("--out", help="output directory (overrides [output].dir)")
    run.add_argument("--seed", type=int, help="base seed override")
    run.add_argument("--reps", type=int, help="replication count override")
    run.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    run.add_argument("--trace", action="store_true", help="also write per-step trace CSVs")

    for name, text in (("solve", "solve one constrained FTRL step"),
                       ("oracle", "cross-check the solver against the brute-force oracle")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--g", required=True, help="M x K cumulative-loss matrix (whitespace-separated text file)")
        p.add_argument("--q", required=True, type=_vector, help="context distribution, e.g. 0.5,0.5")
        p.add_argument("--v", required=True, type=float, help="enforced fairness level")
        p.add_argument("--eta", required=True, type=float, help="learning rate")
        p.add_argument("--max-iters", type=int, default=10_000)
        p.add_argument("--gap-tol", type=float, default=1e-8)
        if name == "oracle":
            p.add_argument("--resolution", type=float, default=1e-3)
    return parser


def _print_policy(P: np.ndarray, out) -> None:
    for j, row in enumerate(P):
        print(f"  context {j}: " + " ".join(fmt(float(x)) for x in row), file=out)


def _load_problem(args):
    g = np.loadtxt(args.g, ndmin=2)
    if g.shape[0] != args.q.size:
        raise ValueError(f"g has {g.shape[0]} rows but q has {args.q.size} entries")
    ContextDistribution(args.q)
    return g, SolverConfig(eta=args.eta, max_iters=args.max_iters, gap_tol=args.gap_tol)


def cmd_run(args, out) -> int:
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, replications=args.reps)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out if args.out is not None else cfg.out_dir
    if out_dir is None:
        out_dir = f"results/{cfg.name}"
    _, results = run_experiment(cfg, out_dir, threads=args.threads, trace=args.trace or cfg.trace)
    print(f"{cfg.name}: {cfg.algorithm}, T={cfg.horizon}, {cfg.replications} replications -> {out_dir}", file=out)
    print("  v        performance (se)        regret     vio", file=out)
    for row in aggregate_rows(cfg, results):
        print(f"  {row['v']:<8g} {row['performance_mean']:.4f} ({row['performance_se']:.2g})"
              f"   {row['regret_mean']:10.3f}   {row['vio_mean']:.3g}", file=out)
    failed = [r for r in results if r.error is not None]
    if failed:
        print(f"{len(failed)} replication(s) failed; see errors.csv", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_solve(args, out) -> int:
    try:
        g, cfg = _load_problem(args)
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        P, dual = solve_raw(g, np.ascontiguousarray(args.q), args.v, cfg)
    except InfeasibleConstraintError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        _print_policy(exc.policy, sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print("policy:", file=out)
    _print_policy(P, out)
    print("marginals: " + " ".join(fmt(float(x)) for x in args.q @ P), file=out)
    print("lambda: " + " ".join(fmt(float(x)) for x in dual.lam), file=out)
    print(f"gap: {dual.gap:.3e}  iterations: {dual.iterations}", file=out)
    return EXIT_OK


def cmd_oracle(args, out) -> int:
    try:
        g, cfg = _load_problem(args)
        K = g.shape[1]
        if not 0.0 <= args.v < 1.0 / K:
            raise ValueError(f"v must lie in [0, 1/K) = [0, {1.0 / K:.6g})")
        spec = ConstraintSpec(ContextDistribution(args.q), args.v, K)
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        P, dual = solve_raw(g, np.ascontiguousarray(args.q), args.v, cfg)
        B = brute_force_step(g, spec, cfg, args.resolution).probs
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    diff = float(np.max(np.abs(P - B)))
    print("solver policy:", file=out)
    _print_policy(P, out)
    print("brute-force policy:", file=out)
    _print_policy(B, out)
    print(f"max abs difference: {diff:.3e}  (tolerance {2 * args.resolution:.1e})", file=out)
    return EXIT_OK if diff <= 2 * args.resolution else EXIT_RUNTIME


def main(argv: Optional[List[str]] = None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "solve": cmd_solve, "oracle": cmd_oracle}[args.command]
    try:
        return handler(args, out)
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

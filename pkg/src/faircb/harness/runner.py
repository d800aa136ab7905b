"""Seeded simulation runs and CSV output.

Every (v index, replication) pair gets its own random streams, derived from
``SeedSequence(base_seed, spawn_key=(v_index, rep))``.  The first child
stream drives the environment and the second the learner, so runs are
reproducible regardless of execution order or worker count, and different
algorithms see identical environment draws for the same key.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..baselines import Exp3PerContext, FairUcb, NoncontextualFtrl
from ..core import ConstraintSpec, ContextDistribution, Trace
from ..environments import BernoulliEnv, SwitchingAdversary
from ..epoch_learner import EpochLearner
from ..learner import FtrlLearner, default_eta
from ..metrics import (RunSummary, cell_means, disparity_of, marginal_slack, performance, regret, summarize,
                       violation_avg)
from ..solver import SolverConfig, SolverError
from .config import ExperimentConfig

SUMMARY_COLUMNS = ("name", "algorithm", "v", "rep", "performance", "regret", "vio", "disparity", "seed")
METRICS = ("performance", "regret", "vio", "disparity")


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return "%.12g" % x


def streams(base_seed: int, v_index: int, rep: int) -> Tuple[np.random.Generator, np.random.Generator]:
    ss = np.random.SeedSequence(base_seed, spawn_key=(v_index, rep))
    env_ss, learner_ss = ss.spawn(2)
    return np.random.default_rng(env_ss), np.random.default_rng(learner_ss)


def build_environment(cfg: ExperimentConfig):
    env = cfg.environment
    if env.kind == "bernoulli":
        return BernoulliEnv(env.mu, env.q)
    return SwitchingAdversary(env.dist_a, env.dist_b, env.q)


def build_learner(cfg: ExperimentConfig, v: float):
    env = cfg.environment
    M, K, T = env.n_contexts, env.n_arms, cfg.horizon
    solver_opts = dict(max_iters=cfg.max_iters, gap_tol=cfg.gap_tol, step_rule=cfg.step_rule)

    def eta_for(m: int) -> float:
        return default_eta(T, m, K) if cfg.eta == "default" else float(cfg.eta)

    if cfg.algorithm == "fair_cb":
        spec = ConstraintSpec(ContextDistribution(env.q), v, K)
        return FtrlLearner(spec, SolverConfig(eta=eta_for(M), **solver_opts))
    if cfg.algorithm == "epoch_fair_cb":
        return EpochLearner(M, K, v, T, cfg.mode, **solver_opts)
    if cfg.algorithm == "exp3_per_context":
        return Exp3PerContext(M, K, eta_for(M))
    if cfg.algorithm == "noncontextual_ftrl":
        return NoncontextualFtrl(M, K, v, SolverConfig(eta=eta_for(1), **solver_opts))
    if cfg.algorithm == "fair_ucb":
        return FairUcb(K, v, M)
    raise ValueError(f"unknown algorithm {cfg.algorithm!r}")


def simulate(env, learner, T: int, env_rng: np.random.Generator,
             learner_rng: np.random.Generator) -> Trace:
    """Run ``T`` rounds of the bandit protocol and record everything."""
    M, K = learner.n_contexts, learner.n_arms
    contexts = np.empty(T, dtype=np.int64)
    arms = np.empty(T, dtype=np.int64)
    losses = np.empty((T, K))
    policies = np.empty((T, M, K))
    for t in range(T):
        j, l = env.emit(env_rng)
        policies[t] = learner.probs()
        i = learner.act(j, learner_rng)
        loss = float(l[i])
        learner.observe(j, i, loss)
        env.feedback(loss)
        contexts[t], arms[t], losses[t] = j, i, l
    return Trace(contexts, arms, losses, policies)


@dataclass
class RunResult:
    v_index: int
    rep: int
    summary: Optional[RunSummary]
    trace: Optional[Trace] = None
    learner: object = None
    error: Optional[str] = None
    min_slack: float = math.nan  # min over rounds of (smallest true marginal - v)


def run_single(cfg: ExperimentConfig, v_index: int, rep: int, keep_trace: bool = False,
               keep_learner: bool = False) -> RunResult:
    """One replication at ``cfg.v_grid[v_index]``; solver failures are captured, not raised."""
    v = cfg.v_grid[v_index]
    env_rng, learner_rng = streams(cfg.seed, v_index, rep)
    env = build_environment(cfg)
    learner = build_learner(cfg, v)
    try:
        trace = simulate(env, learner, cfg.horizon, env_rng, learner_rng)
        q = ContextDistribution(cfg.environment.q)
        spec = ConstraintSpec(q, v, env.n_arms)
        disp = math.nan
        if trace.m == 2 and trace.k == 2:
            means = cell_means(trace)
            if np.all(np.isfinite(means)):
                disp = disparity_of(means)
        summary = RunSummary(cfg.name, algorithm_label(cfg), v, rep, performance(trace),
                             regret(trace, spec), violation_avg(trace, q, v), disp, cfg.seed)
    except SolverError as exc:
        return RunResult(v_index, rep, None, error=f"{type(exc).__name__}: {exc}")
    return RunResult(v_index, rep, summary, trace if keep_trace else None,
                     learner if keep_learner else None, min_slack=float(marginal_slack(trace, q, v).min()))


def algorithm_label(cfg: ExperimentConfig) -> str:
    if cfg.algorithm == "epoch_fair_cb":
        return f"epoch_fair_cb:{cfg.mode}"
    return cfg.algorithm


def _job(args):
    cfg, v_index, rep, keep_trace = args
    return run_single(cfg, v_index, rep, keep_trace)


def run_all(cfg: ExperimentConfig, threads: int = 1, keep_trace: bool = False) -> List[RunResult]:
    """Run every (v, rep) pair; results come back sorted by (v index, rep)."""
    jobs = [(cfg, vi, r, keep_trace) for vi in range(len(cfg.v_grid)) for r in range(cfg.replications)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_job, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        results = [_job(j) for j in jobs]
    results.sort(key=lambda r: (r.v_index, r.rep))
    return results


def summary_csv(results: Sequence[RunResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in results:
        if r.summary is not None:
            s = r.summary
            w.writerow([fmt(getattr(s, c)) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def aggregate_rows(cfg: ExperimentConfig, results: Sequence[RunResult]) -> List[dict]:
    rows = []
    for vi, v in enumerate(cfg.v_grid):
        done = [r.summary for r in results if r.v_index == vi and r.summary is not None]
        row = {"v": v, "n": len(done)}
        for m in METRICS:
            vals = [getattr(s, m) for s in done if not math.isnan(getattr(s, m))]
            if len(vals) >= 2:
                row[f"{m}_mean"], row[f"{m}_se"] = summarize(vals)
            else:
                row[f"{m}_mean"] = float(np.mean(vals)) if vals else math.nan
                row[f"{m}_se"] = math.nan
        rows.append(row)
    return rows


def aggregate_csv(cfg: ExperimentConfig, results: Sequence[RunResult]) -> str:
    rows = aggregate_rows(cfg, results)
    cols = ["name", "algorithm", "v", "n"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "se")]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        row = dict(row, name=cfg.name, algorithm=algorithm_label(cfg))
        w.writerow([fmt(row[c]) for c in cols])
    return buf.getvalue()


def trace_csv(trace: Trace) -> str:
    M, K = trace.m, trace.k
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "j", "i", "loss"] + [f"p_{j}_{i}" for j in range(M) for i in range(K)])
    flat = trace.policies.reshape(len(trace), M * K)
    for t in range(len(trace)):
        w.writerow([t + 1, int(trace.contexts[t]), int(trace.arms[t]), fmt(float(trace.realized[t]))]
                   + [fmt(float(x)) for x in flat[t]])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str | os.PathLike] = None, threads: int = 1,
                   trace: Optional[bool] = None) -> Tuple[List[RunSummary], List[RunResult]]:
    """Run the whole grid and write ``summary.csv``, ``aggregate.csv`` (and traces, errors).

    Returns the successful summaries and the raw per-run results.
    """
    keep_trace = cfg.trace if trace is None else trace
    results = run_all(cfg, threads, keep_trace)
    out = out_dir if out_dir is not None else cfg.out_dir
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "summary.csv", summary_csv(results))
        _write(out / "aggregate.csv", aggregate_csv(cfg, results))
        failed = [r for r in results if r.error is not None]
        if failed:
            lines = ["v,rep,error"] + [f"{fmt(cfg.v_grid[r.v_index])},{r.rep},\"{r.error}\"" for r in failed]
            _write(out / "errors.csv", "\n".join(lines) + "\n")
        if keep_trace:
            for r in results:
                if r.trace is not None:
                    _write(out / f"trace_v{r.v_index}_rep{r.rep}.csv", trace_csv(r.trace))
    return [r.summary for r in results if r.summary is not None], results

"""Run metrics: performance, pseudo-regret, fairness violation, disparity, summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .core import ConstraintSpec, ContextDistribution, Trace
from .solver import best_fixed_policy


@dataclass(frozen=True)
class RunSummary:
    """Metrics of one simulated run (one row of the summary CSV)."""

    name: str
    algorithm: str
    v: float
    rep: int
    performance: float
    regret: float
    vio: float
    disparity: float
    seed: int


def _nonempty(trace: Trace) -> None:
    if len(trace) == 0:
        raise ValueError("empty trace")


def performance(trace: Trace) -> float:
    """One minus the average realized loss."""
    _nonempty(trace)
    return 1.0 - float(trace.realized.sum()) / len(trace)


def learner_loss(trace: Trace) -> float:
    """Expected cumulative loss of the played policies: ``sum_t <p_t^{j_t}, l_t>``."""
    rows = trace.policies[np.arange(len(trace)), trace.contexts]
    return float(np.einsum("tk,tk->", rows, trace.losses))


def regret(trace: Trace, c: ConstraintSpec) -> float:
    """Pseudo-regret against the best fixed feasible policy in hindsight."""
    _nonempty(trace)
    totals = trace.context_losses()
    best = best_fixed_policy(totals, c)
    return learner_loss(trace) - float(np.sum(best.probs * totals))


def marginal_slack(trace: Trace, q_true: ContextDistribution | Sequence[float], v: float) -> np.ndarray:
    """Per round, the smallest true marginal pull probability minus ``v`` (negative when violated)."""
    q = q_true.probs if isinstance(q_true, ContextDistribution) else np.asarray(q_true, dtype=np.float64)
    marginals = np.einsum("j,tjk->tk", q, trace.policies)
    return marginals.min(axis=1) - v


def per_round_violation(trace: Trace, q_true: ContextDistribution | Sequence[float], v: float) -> np.ndarray:
    return np.maximum(0.0, -marginal_slack(trace, q_true, v))


def violation_avg(trace: Trace, q_true: ContextDistribution | Sequence[float], v: float) -> float:
    """Average shortfall of the smallest true marginal below ``v``."""
    _nonempty(trace)
    return float(per_round_violation(trace, q_true, v).mean())


def cell_means(trace: Trace) -> np.ndarray:
    """Empirical mean loss per (context, arm) from the full loss vectors; NaN if unseen."""
    sums = trace.context_losses()
    n = np.bincount(trace.contexts, minlength=trace.m).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / n[:, None]


def disparity_of(means: np.ndarray) -> float:
    means = np.asarray(means, dtype=np.float64)
    if means.shape != (2, 2):
        raise ValueError(f"disparity is defined for 2 contexts x 2 arms, got {means.shape}")
    for j in range(2):
        for i in range(2):
            if not np.isfinite(means[j, i]):
                raise ValueError(f"no observations for arm {i} in context {j}")
    return float(abs((means[0, 0] - means[0, 1]) - (means[1, 0] - means[1, 1])))


def disparity(trace: Trace) -> float:
    """``|(mu11 - mu21) - (mu12 - mu22)|`` from per-cell empirical mean losses."""
    return disparity_of(cell_means(trace))


def linear_fit(points: Iterable[Tuple[float, float]]) -> Tuple[float, float]:
    """Ordinary least squares ``y = a + b x``; returns ``(a, b)``."""
    pts = np.asarray(list(points), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or np.unique(pts[:, 0]).size < 2:
        raise ValueError("linear_fit needs at least two distinct x values")
    x, y = pts[:, 0], pts[:, 1]
    xc = x - x.mean()
    slope = float(xc @ (y - y.mean()) / (xc @ xc))
    return float(y.mean() - slope * x.mean()), slope


def summarize(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and standard error (sample std with ddof=1 over sqrt(n))."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        raise ValueError("need at least two replications for a standard error")
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def summarize_runs(rows: Sequence[RunSummary], field: str) -> Optional[Tuple[float, float]]:
    vals = [getattr(r, field) for r in rows]
    vals = [x for x in vals if not math.isnan(x)]
    return summarize(vals) if len(vals) >= 2 else None

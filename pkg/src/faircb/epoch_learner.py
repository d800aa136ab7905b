"""Fair contextual bandit learner for an unknown context distribution.

Rounds are split into doubling epochs ``[2^(k-1), 2^k)``.  Epoch 1 (round 1)
plays uniformly at random.  At the start of every later epoch the context
law is re-estimated from all contexts seen so far, the fairness level is
moved by a concentration slack, and a fresh FTRL learner is started with a
learning rate tuned to the epoch length.

Two modes are supported:

``relaxed``
    enforce ``v - eps_k`` under the estimate; small violations of the true
    constraint are possible and accounted for by :func:`vio_bound`.
``conservative``
    enforce ``v + eps_k`` under the estimate, which implies the true
    constraint whenever the estimate is ``eps_k``-close in L1.  If the
    tightened level exceeds ``1/K`` the epoch plays the uniform policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .core import ConstraintSpec, ContextDistribution
from .learner import FtrlLearner, sample_arm
from .solver import SolverConfig

MODES = ("relaxed", "conservative")


def epoch_of(t: int) -> int:
    """Epoch index of round ``t`` (1-based): ``floor(log2 t) + 1``."""
    if t < 1:
        raise ValueError("rounds start at 1")
    return int(t).bit_length()


def epoch_start(k: int) -> int:
    if k < 1:
        raise ValueError("epochs start at 1")
    return 1 << (k - 1)


def empirical_q(counts, tau_k: int) -> ContextDistribution:
    """Context frequencies over rounds ``1 .. tau_k - 1``."""
    if tau_k < 2:
        raise ValueError("no observations before the first epoch; it plays uniformly")
    counts = np.asarray(counts, dtype=np.float64)
    if counts.sum() != tau_k - 1:
        raise ValueError(f"counts sum to {counts.sum():g}, expected tau_k - 1 = {tau_k - 1}")
    return ContextDistribution(counts / (tau_k - 1))


def epsilon_k(tau_k: int, m: int, T: int) -> float:
    """L1 concentration radius of the epoch-k context estimate (holds w.p. 1 - 1/T)."""
    if tau_k < 2:
        raise ValueError("epsilon_k needs tau_k >= 2")
    n = tau_k - 1
    log_term = math.log(T * m)
    return 4.0 * math.sqrt(m * log_term / n) + 2.0 * m * log_term / n


def effective_constraint(mode: str, v: float, eps: float, k_arms: int) -> Tuple[float, bool]:
    """Level enforced under the estimated context law and whether to play uniform instead."""
    if mode == "relaxed":
        return max(0.0, v - eps), False
    if mode == "conservative":
        v_eff = v + eps
        return v_eff, v_eff >= 1.0 / k_arms
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def epoch_eta(tau_k: int, m: int, k: int) -> float:
    return math.sqrt(m * math.log(k) / (tau_k * k))


def vio_bound(T: int, m: int) -> float:
    """``(1/T) * sum_k tau_k * eps_k`` over the epochs k >= 2 that start by round ``T``."""
    total = 0.0
    for k in range(2, epoch_of(T) + 1):
        tau = epoch_start(k)
        total += tau * epsilon_k(tau, m, T)
    return total / T


@dataclass(frozen=True)
class EpochRecord:
    k: int
    tau: int
    q_k: Optional[np.ndarray]
    eps_k: float
    v_eff: float
    eta_k: float
    fallback: bool


class EpochLearner:
    """Doubling-epoch Fair CB that learns the context distribution online.

    Args:
        m, k: number of contexts and arms.
        v: fairness level, ``0 <= v < 1/k``.
        horizon: T, used in the concentration radius.
        mode: ``"relaxed"`` or ``"conservative"``.
        max_iters, gap_tol, step_rule: forwarded to each epoch's solver.
    """

    def __init__(self, m: int, k: int, v: float, horizon: int, mode: str = "relaxed",
                 max_iters: int = 10000, gap_tol: float = 1e-8, step_rule: str = "newton"):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        if k < 2:
            raise ValueError("need at least two arms")
        if not 0.0 <= v < 1.0 / k:
            raise ValueError(f"v must lie in [0, 1/K), got {v!r}")
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        self.m, self.k, self.v, self.horizon, self.mode = m, k, float(v), horizon, mode
        self._solver_opts = dict(max_iters=max_iters, gap_tol=gap_tol, step_rule=step_rule)
        self.t = 1
        self.counts = np.zeros(m, dtype=np.int64)
        self.epoch = 0
        self.inner: Optional[FtrlLearner] = None
        self.log: List[EpochRecord] = []
        self._uniform = np.full((m, k), 1.0 / k)
        self._uniform.setflags(write=False)
        self._pending = None

    @property
    def n_contexts(self) -> int:
        return self.m

    @property
    def n_arms(self) -> int:
        return self.k

    def _sync_epoch(self) -> None:
        k = epoch_of(self.t)
        if k == self.epoch:
            return
        self.epoch = k
        tau = epoch_start(k)
        if k == 1:
            self.inner = None
            self.log.append(EpochRecord(1, 1, None, math.inf, 0.0, 0.0, True))
            return
        q_k = empirical_q(self.counts, tau)
        eps = epsilon_k(tau, self.m, self.horizon)
        v_eff, fallback = effective_constraint(self.mode, self.v, eps, self.k)
        eta = epoch_eta(tau, self.m, self.k)
        if fallback:
            self.inner = None
        else:
            spec = ConstraintSpec(q_k, self.v, self.k, v_eff)
            self.inner = FtrlLearner(spec, SolverConfig(eta=eta, **self._solver_opts))
        self.log.append(EpochRecord(k, tau, q_k.probs, eps, v_eff, eta, fallback))

    def probs(self) -> np.ndarray:
        self._sync_epoch()
        return self._uniform if self.inner is None else self.inner.probs()

    def act(self, j: int, rng: np.random.Generator) -> int:
        if not 0 <= j < self.m:
            raise ValueError(f"context {j} out of range")
        if self._pending is not None:
            raise RuntimeError("act called twice without observe")
        self._sync_epoch()
        if self.inner is None:
            i = sample_arm(self._uniform[j], rng)
        else:
            i = self.inner.act(j, rng)
        self._pending = (j, i)
        return i

    def observe(self, j: int, i: int, loss: float) -> "EpochLearner":
        if self._pending != (j, i):
            raise RuntimeError("observe must follow act for the same context and arm")
        if not 0.0 <= loss <= 1.0:
            raise ValueError(f"loss must lie in [0, 1], got {loss!r}")
        if self.inner is not None:
            self.inner.observe(j, i, loss)
        self._pending = None
        self.counts[j] += 1
        self.t += 1
        return self


def epoch_step(state: EpochLearner, j: int, rng: np.random.Generator) -> int:
    return state.act(j, rng)


def epoch_observe(state: EpochLearner, j: int, i: int, loss: float) -> EpochLearner:
    return state.observe(j, i, loss)

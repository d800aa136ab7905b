"""Comparison algorithms: per-context Exp3, context-blind FTRL and Fair UCB."""

from __future__ import annotations

import math

import numpy as np

from . import _kernels
from .core import ConstraintSpec, ContextDistribution
from .learner import FtrlLearner, sample_arm
from .solver import SolverConfig


class Exp3PerContext(FtrlLearner):
    """One Exp3 instance per context: the unconstrained FTRL policy in closed form."""

    def __init__(self, m: int, k: int, eta: float):
        super().__init__(ConstraintSpec(ContextDistribution.uniform(m), 0.0, k), SolverConfig(eta=eta))

    def probs(self) -> np.ndarray:
        if self._probs is None:
            P = _kernels.exp_weights(self.g, self.config.eta)
            P.setflags(write=False)
            self._probs = P
        return self._probs


def exp3_context_select(state: Exp3PerContext, j: int, rng: np.random.Generator) -> int:
    return state.act(j, rng)


def exp3_context_update(state: Exp3PerContext, j: int, i: int, loss: float) -> Exp3PerContext:
    return state.observe(j, i, loss)


class NoncontextualFtrl:
    """Fair FTRL that ignores the context (the known-q learner with M = 1).

    The fairness constraint then reads ``p(i) >= v`` directly.  ``probs``
    repeats the single row once per environment context so traces keep the
    environment's shape.
    """

    def __init__(self, m_env: int, k: int, v: float, config: SolverConfig):
        self.inner = FtrlLearner(ConstraintSpec(ContextDistribution([1.0]), v, k), config)
        self.m_env = m_env

    @property
    def n_contexts(self) -> int:
        return self.m_env

    @property
    def n_arms(self) -> int:
        return self.inner.n_arms

    def probs(self) -> np.ndarray:
        return np.broadcast_to(self.inner.probs(), (self.m_env, self.inner.n_arms))

    def act(self, j: int, rng: np.random.Generator) -> int:
        return self.inner.act(0, rng)

    def observe(self, j: int, i: int, loss: float) -> "NoncontextualFtrl":
        self.inner.observe(0, i, loss)
        return self


class FairUcb:
    """UCB1 on rewards ``1 - loss`` mixed with uniform exploration at rate ``K v``.

    Each round, with probability ``K v`` a uniformly random arm is pulled and
    otherwise the arm with the largest index ``mean + sqrt(2 ln n / n_i)``
    (``n`` total pulls; unpulled arms have infinite index; ties go to the
    lowest index).  Every arm therefore has marginal pull probability at
    least ``v`` in every round.
    """

    def __init__(self, k: int, v: float, m_env: int = 1):
        if k < 1:
            raise ValueError("need at least one arm")
        if not 0.0 <= v <= 1.0 / k:
            raise ValueError(f"v must lie in [0, 1/K], got {v!r}")
        self.k = k
        self.v = float(v)
        self.m_env = m_env
        self.counts = np.zeros(k, dtype=np.int64)
        self.means = np.zeros(k)
        self.t = 1
        self._pending = None

    @property
    def n_contexts(self) -> int:
        return self.m_env

    @property
    def n_arms(self) -> int:
        return self.k

    def leader(self) -> int:
        if np.any(self.counts == 0):
            return int(np.argmax(self.counts == 0))
        n = self.counts.sum()
        index = self.means + np.sqrt(2.0 * math.log(n) / self.counts)
        return int(np.argmax(index))

    def probs(self) -> np.ndarray:
        mix = self.k * self.v
        row = np.full(self.k, mix / self.k)
        row[self.leader()] += 1.0 - mix
        return np.broadcast_to(row, (self.m_env, self.k))

    def select(self, rng: np.random.Generator) -> int:
        if self._pending is not None:
            raise RuntimeError("select called twice without update")
        if rng.random() < self.k * self.v:
            arm = int(rng.integers(self.k))
        else:
            arm = self.leader()
        self._pending = arm
        return arm

    def update(self, arm: int, loss: float) -> "FairUcb":
        if self._pending != arm:
            raise RuntimeError("update must follow select for the same arm")
        self._pending = None
        self.counts[arm] += 1
        self.means[arm] += ((1.0 - loss) - self.means[arm]) / self.counts[arm]
        self.t += 1
        return self

    def act(self, j: int, rng: np.random.Generator) -> int:
        return self.select(rng)

    def observe(self, j: int, i: int, loss: float) -> "FairUcb":
        return self.update(i, loss)


def fair_ucb_select(state: FairUcb, rng: np.random.Generator) -> int:
    return state.select(rng)


def fair_ucb_update(state: FairUcb, arm: int, loss: float) -> FairUcb:
    return state.update(arm, loss)

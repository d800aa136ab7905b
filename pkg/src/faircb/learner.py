"""Fair contextual bandit learner for a known context distribution."""

from __future__ import annotations

import math

import numpy as np

from .core import ConstraintSpec, Policy
from .solver import DualState, SolverConfig, solve_raw


def default_eta(T: int, m: int, k: int) -> float:
    """Learning rate ``sqrt(m ln k / (T k))`` that balances the regret bound."""
    if T < 1:
        raise ValueError("horizon must be at least 1")
    if k < 2:
        raise ValueError("need at least two arms (ln K = 0 gives eta = 0)")
    if m < 1:
        raise ValueError("need at least one context")
    return math.sqrt(m * math.log(k) / (T * k))


def sample_arm(row: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from one policy row using a single uniform."""
    u = rng.random()
    cdf = np.cumsum(row)
    i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(i, row.size - 1)


class FtrlLearner:
    """Follow-the-regularized-leader over the fairness-constrained policy set.

    Keeps the cumulative importance-weighted loss estimates ``g`` (one entry
    per context/arm) and plays the entropic FTRL policy for ``g``.  Rounds
    must alternate ``act`` then ``observe``; ``observe`` divides by the exact
    probability ``act`` sampled from.

    Args:
        constraint: fairness constraint (context law and enforced level).
        config: solver settings; ``config.eta`` is the learning rate.
    """

    def __init__(self, constraint: ConstraintSpec, config: SolverConfig):
        self.constraint = constraint
        self.config = config
        self.g = np.zeros((constraint.m, constraint.k))
        self.t = 1
        self._q = np.ascontiguousarray(constraint.q.probs)
        self._lam = np.zeros(constraint.k)
        self._probs = None
        self._dual = None
        self._pending = None

    @property
    def n_contexts(self) -> int:
        return self.constraint.m

    @property
    def n_arms(self) -> int:
        return self.constraint.k

    def probs(self) -> np.ndarray:
        """Current policy as a read-only M x K array (solved lazily)."""
        if self._probs is None:
            P, dual = solve_raw(self.g, self._q, self.constraint.v_eff, self.config, self._lam)
            P.setflags(write=False)
            self._probs, self._dual = P, dual
            self._lam = dual.lam
        return self._probs

    def policy_at(self) -> Policy:
        P = self.probs()
        return Policy(P / P.sum(axis=1, keepdims=True))

    @property
    def dual(self) -> DualState:
        self.probs()
        return self._dual

    def act(self, j: int, rng: np.random.Generator) -> int:
        if not 0 <= j < self.constraint.m:
            raise ValueError(f"context {j} out of range")
        if self._pending is not None:
            raise RuntimeError("act called twice without observe")
        row = self.probs()[j]
        i = sample_arm(row, rng)
        self._pending = (j, i, row[i])
        return i

    def observe(self, j: int, i: int, loss: float) -> "FtrlLearner":
        if self._pending is None or self._pending[:2] != (j, i):
            raise RuntimeError("observe must follow act for the same context and arm")
        if not 0.0 <= loss <= 1.0:
            raise ValueError(f"loss must lie in [0, 1], got {loss!r}")
        p = self._pending[2]
        if p <= 0.0:
            raise ZeroDivisionError(f"arm {i} had zero probability in context {j}")
        self._pending = None
        if loss:
            self.g[j, i] += loss / p
            self._probs = None
        self.t += 1
        return self


def policy_at(state: FtrlLearner) -> Policy:
    return state.policy_at()


def act(state: FtrlLearner, j: int, rng: np.random.Generator) -> int:
    return state.act(j, rng)


def observe(state: FtrlLearner, j: int, i: int, loss: float) -> FtrlLearner:
    return state.observe(j, i, loss)

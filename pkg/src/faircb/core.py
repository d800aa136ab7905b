"""Domain types shared by the learners, solvers and the simulation harness.

Every type here is an immutable value.  Array fields are copied on
construction and frozen (``writeable = False``) so instances can be shared
freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

#: Default tolerance for simplex and feasibility checks.
TOL = 1e-9


def _frozen(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Policy:
    """M per-context distributions over K arms; row ``j`` is ``p^j``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs, 2, "probs")
        if probs.shape[0] < 1 or probs.shape[1] < 1:
            raise ValueError("policy needs at least one context and one arm")
        if np.any(probs < -TOL) or np.any(probs > 1 + TOL):
            raise ValueError("policy entries must lie in [0, 1]")
        err = np.max(np.abs(probs.sum(axis=1) - 1.0))
        if err > TOL:
            raise ValueError(f"policy rows must sum to 1 (max error {err:.3g})")
        object.__setattr__(self, "probs", probs)

    @property
    def m(self) -> int:
        return self.probs.shape[0]

    @property
    def k(self) -> int:
        return self.probs.shape[1]

    def marginals(self, q: "ContextDistribution") -> np.ndarray:
        """Marginal pull probability of each arm under context law ``q``."""
        return q.probs @ self.probs


@dataclass(frozen=True)
class ContextDistribution:
    """Distribution ``q`` over the M contexts."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs, 1, "q")
        if probs.size < 1:
            raise ValueError("q must have at least one entry")
        if np.any(probs < 0):
            raise ValueError("q entries must be nonnegative")
        if abs(probs.sum() - 1.0) > TOL:
            raise ValueError(f"q must sum to 1, sums to {probs.sum()!r}")
        object.__setattr__(self, "probs", probs)

    @property
    def m(self) -> int:
        return self.probs.size

    @property
    def min_prob(self) -> float:
        """Smallest context probability (``u``)."""
        return float(self.probs.min())

    @classmethod
    def uniform(cls, m: int) -> "ContextDistribution":
        return cls(np.full(m, 1.0 / m))


@dataclass(frozen=True)
class ConstraintSpec:
    """Fairness constraint: every arm's marginal pull rate is at least ``v_eff``.

    ``v`` is the nominal level requested by the user.  ``v_eff`` is the level
    actually enforced, which differs from ``v`` only when an epoch learner
    relaxes or tightens it.  Negative levels are clamped to 0.  A level
    above ``1/K`` is kept as given so that :func:`feasible_nonempty` can
    report the empty set; solvers reject such specs.
    """

    q: ContextDistribution
    v: float
    k: int
    v_eff: Optional[float] = None

    def __post_init__(self):
        if not isinstance(self.q, ContextDistribution):
            object.__setattr__(self, "q", ContextDistribution(self.q))
        if self.k < 1:
            raise ValueError("k must be at least 1")
        cap = 1.0 / self.k
        if not 0.0 <= self.v < cap:
            raise ValueError(f"v must lie in [0, 1/K) = [0, {cap:.6g}), got {self.v!r}")
        v_eff = self.v if self.v_eff is None else self.v_eff
        object.__setattr__(self, "v", float(self.v))
        object.__setattr__(self, "v_eff", float(max(v_eff, 0.0)))

    @property
    def m(self) -> int:
        return self.q.m

    def with_level(self, v_eff: float) -> "ConstraintSpec":
        return ConstraintSpec(self.q, self.v, self.k, v_eff)


@dataclass(frozen=True)
class LossVector:
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values, 1, "loss vector")
        if np.any(values < 0) or np.any(values > 1):
            raise ValueError("losses must lie in [0, 1]")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class FeasibilityReport:
    marginals: np.ndarray
    min_marginal: float
    max_row_sum_error: float
    worst_slack: float
    feasible: bool


@dataclass(frozen=True)
class Trace:
    """Per-round record of a simulation, stored column-wise.

    Round ``t`` (1-based) lives at index ``t - 1`` of every array.
    ``policies[t-1]`` is the M x K policy the learner committed to before
    seeing ``contexts[t-1]``; ``losses[t-1]`` is the full loss vector even
    though the learner only observed the entry at ``arms[t-1]``.
    """

    contexts: np.ndarray
    arms: np.ndarray
    losses: np.ndarray
    policies: np.ndarray
    realized: np.ndarray = field(init=False)

    def __post_init__(self):
        contexts = np.asarray(self.contexts, dtype=np.int64)
        arms = np.asarray(self.arms, dtype=np.int64)
        losses = np.asarray(self.losses, dtype=np.float64)
        policies = np.asarray(self.policies, dtype=np.float64)
        T = contexts.shape[0]
        if arms.shape != (T,) or losses.ndim != 2 or losses.shape[0] != T:
            raise ValueError("trace columns have inconsistent lengths")
        if policies.ndim != 3 or policies.shape[0] != T or policies.shape[2] != losses.shape[1]:
            raise ValueError("policy snapshots must have shape (T, M, K)")
        M, K = policies.shape[1:]
        if T and (arms.min() < 0 or arms.max() >= K or contexts.min() < 0 or contexts.max() >= M):
            raise ValueError("context or arm index out of range")
        for name, arr in (("contexts", contexts), ("arms", arms), ("losses", losses), ("policies", policies)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        realized = losses[np.arange(T), arms]
        realized.setflags(write=False)
        object.__setattr__(self, "realized", realized)

    def __len__(self) -> int:
        return self.contexts.shape[0]

    @property
    def m(self) -> int:
        return self.policies.shape[1]

    @property
    def k(self) -> int:
        return self.policies.shape[2]

    def context_losses(self) -> np.ndarray:
        """Summed true loss vectors per context, shape (M, K)."""
        out = np.zeros((self.m, self.k))
        np.add.at(out, self.contexts, self.losses)
        return out


def uniform_policy(m: int, k: int) -> Policy:
    if m < 1 or k < 1:
        raise ValueError("uniform_policy needs m >= 1 and k >= 1")
    return Policy(np.full((m, k), 1.0 / k))


def feasible_nonempty(c: ConstraintSpec) -> bool:
    """True iff the uniform policy satisfies the effective constraint."""
    return c.v_eff <= 1.0 / c.k


def validate_policy(P: Policy | np.ndarray, c: ConstraintSpec, tol: float = TOL) -> FeasibilityReport:
    probs = P.probs if isinstance(P, Policy) else np.asarray(P, dtype=np.float64)
    if probs.shape != (c.m, c.k):
        raise ValueError(f"policy shape {probs.shape} does not match constraint ({c.m}, {c.k})")
    marginals = c.q.probs @ probs
    min_marginal = float(marginals.min())
    row_err = float(np.max(np.abs(probs.sum(axis=1) - 1.0)))
    in_range = bool(np.all(probs >= -tol) and np.all(probs <= 1 + tol))
    slack = min_marginal - c.v_eff
    feasible = slack >= -tol and row_err <= tol and in_range
    return FeasibilityReport(marginals, min_marginal, row_err, slack, feasible)


def as_loss_vector(values: Sequence[float] | np.ndarray) -> np.ndarray:
    return LossVector(values).values

"""Loss-generating environments.

An environment emits ``(context, full loss vector)`` before the learner
acts, then receives the realized loss through ``feedback``.  Only the
switching adversary uses the feedback.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from .core import ContextDistribution


def _draw_context(cdf: np.ndarray, rng: np.random.Generator) -> int:
    j = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(j, cdf.size - 1)


class BernoulliEnv:
    """Contextual Bernoulli losses: ``l(i) ~ Bernoulli(mu[i, j])`` given context ``j``.

    ``mu`` is K x M (row per arm, column per context).
    """

    def __init__(self, mu, q: ContextDistribution | Sequence[float]):
        mu = np.array(mu, dtype=np.float64)
        if mu.ndim != 2:
            raise ValueError("mu must be a K x M matrix")
        if np.any(mu < 0) or np.any(mu > 1):
            raise ValueError("Bernoulli means must lie in [0, 1]")
        self.q = q if isinstance(q, ContextDistribution) else ContextDistribution(q)
        if mu.shape[1] != self.q.m:
            raise ValueError(f"mu has {mu.shape[1]} context columns but q has {self.q.m} entries")
        mu.setflags(write=False)
        self.mu = mu
        self._cdf = np.cumsum(self.q.probs)

    @property
    def n_arms(self) -> int:
        return self.mu.shape[0]

    @property
    def n_contexts(self) -> int:
        return self.mu.shape[1]

    def emit(self, rng: np.random.Generator) -> Tuple[int, np.ndarray]:
        j = _draw_context(self._cdf, rng)
        losses = (rng.random(self.n_arms) < self.mu[:, j]).astype(np.float64)
        return j, losses

    def feedback(self, realized: float) -> None:
        pass


class SwitchingAdversary:
    """Adaptive adversary that swaps its loss means whenever the learner scores 0.

    In state ``"A"`` the loss of arm ``i`` is Bernoulli(``dist_a[i]``), in
    state ``"B"`` Bernoulli(``dist_b[i]``).  A realized loss of exactly 0
    flips the state from the next round on.  Contexts are drawn from ``q``
    but do not influence the losses.
    """

    def __init__(self, dist_a=(0.1, 0.9), dist_b=(0.9, 0.1),
                 q: Optional[ContextDistribution | Sequence[float]] = None, state: str = "A"):
        a = np.array(dist_a, dtype=np.float64)
        b = np.array(dist_b, dtype=np.float64)
        if a.ndim != 1 or a.shape != b.shape:
            raise ValueError("dist_a and dist_b must be vectors of equal length")
        if np.any(np.concatenate([a, b]) < 0) or np.any(np.concatenate([a, b]) > 1):
            raise ValueError("Bernoulli means must lie in [0, 1]")
        if state not in ("A", "B"):
            raise ValueError("state must be 'A' or 'B'")
        if q is None:
            q = ContextDistribution([1.0])
        self.q = q if isinstance(q, ContextDistribution) else ContextDistribution(q)
        a.setflags(write=False)
        b.setflags(write=False)
        self.dist_a, self.dist_b = a, b
        self.state = state
        self._cdf = np.cumsum(self.q.probs)
        self._emitted = False

    @property
    def n_arms(self) -> int:
        return self.dist_a.size

    @property
    def n_contexts(self) -> int:
        return self.q.m

    @property
    def means(self) -> np.ndarray:
        return self.dist_a if self.state == "A" else self.dist_b

    def emit(self, rng: np.random.Generator) -> Tuple[int, np.ndarray]:
        j = _draw_context(self._cdf, rng)
        losses = (rng.random(self.n_arms) < self.means).astype(np.float64)
        self._emitted = True
        return j, losses

    def feedback(self, realized: float) -> None:
        if not self._emitted:
            raise RuntimeError("feedback called before emit")
        self._emitted = False
        if realized == 0.0:
            self.state = "B" if self.state == "A" else "A"


def env_emit(env, rng: np.random.Generator):
    return env.emit(rng)


def adversary_emit(env: SwitchingAdversary, rng: np.random.Generator) -> np.ndarray:
    return env.emit(rng)[1]


def adversary_feedback(env: SwitchingAdversary, realized_loss: float) -> None:
    env.feedback(realized_loss)

"""Per-round constrained FTRL solve, its hindsight (LP) limit, and test oracles."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import _kernels
from .core import ConstraintSpec, ContextDistribution, Policy

_STEP_RULES = {"newton": _kernels.NEWTON, "fixed": _kernels.FIXED, "backtracking": _kernels.BACKTRACKING}


class SolverError(RuntimeError):
    """Base class for solver failures."""


class InfeasibleConstraintError(SolverError):
    pass


class ConvergenceError(SolverError):
    """Raised when the dual iteration fails to certify ``gap <= gap_tol``.

    ``policy`` and ``dual`` hold the best iterate found.
    """

    def __init__(self, msg: str, policy: np.ndarray, dual: "DualState"):
        super().__init__(msg)
        self.policy = policy
        self.dual = dual


@dataclass(frozen=True)
class SolverConfig:
    eta: float
    max_iters: int = 10_000
    gap_tol: float = 1e-8
    step_rule: str = "newton"

    def __post_init__(self):
        if not self.eta > 0 or not np.isfinite(self.eta):
            raise ValueError(f"eta must be positive and finite, got {self.eta!r}")
        if not self.gap_tol > 0:
            raise ValueError("gap_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.step_rule not in _STEP_RULES:
            raise ValueError(f"step_rule must be one of {sorted(_STEP_RULES)}")


@dataclass(frozen=True)
class DualState:
    lam: np.ndarray
    gap: float
    iterations: int


def _check_g(g) -> np.ndarray:
    g = np.ascontiguousarray(g, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("cumulative loss must be an M x K matrix")
    if np.isnan(g).any():
        raise ValueError("cumulative loss contains NaN")
    return g


def inner_policy(g, eta: float, lam, q: ContextDistribution) -> Policy:
    """Minimiser of the Lagrangian for fixed multipliers.

    ``p^j(i)`` is proportional to ``exp(-eta * (g[j, i] - lam[i] * q(j)))``.
    """
    g = _check_g(g)
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise ValueError("multipliers must be nonnegative")
    z = -eta * (g - np.outer(q.probs, lam))
    z -= z.max(axis=1, keepdims=True)
    w = np.exp(z)
    return Policy(w / w.sum(axis=1, keepdims=True))


def solve_raw(g: np.ndarray, q: np.ndarray, v_eff: float, cfg: SolverConfig,
              lam0: Optional[np.ndarray] = None) -> Tuple[np.ndarray, DualState]:
    """Array-level solve used on the learners' hot path; see ``solve_ftrl_step``."""
    K = g.shape[1]
    if v_eff > 1.0 / K:
        raise InfeasibleConstraintError(f"v_eff={v_eff:.6g} exceeds 1/K={1.0 / K:.6g}")
    if lam0 is None:
        lam0 = np.zeros(K)
    P, lam, gap, iters, status = _kernels.dual_solve(
        g, q, float(v_eff), float(cfg.eta), lam0, cfg.max_iters, cfg.gap_tol, _STEP_RULES[cfg.step_rule])
    dual = DualState(lam, float(gap), int(iters))
    if status != _kernels.CONVERGED:
        why = "max_iters reached" if status == _kernels.MAX_ITERS else "line search stalled"
        raise ConvergenceError(f"dual solve did not converge ({why}); best gap {gap:.3g}", P, dual)
    return P, dual


def solve_ftrl_step(g, c: ConstraintSpec, cfg: SolverConfig,
                    lam0: Optional[np.ndarray] = None) -> Tuple[Policy, DualState]:
    """Entropy-regularised FTRL policy over the fairness-constrained set.

    Minimises ``<P, g> + (1/eta) sum P ln P`` subject to every arm's
    marginal rate under ``c.q`` being at least ``c.v_eff``.  The returned
    policy is feasible and its duality gap is at most ``cfg.gap_tol``.
    """
    g = _check_g(g)
    if g.shape != (c.m, c.k):
        raise ValueError(f"g has shape {g.shape}, constraint expects ({c.m}, {c.k})")
    P, dual = solve_raw(g, np.ascontiguousarray(c.q.probs), c.v_eff, cfg, lam0)
    P = P / P.sum(axis=1, keepdims=True)
    return Policy(P), dual


def primal_objective(P, g, eta: float) -> float:
    P = np.asarray(P.probs if isinstance(P, Policy) else P)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(P > 0, P * np.log(P), 0.0)
    return float(np.sum(P * g) + ent.sum() / eta)


# -- hindsight comparator ---------------------------------------------------

def best_fixed_policy(losses, c: ConstraintSpec, *, scale: float = 1e4) -> Policy:
    """Best fixed feasible policy in hindsight.

    ``losses`` is either an M x K matrix of per-context summed losses or an
    iterable of ``(context, loss_vector)`` pairs.  The LP is approximated by
    the entropic program at ``eta = scale / max-entry``, reached by
    continuation from ``eta = 1 / max-entry`` with warm-started multipliers.
    The linear objective is within ``2 M ln K / eta`` of the LP optimum.
    """
    L = _summed_losses(losses, c)
    top = float(L.max())
    if top <= 0:
        return Policy(np.full((c.m, c.k), 1.0 / c.k))
    lam = np.zeros(c.k)
    q = np.ascontiguousarray(c.q.probs)
    m_lnk = c.m * max(np.log(c.k), 1e-12)
    P = None
    stages = np.geomspace(1.0, scale, int(round(np.log10(scale))) + 1)
    for n, s in enumerate(stages):
        eta = s / top
        # intermediate stages only provide warm starts, but a sloppy one can
        # leave the multipliers far from the next stage's optimum
        tol = m_lnk / eta if n == len(stages) - 1 else 1e-4 * m_lnk / eta
        cfg = SolverConfig(eta=eta, gap_tol=max(tol, 1e-8), max_iters=20_000)
        P, dual = solve_raw(L, q, c.v_eff, cfg, lam)
        lam = dual.lam
    return Policy(P / P.sum(axis=1, keepdims=True))


def _summed_losses(losses, c: ConstraintSpec) -> np.ndarray:
    if isinstance(losses, np.ndarray) and losses.ndim == 2 and losses.shape == (c.m, c.k):
        L = np.array(losses, dtype=np.float64)
    else:
        L = np.zeros((c.m, c.k))
        n = 0
        for j, l in losses:
            L[j] += np.asarray(l, dtype=np.float64)
            n += 1
        if n == 0:
            raise ValueError("loss sequence is empty")
    if np.any(L < 0) or not np.all(np.isfinite(L)):
        raise ValueError("summed losses must be finite and nonnegative")
    return np.ascontiguousarray(L)


# -- test oracles -------------------------------------------------------------

def lp_vertex_enumeration(losses, c: ConstraintSpec) -> Tuple[np.ndarray, float]:
    """Exact LP minimiser of ``sum_j <p^j, L_j>`` over the feasible set.

    Enumerates every basis of the standard-form LP (variables ``P`` plus one
    surplus per arm), so it is only usable for tiny M and K.
    """
    L = _summed_losses(losses, c)
    M, K = c.m, c.k
    n = M * K + K
    rows = M + K
    A = np.zeros((rows, n))
    b = np.zeros(rows)
    for j in range(M):
        A[j, j * K:(j + 1) * K] = 1.0
        b[j] = 1.0
    for i in range(K):
        for j in range(M):
            A[M + i, j * K + i] = c.q.probs[j]
        A[M + i, M * K + i] = -1.0
        b[M + i] = c.v_eff
    cost = np.concatenate([L.ravel(), np.zeros(K)])
    best, best_x = np.inf, None
    for cols in itertools.combinations(range(n), rows):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        xb = np.linalg.solve(B, b)
        if np.any(xb < -1e-10):
            continue
        x = np.zeros(n)
        x[list(cols)] = np.clip(xb, 0.0, None)
        val = float(cost @ x)
        if val < best - 1e-12:
            best, best_x = val, x
    if best_x is None:
        raise InfeasibleConstraintError("LP has no feasible vertex")
    return best_x[:M * K].reshape(M, K), best


def _waterfill(w: np.ndarray, lower: np.ndarray, iters: int = 100) -> np.ndarray:
    """Rowwise ``p_i = max(lower_i, w_i * s)`` with ``s`` chosen so rows sum to 1.

    This is the entropic minimiser on one simplex under per-arm lower
    bounds; ``w`` holds the unconstrained softmax weights (max entry 1).
    Rows whose bounds sum past 1 come back as NaN.
    """
    lo = np.zeros(w.shape[0])
    hi = np.ones(w.shape[0])
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        total = np.maximum(lower, w * mid[:, None]).sum(axis=1)
        big = total > 1.0
        hi = np.where(big, mid, hi)
        lo = np.where(big, lo, mid)
    p = np.maximum(lower, w * hi[:, None])
    p /= p.sum(axis=1, keepdims=True)
    p[lower.sum(axis=1) > 1.0 + 1e-12] = np.nan
    return p


def _entropic_value(P: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(P > 0, P * np.log(P), 0.0)
    return (P * g).sum(axis=-1) + ent.sum(axis=-1) / eta


def brute_force_step(g, c: ConstraintSpec, cfg: SolverConfig, resolution: float,
                     *, window: int = 6, budget: int = 30_000) -> Policy:
    """Grid-search minimiser of the FTRL objective over the feasible set.

    The context row with the largest probability is minimised exactly (a
    one-dimensional water-filling bisection given the rate it must supply);
    every other row is searched over the lattice of distributions whose
    entries are multiples of ``resolution``.  The lattice search is
    exhaustive when small and otherwise zooms from a coarse lattice,
    re-centring each window until its best point is interior.
    """
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    g = _check_g(g)
    M, K = g.shape
    if (M, K) != (c.m, c.k):
        raise ValueError("g and constraint dimensions disagree")
    if c.v_eff > 1.0 / K:
        raise InfeasibleConstraintError(f"v_eff={c.v_eff:.6g} exceeds 1/K")
    q = c.q.probs
    eta = cfg.eta
    r = int(np.argmax(q))
    others = [j for j in range(M) if j != r]
    w_r = np.exp(-eta * (g[r] - g[r].min()))
    N_final = max(int(round(1.0 / resolution)), 1)
    d = len(others) * (K - 1)

    def evaluate(pts: np.ndarray, N: int):
        n = pts.shape[0]
        outer = np.empty((n, len(others), K))
        free = pts.reshape(n, len(others), K - 1)
        outer[:, :, :K - 1] = free / N
        outer[:, :, K - 1] = (N - free.sum(axis=2)) / N
        ok = (outer[:, :, K - 1] >= 0).all(axis=1)
        supplied = np.einsum("j,njk->nk", q[others], outer)
        lower = np.clip((c.v_eff - supplied) / q[r], 0.0, None)
        row = _waterfill(np.broadcast_to(w_r, (n, K)), lower)
        ok &= ~np.isnan(row).any(axis=1)
        f = _entropic_value(row, g[r], eta)
        if others:
            f = f + _entropic_value(outer, g[others], eta).sum(axis=1)
        f = np.where(ok, f, np.inf)
        return f, outer, row

    def assemble(outer, row):
        P = np.empty((M, K))
        P[r] = row
        if others:
            P[others] = outer
        return Policy(np.clip(P, 0.0, 1.0))

    if d == 0:
        f, outer, row = evaluate(np.zeros((1, 0), dtype=np.int64), 1)
        if not np.isfinite(f[0]):
            raise InfeasibleConstraintError("no feasible policy")
        return assemble(outer[0], row[0])

    def box(lo, hi):
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([gr.ravel() for gr in grids], axis=1)

    N = N_final
    while N > 1 and (N + 1) ** d > budget:
        N //= 2
    pts = box(np.zeros(d, dtype=np.int64), np.full(d, N))
    f, outer, row = evaluate(pts, N)
    b = int(np.argmin(f))
    if not np.isfinite(f[b]):
        raise InfeasibleConstraintError("no feasible lattice point")
    best = pts[b]
    while N < N_final:
        N_new = min(N_final, 4 * N)
        center = np.rint(best * N_new / N).astype(np.int64)
        N = N_new
        for _ in range(10 * N):
            lo = np.clip(center - window, 0, N)
            hi = np.clip(center + window, 0, N)
            pts = box(lo, hi)
            f, outer, row = evaluate(pts, N)
            b = int(np.argmin(f))
            cand = pts[b]
            edge = ((cand == lo) & (lo > 0)) | ((cand == hi) & (hi < N))
            if not edge.any() or np.array_equal(cand, center):
                break
            center = cand
        best = pts[b]
    return assemble(outer[b], row[b])

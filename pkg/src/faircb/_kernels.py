"""Compiled inner loops for the constrained entropic FTRL step.

The problem solved here is

    min_P  sum_j <p^j, g_j> + (1/eta) sum_{j,i} p^j(i) ln p^j(i)
    s.t.   p^j in the simplex,  sum_j q(j) p^j(i) >= v  for every arm i

through its dual in the K multipliers ``lam >= 0``.  For fixed ``lam`` the
minimiser is a rowwise softmax, so the dual is smooth and concave; it is
maximised by projected Newton with an Armijo search along the projection
arc.  Every iterate is turned into a strictly feasible primal point, either
by mixing with the uniform policy or by a local repair inside single rows,
and the solve stops once the duality gap of that point is below ``gap_tol``.
"""

import math

import numpy as np
from numba import njit

FLOOR = 1e-300

NEWTON = 0
FIXED = 1
BACKTRACKING = 2

# Certified policies clear the fairness level by this margin, so their
# marginals stay >= v however the caller sums them.
SAFETY = 1e-14

CONVERGED = 0
MAX_ITERS = 1
STALLED = 2


@njit(cache=True)
def _lagrangian(g, q, lam, eta, v, P, logP):
    """Fill ``P`` (and its exact logarithm) with the Lagrangian minimiser at ``lam``.

    Returns the dual value.  ``P`` is floored at ``FLOOR``; ``logP`` is not,
    so certificates stay sound when probabilities underflow.
    """
    M, K = g.shape
    dual = 0.0
    for j in range(M):
        mx = -np.inf
        for i in range(K):
            z = eta * (lam[i] * q[j] - g[j, i])
            P[j, i] = z
            if z > mx:
                mx = z
        s = 0.0
        for i in range(K):
            e = math.exp(P[j, i] - mx)
            P[j, i] = e
            s += e
        lse = mx + math.log(s)
        for i in range(K):
            p = P[j, i] / s
            P[j, i] = p if p > FLOOR else FLOOR
            logP[j, i] = eta * (lam[i] * q[j] - g[j, i]) - lse
        dual -= lse / eta
    for i in range(K):
        dual += v * lam[i]
    return dual


@njit(cache=True)
def _marginals(P, q, m):
    M, K = P.shape
    for i in range(K):
        acc = 0.0
        for j in range(M):
            acc += q[j] * P[j, i]
        m[i] = acc


@njit(cache=True)
def _target(v, K):
    if v <= 0.0:
        return 0.0
    return min(v + SAFETY, 1.0 / K)


@njit(cache=True)
def _certificate(P, logP, q, lam, m, v, eta, Pt):
    """Mix ``P`` with uniform until feasible, store in ``Pt``, return the duality gap.

    The gap splits into (1/eta) * KL(Pt || P) plus complementary slackness
    of ``Pt``; both parts are nonnegative, so it is computed without
    cancellation.
    """
    M, K = P.shape
    unif = 1.0 / K
    vt = _target(v, K)
    theta = 0.0
    for i in range(K):
        if m[i] < vt:
            th = (vt - m[i]) / (unif - m[i])
            if th > theta:
                theta = th
    if theta > 1.0:
        theta = 1.0
    kl = 0.0
    for j in range(M):
        for i in range(K):
            p = P[j, i]
            pt = (1.0 - theta) * p + theta * unif
            Pt[j, i] = pt
            if theta > 0.0:
                kl += pt * (math.log(pt) - logP[j, i]) - pt + p
    slack = 0.0
    for i in range(K):
        mt = (1.0 - theta) * m[i] + theta * unif
        slack += lam[i] * (mt - v)
    return kl / eta + slack


@njit(cache=True)
def _repair(P, logP, q, lam, m, v, eta, Pt, mt):
    """Local feasibility repair; store in ``Pt`` and return its duality gap (inf if it fails).

    Each short arm takes its deficit from one donor arm inside a single
    context row, chosen where the arm already has large probability.  Near
    the optimum deficits are at roundoff level and this costs far less
    KL than mixing with uniform, which would put mass on entries whose
    probability underflowed.
    """
    M, K = P.shape
    Pt[:, :] = P
    for i in range(K):
        mt[i] = m[i]
    vt = _target(v, K)
    for i in range(K):
        if mt[i] >= vt:
            continue
        d = (vt - mt[i]) + 1e-15
        best_j = -1
        best_k = -1
        score = 0.0
        for j in range(M):
            if q[j] <= 0.0:
                continue
            e = d / q[j]
            top = -1
            for k in range(K):
                if k != i and mt[k] - d >= vt and Pt[j, k] > e:
                    if top < 0 or Pt[j, k] > Pt[j, top]:
                        top = k
            if top >= 0:
                sc = q[j] * q[j] * Pt[j, i]
                if best_j < 0 or sc > score:
                    best_j, best_k, score = j, top, sc
        if best_j < 0:
            return np.inf
        e = d / q[best_j]
        Pt[best_j, i] += e
        Pt[best_j, best_k] -= e
        mt[i] += d
        mt[best_k] -= d
    _marginals(Pt, q, mt)
    slack = 0.0
    for i in range(K):
        if mt[i] < v:
            return np.inf
        slack += lam[i] * (mt[i] - v)
    kl = 0.0
    for j in range(M):
        for i in range(K):
            pt = Pt[j, i]
            if pt != P[j, i]:
                kl += pt * (math.log(pt) - logP[j, i]) - pt + P[j, i]
    return kl / eta + slack


@njit(cache=True)
def exp_weights(g, eta):
    """Rowwise softmax of ``-eta * g``; the unconstrained FTRL policy."""
    M, K = g.shape
    P = np.empty((M, K))
    _lagrangian(g, np.zeros(M), np.zeros(K), eta, 0.0, P, np.empty((M, K)))
    return P


@njit(cache=True)
def _newton_direction(P, q, grad, lam, eta, d):
    M, K = P.shape
    free = np.empty(K, dtype=np.int64)
    nf = 0
    for i in range(K):
        d[i] = 0.0
        if lam[i] > 0.0 or grad[i] > 0.0:
            free[nf] = i
            nf += 1
    if nf == K:
        # The Hessian annihilates the all-ones direction; hold the smallest
        # multiplier fixed so the reduced system is nonsingular.
        low = 0
        for a in range(1, nf):
            if lam[free[a]] < lam[free[low]]:
                low = a
        for a in range(low, nf - 1):
            free[a] = free[a + 1]
        nf -= 1
    if nf == 0:
        return False
    H = np.zeros((nf, nf))
    rhs = np.empty(nf)
    for a in range(nf):
        ia = free[a]
        rhs[a] = grad[ia]
        for j in range(M):
            w = eta * q[j] * q[j]
            pa = P[j, ia]
            H[a, a] += w * pa
            for b in range(nf):
                H[a, b] -= w * pa * P[j, free[b]]
    tr = 0.0
    for a in range(nf):
        tr += H[a, a]
    ridge = 1e-13 * tr + 1e-300
    for a in range(nf):
        H[a, a] += ridge
    sol = np.linalg.solve(H, rhs)
    for a in range(nf):
        if not np.isfinite(sol[a]):
            return False
    for a in range(nf):
        d[free[a]] = sol[a]
    return True


@njit(cache=True)
def _project(lam, d, s, grad, lam_new):
    """``lam_new = max(lam + s d, 0)``; returns the first-order increase (NaN if no move)."""
    moved = False
    inc = 0.0
    for i in range(lam.shape[0]):
        x = lam[i] + s * d[i]
        if x < 0.0:
            x = 0.0
        if x != lam[i]:
            moved = True
        lam_new[i] = x
        inc += grad[i] * (x - lam[i])
    return inc if moved else np.nan


@njit(cache=True)
def _search(g, q, lam, d, grad, eta, v, dual, lam_new, scratch, log_scratch, tries, expand):
    """Armijo search along the projection arc; returns the accepted dual value or NaN.

    With ``expand`` set, a full step that passes is doubled while the dual
    keeps increasing, which lets capped or gradient directions cover
    the long, nearly linear stretches of the dual in few iterations.
    """
    K = lam.shape[0]
    s = 1.0
    roundoff = 1e-15 * (abs(dual) + 1.0)
    for attempt in range(tries):
        inc = _project(lam, d, s, grad, lam_new)
        if not inc > 0.0:
            # no move, or not an ascent direction (ill-conditioned Newton system)
            return np.nan
        val = _lagrangian(g, q, lam_new, eta, v, scratch, log_scratch)
        if val >= dual + 1e-4 * inc - roundoff:
            if expand and attempt == 0:
                best = lam_new.copy()
                trial = np.empty(K)
                for _ in range(40):
                    s *= 2.0
                    inc2 = _project(lam, d, s, grad, trial)
                    val2 = _lagrangian(g, q, trial, eta, v, scratch, log_scratch)
                    if np.isnan(inc2) or val2 <= val or val2 < dual + 1e-4 * inc2 - roundoff:
                        break
                    val = val2
                    best[:] = trial
                lam_new[:] = best
            return val
        s *= 0.5
    return np.nan


@njit(cache=True)
def dual_solve(g, q, v, eta, lam0, max_iters, gap_tol, step_rule):
    """Solve one constrained FTRL step.

    Returns ``(P, lam, gap, iterations, status)``.  On failure ``P``/``lam``
    are the iterate with the smallest gap seen.
    """
    M, K = g.shape
    P = np.empty((M, K))
    Pt = np.empty((M, K))
    Pr = np.empty((M, K))
    mt = np.empty(K)
    scratch = np.empty((M, K))
    logP = np.empty((M, K))
    log_scratch = np.empty((M, K))
    lam = np.zeros(K)
    lam_new = np.empty(K)
    m = np.empty(K)
    grad = np.empty(K)
    d = np.empty(K)

    _lagrangian(g, q, lam, eta, v, P, logP)
    _marginals(P, q, m)
    feasible = True
    vt = _target(v, K)
    for i in range(K):
        if m[i] < vt:
            feasible = False
    if feasible:
        return P, lam, 0.0, 0, CONVERGED

    for i in range(K):
        lam[i] = lam0[i] if lam0[i] > 0.0 else 0.0
    qmax = 0.0
    qsq = 0.0
    for j in range(M):
        qsq += q[j] * q[j]
        if q[j] > qmax:
            qmax = q[j]
    grad_step = 1.0 / (eta * qsq)
    trust = 20.0 / (eta * qmax)

    best_gap = np.inf
    blind = 0
    best_P = P.copy()
    best_lam = lam.copy()
    for it in range(1, max_iters + 1):
        # Shifting every multiplier by c leaves the policy unchanged and moves
        # the dual by (K v - 1) c <= 0, so an optimum has min(lam) = 0.
        c = lam.min()
        if c > 0.0:
            for i in range(K):
                lam[i] -= c
        dual = _lagrangian(g, q, lam, eta, v, P, logP)
        _marginals(P, q, m)
        gap = _certificate(P, logP, q, lam, m, v, eta, Pt)
        gap_r = _repair(P, logP, q, lam, m, v, eta, Pr, mt)
        if gap_r < gap:
            gap = gap_r
            Pt[:, :] = Pr
        if gap < best_gap:
            best_gap = gap
            best_P[:, :] = Pt
            best_lam[:] = lam
            blind = 0
        if gap <= gap_tol:
            return Pt.copy(), lam.copy(), gap, it, CONVERGED
        for i in range(K):
            grad[i] = v - m[i]

        if step_rule == FIXED:
            for i in range(K):
                x = lam[i] + grad_step * grad[i]
                lam[i] = x if x > 0.0 else 0.0
            continue

        val = np.nan
        if step_rule == NEWTON and _newton_direction(P, q, grad, lam, eta, d):
            big = 0.0
            for i in range(K):
                # Coordinates pinned at the bound stay there at any scale;
                # drop them so they do not shrink the rest of the capped step.
                if lam[i] == 0.0 and d[i] < 0.0:
                    d[i] = 0.0
                if abs(d[i]) > big:
                    big = abs(d[i])
            capped = big > trust
            if capped:
                for i in range(K):
                    d[i] *= trust / big
            val = _search(g, q, lam, d, grad, eta, v, dual, lam_new, scratch, log_scratch, 60, capped)
            if np.isnan(val) and not capped and blind < 5:
                # The predicted increase can fall below the roundoff of the
                # dual value while the gap is still above tolerance; take
                # the Newton step unverified and let the gap judge it.
                inc = _project(lam, d, 1.0, grad, lam_new)
                if inc > 0.0 and inc <= 1e3 * 1e-15 * (abs(dual) + 1.0):
                    val = dual
                    blind += 1
        if np.isnan(val):
            for i in range(K):
                d[i] = grad_step * grad[i]
            val = _search(g, q, lam, d, grad, eta, v, dual, lam_new, scratch, log_scratch, 60,
                          step_rule != BACKTRACKING)
        if np.isnan(val):
            return best_P, best_lam, best_gap, it, STALLED
        lam[:] = lam_new
    return best_P, best_lam, best_gap, max_iters, MAX_ITERS

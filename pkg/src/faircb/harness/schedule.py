"""Deterministic per-window assignment of items to arms."""

from __future__ import annotations

import numpy as np

from ..core import Policy


def allocate_window(P: Policy | np.ndarray, window_counts) -> np.ndarray:
    """Round ``window_counts[j] * p^j`` to integers by largest remainder.

    Each context's counts sum exactly to ``window_counts[j]``.  Leftover
    units go to the largest fractional parts; ties go to the lowest arm
    index.  Returns an M x K integer array.
    """
    probs = P.probs if isinstance(P, Policy) else np.asarray(P, dtype=np.float64)
    counts = np.asarray(window_counts)
    if counts.shape != (probs.shape[0],):
        raise ValueError("need one window count per context")
    if np.any(counts < 0) or np.any(counts != np.floor(counts)):
        raise ValueError("window counts must be nonnegative integers")
    out = np.zeros(probs.shape, dtype=np.int64)
    for j, n in enumerate(counts.astype(np.int64)):
        share = n * probs[j]
        base = np.floor(share + 1e-9).astype(np.int64)
        base = np.minimum(base, n)
        rem = share - base
        left = int(n - base.sum())
        # stable sort on -rem keeps lowest index first among ties
        order = np.argsort(-np.round(rem, 12), kind="stable")
        base[order[:left]] += 1
        out[j] = base
    return out

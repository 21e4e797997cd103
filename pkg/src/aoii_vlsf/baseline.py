"""Minimum-delay periodic feedback.

Feedback every ``nu`` symbols; the last period may run past ``L``, in which
case the transmitter stops at ``L`` but the feedback still comes at the
period boundary.  With ``R = ceil(L / nu)`` packets the objective is
``(nu + beta) * E[packets]`` and ``E[packets] = sum_{r<R} P(tau > r nu)``.
"""

from __future__ import annotations

import numpy as np

from .channel import DecodePmf, FeedbackSequence


def periodic_objective(pmf: DecodePmf, beta: int, nu: int) -> float:
    """Expected slots until the ACK when feeding back every ``nu`` symbols."""
    L = pmf.L
    if not 1 <= nu <= L:
        raise ValueError(f"period must lie in 1..{L}, got {nu}")
    R = -(-L // nu)
    packets = pmf.survival[np.arange(R) * nu].sum()
    return float((nu + beta) * packets)


def periodic_sequence(L: int, beta: int, nu: int) -> FeedbackSequence:
    """``[nu, ..., nu]`` with the remainder ``L mod nu`` appended."""
    full, rest = divmod(L, nu)
    lengths = [nu] * full + ([rest] if rest else [])
    return FeedbackSequence(tuple(lengths), beta, L)


def best_periodic(pmf: DecodePmf, beta: int):
    """Period with the smallest expected delay; ties go to the shorter one.

    Returns ``(nu_prime, objective, sequence)``.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    objs = np.array([periodic_objective(pmf, beta, v) for v in range(1, pmf.L + 1)])
    best = int(np.argmin(objs)) + 1
    return best, float(objs[best - 1]), periodic_sequence(pmf.L, beta, best)

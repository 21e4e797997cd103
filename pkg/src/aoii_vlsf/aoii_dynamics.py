"""AoII evolution between successful decodings.

With an indicator error function the AoII either grows by one per slot or
drops to zero, and while nothing is decoded it follows a birth/reset chain
over ``0, 1, 2, ...``.  Truncating that chain at ``beta`` is enough to get
the expected AoII accumulated during a feedback interval.
"""

from __future__ import annotations

import numpy as np

from .source import SourceModel


def build_chain(model: SourceModel, beta: int) -> np.ndarray:
    """Transition matrix of the no-decoding AoII chain over ``0..beta``.

    State ``beta`` keeps itself with probability ``1 - mu`` so rows stay
    stochastic; the penalty below never looks at that row.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if beta == 0:
        return np.ones((1, 1))
    B = np.zeros((beta + 1, beta + 1))
    B[0, 0] = model.alpha
    B[0, 1] = 1.0 - model.alpha
    for delta in range(1, beta + 1):
        B[delta, 0] = model.mu
        B[delta, min(delta + 1, beta)] += 1.0 - model.mu
    return B


def feedback_penalty(model: SourceModel, beta: int) -> float:
    """Expected AoII summed over the ``beta`` slots following a correct decode."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if beta == 0:
        return 0.0
    B = build_chain(model, beta)
    weights = np.arange(beta + 1, dtype=float)
    row = np.zeros(beta + 1)
    row[0] = 1.0
    total = 0.0
    for t in range(1, beta + 1):
        row = row @ B
        total += float(np.dot(weights[: t + 1], row[: t + 1]))
    return total


def simulate_penalty(model: SourceModel, beta: int, runs: int, rng: np.random.Generator):
    """Monte Carlo counterpart of :func:`feedback_penalty`.

    Runs the AoII chain from zero for ``beta`` slots, ``runs`` times, and
    returns ``(mean, standard_error)`` of the summed AoII.
    """
    delta = np.zeros(runs, dtype=np.int64)
    total = np.zeros(runs, dtype=np.int64)
    for _ in range(beta):
        u = rng.random(runs)
        stay_zero = delta == 0
        to_zero = np.where(stay_zero, u < model.alpha, u < model.mu)
        delta = np.where(to_zero, 0, delta + 1)
        total += delta
    return float(total.mean()), float(total.std(ddof=1) / np.sqrt(runs))

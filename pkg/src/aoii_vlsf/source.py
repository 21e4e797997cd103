"""Symmetric M-ary Markov source.

Every slot the source keeps its value with probability ``alpha`` and
otherwise jumps uniformly to one of the other ``M - 1`` values.  Because of
the symmetry, multi-step transition probabilities only depend on whether
the start and end values coincide, so the full ``M x M`` matrix is never
needed: the lumped two-state chain ``[[alpha, 1 - alpha], [mu, 1 - mu]]``
carries the same information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidParameter(ValueError):
    """Raised for parameterisations outside the admissible range."""


@dataclass(frozen=True)
class SourceModel:
    """Symmetric Markov source with ``M = 2**k`` values."""

    k: int
    alpha: float

    @property
    def M(self) -> int:
        return 2 ** self.k

    @property
    def mu(self) -> float:
        return (1.0 - self.alpha) / (self.M - 1)


def new_source(k: int, alpha: float) -> SourceModel:
    """Validate ``(k, alpha)`` and return the source model.

    Raises
    ------
    InvalidParameter
        If ``k < 1``, ``alpha`` is outside ``(0, 1)`` or ``alpha <= mu``.
    """
    if int(k) != k or k < 1:
        raise InvalidParameter(f"k must be a positive integer, got {k!r}")
    if not 0.0 < alpha < 1.0:
        raise InvalidParameter(f"alpha must lie in (0, 1), got {alpha!r}")
    model = SourceModel(int(k), float(alpha))
    if not model.alpha > model.mu:
        raise InvalidParameter(
            f"alpha={alpha} must exceed mu={model.mu} (staying must be the most likely move)"
        )
    return model


def p_same(model: SourceModel, t):
    """Probability that the source holds the same value ``t`` slots later.

    Closed form of the (1, 1) entry of the lumped matrix power; accepts a
    scalar or an integer array for ``t``.
    """
    inv_m = 1.0 / model.M
    rate = model.alpha - model.mu
    return inv_m + (1.0 - inv_m) * np.power(rate, t)


def lumped_matrix(model: SourceModel) -> np.ndarray:
    return np.array(
        [[model.alpha, 1.0 - model.alpha], [model.mu, 1.0 - model.mu]], dtype=float
    )


def p_same_matpow(model: SourceModel, t: int) -> float:
    """Same quantity as :func:`p_same`, by repeated squaring of the 2x2 matrix."""
    if t < 0:
        raise ValueError("t must be non-negative")
    result = np.eye(2)
    base = lumped_matrix(model)
    while t:
        if t & 1:
            result = result @ base
        base = base @ base
        t >>= 1
    return float(result[0, 0])


def _uniform_below(n: int, rng: np.random.Generator) -> int:
    # rng.integers is limited to 64-bit bounds; large alphabets fall back to
    # rejection sampling on raw bytes.
    if n <= 2**62:
        return int(rng.integers(n))
    nbits = (n - 1).bit_length()
    nbytes = (nbits + 7) // 8
    mask = (1 << nbits) - 1
    while True:
        v = int.from_bytes(rng.bytes(nbytes), "little") & mask
        if v < n:
            return v


def step(model: SourceModel, x: int, rng: np.random.Generator) -> int:
    """Advance the source one slot from value ``x`` (1-based)."""
    if not 1 <= x <= model.M:
        raise IndexError(f"state {x} outside 1..{model.M}")
    if rng.random() < model.alpha:
        return x
    j = _uniform_below(model.M - 1, rng) + 1
    return j if j < x else j + 1

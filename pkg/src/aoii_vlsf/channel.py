"""Decoding-time statistics of VLSF codes over the real AWGN channel.

The stopping-time PMF is produced by an information-density threshold
crossing experiment: i.i.d. Gaussian codewords of power ``snr`` are sent
over ``Y = X + Z`` and the decoder stops at the first symbol where the
accumulated information density reaches ``log2(M - 1) - log2(epsilon)``.
The maximum stopping time observed defines the blocklength cap ``L``.
"""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG2E = math.log2(math.e)
CHUNK_TRIALS = 8192
DEFAULT_SYMBOL_CAP = 10**6
REFERENCE_TRIALS = 10**6


class PmfError(ValueError):
    """Invalid, unparsable or inconsistent decoding PMF."""


class InconsistentState(ValueError):
    """Conditional probability requested for a zero-probability history."""


class SmallSampleWarning(UserWarning):
    """Fewer trials than the reference estimate; the tail (and L) may be short."""


@dataclass(frozen=True, eq=False)
class DecodePmf:
    """PMF ``pc[m-1] = P(decoder stops at symbol m)`` for ``m = 1..L``."""

    pc: np.ndarray
    k: int | None = None
    epsilon: float | None = None
    snr_db: float | None = None
    trials: int | None = None
    seed: int | None = None
    aborted: int = 0
    _survival: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pc = np.ascontiguousarray(self.pc, dtype=float)
        if pc.ndim != 1 or pc.size == 0:
            raise PmfError("empty PMF")
        if np.any(pc < 0) or not np.all(np.isfinite(pc)):
            raise PmfError("PMF entries must be finite and non-negative")
        if pc[-1] <= 0:
            raise PmfError("last PMF entry must be positive (L is the largest stopping time)")
        if abs(pc.sum() - 1.0) > 1e-9:
            raise PmfError(f"PMF sums to {pc.sum()!r}, expected 1")
        pc.setflags(write=False)
        object.__setattr__(self, "pc", pc)
        # survival[m] = P(tau > m), accumulated from the tail so that
        # survival[L] is exactly zero.
        surv = np.zeros(pc.size + 1)
        surv[:-1] = np.cumsum(pc[::-1])[::-1]
        surv.setflags(write=False)
        object.__setattr__(self, "_survival", surv)

    @property
    def L(self) -> int:
        return int(self.pc.size)

    @property
    def snr(self) -> float | None:
        """Linear SNR."""
        return None if self.snr_db is None else 10.0 ** (self.snr_db / 10.0)

    @property
    def survival(self) -> np.ndarray:
        """``survival[m] = P(tau > m)`` for ``m = 0..L``."""
        return self._survival

    def mean(self) -> float:
        return float(np.dot(np.arange(1, self.L + 1), self.pc))

    def __eq__(self, other):
        if not isinstance(other, DecodePmf):
            return NotImplemented
        return np.array_equal(self.pc, other.pc)

    __hash__ = None


@dataclass(frozen=True)
class FeedbackSequence:
    """Packet lengths between consecutive feedback messages."""

    nu: tuple[int, ...]
    beta: int
    L: int

    def __post_init__(self):
        nu = tuple(int(v) for v in self.nu)
        object.__setattr__(self, "nu", nu)
        if not nu or any(v < 1 for v in nu):
            raise ValueError("packet lengths must be positive integers")
        if sum(nu) != self.L:
            raise ValueError(f"packet lengths sum to {sum(nu)}, expected L={self.L}")
        if self.beta < 0:
            raise ValueError("feedback delay must be non-negative")

    @property
    def boundaries(self) -> np.ndarray:
        """Cumulative symbol counts ``L_r`` at each feedback."""
        return np.cumsum(self.nu)


def threshold_bits(k: int, epsilon: float) -> float:
    """Stopping threshold ``log2(2**k - 1) - log2(epsilon)`` in bits."""
    return math.log2(2**k - 1) - math.log2(epsilon)


def capacity_bits(snr: float) -> float:
    return 0.5 * math.log2(1.0 + snr)


def stopping_times(draw, theta, n_trials, symbol_cap=DEFAULT_SYMBOL_CAP, block=16):
    """First ``m`` with accumulated density ``>= theta``, per trial.

    ``draw(n, width)`` returns an ``(n, width)`` array of per-symbol
    information densities for the ``n`` still-running trials.  Trials
    still short of ``theta`` after ``symbol_cap`` symbols get ``-1``.
    """
    taus = np.full(n_trials, -1, dtype=np.int64)
    active = np.arange(n_trials)
    acc = np.zeros(n_trials)
    offset = 0
    while active.size and offset < symbol_cap:
        width = min(block, symbol_cap - offset)
        csum = np.cumsum(draw(active.size, width), axis=1)
        csum += acc[:, None]
        hit = csum >= theta
        done = hit.any(axis=1)
        first = hit.argmax(axis=1)
        taus[active[done]] = offset + first[done] + 1
        acc = csum[~done, -1]
        active = active[~done]
        offset += width
        block = max(16, block // 2)
    return taus


def _chunk_stopping_times(snr, theta, n_trials, seed_seq, symbol_cap):
    """Stopping times of one chunk over the AWGN channel; -1 marks aborted trials."""
    rng = np.random.default_rng(seed_seq)
    cap = capacity_bits(snr)
    sigma_x = math.sqrt(snr)

    def draw(n, width):
        x = rng.normal(0.0, sigma_x, (n, width))
        z = rng.normal(0.0, 1.0, (n, width))
        y = x + z
        return cap + (LOG2E / 2.0) * (y * y / (1.0 + snr) - z * z)

    return stopping_times(draw, theta, n_trials, symbol_cap, block=max(16, int(1.25 * theta / cap) + 8))


def estimate_pmf(
    k: int,
    snr_db: float,
    epsilon: float,
    trials: int = REFERENCE_TRIALS,
    seed: int = 0,
    symbol_cap: int = DEFAULT_SYMBOL_CAP,
    workers: int = 1,
) -> DecodePmf:
    """Monte Carlo estimate of the VLSF stopping-time PMF.

    Trials are split into fixed-size chunks; chunk ``i`` draws from the
    substream ``SeedSequence([seed, i])`` so the result does not depend on
    ``workers``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if trials < 10**4:
        raise ValueError("at least 10^4 trials are required")
    if trials < REFERENCE_TRIALS:
        warnings.warn(
            f"{trials} trials < {REFERENCE_TRIALS}: the observed maximum L may be short",
            SmallSampleWarning,
            stacklevel=2,
        )
    snr = 10.0 ** (snr_db / 10.0)
    theta = threshold_bits(k, epsilon)
    sizes = [CHUNK_TRIALS] * (trials // CHUNK_TRIALS)
    if trials % CHUNK_TRIALS:
        sizes.append(trials % CHUNK_TRIALS)
    seqs = [np.random.SeedSequence([int(seed), i]) for i in range(len(sizes))]
    args = [(snr, theta, n, s, symbol_cap) for n, s in zip(sizes, seqs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_stopping_times, *zip(*args)))
    else:
        parts = [_chunk_stopping_times(*a) for a in args]
    taus = np.concatenate(parts)
    aborted = int(np.count_nonzero(taus < 0))
    if aborted:
        warnings.warn(f"{aborted} trials exceeded the {symbol_cap}-symbol cap and were dropped")
        taus = taus[taus >= 0]
    if taus.size == 0:
        raise PmfError("no trial reached the stopping threshold")
    counts = np.bincount(taus)[1:]
    return DecodePmf(
        counts / taus.size,
        k=k,
        epsilon=epsilon,
        snr_db=snr_db,
        trials=trials,
        seed=seed,
        aborted=aborted,
    )


def save_pmf(pmf: DecodePmf, path, header: list[str] | None = None) -> None:
    """Write ``m,p_c`` CSV; ``header`` lines become ``#`` comments."""
    meta = {
        "k": pmf.k,
        "epsilon": pmf.epsilon,
        "snr_db": pmf.snr_db,
        "trials": pmf.trials,
        "seed": pmf.seed,
        "L": pmf.L,
    }
    buf = io.StringIO(newline="")
    for line in header or []:
        buf.write(f"# {line}\n")
    for key, value in meta.items():
        if value is not None:
            buf.write(f"# {key}: {value!r}\n")
    buf.write("m,p_c\n")
    for m, p in enumerate(pmf.pc, start=1):
        buf.write(f"{m},{float(p)!r}\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def _parse_meta(comments):
    meta = {}
    for line in comments:
        key, sep, value = line.partition(":")
        if not sep:
            continue
        key, value = key.strip(), value.strip()
        try:
            if key in ("k", "trials", "seed"):
                meta[key] = int(value)
            elif key in ("epsilon", "snr_db"):
                meta[key] = float(value)
        except ValueError:
            pass
    return meta


def load_pmf(path) -> DecodePmf:
    """Read a PMF CSV written by :func:`save_pmf` (or any ``m,p_c`` table).

    A total mass within ``1e-6`` of one is renormalised; anything further
    off is rejected.
    """
    text = Path(path).read_text(encoding="utf-8")
    comments, rows = [], []
    for line in text.splitlines():
        if line.startswith("#"):
            comments.append(line[1:].strip())
        elif line.strip():
            rows.append(line)
    reader = csv.reader(rows)
    try:
        head = next(reader)
    except StopIteration:
        raise PmfError("empty PMF file") from None
    if [h.strip() for h in head] != ["m", "p_c"]:
        raise PmfError(f"expected header 'm,p_c', got {','.join(head)!r}")
    ms, ps = [], []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != 2:
            raise PmfError(f"row {lineno}: expected two fields")
        try:
            ms.append(int(row[0]))
            ps.append(float(row[1]))
        except ValueError as exc:
            raise PmfError(f"row {lineno}: {exc}") from None
    if not ps:
        raise PmfError("empty PMF")
    if ms != list(range(1, len(ms) + 1)):
        raise PmfError("symbol indices must run 1..L in ascending order")
    pc = np.array(ps)
    if np.any(pc < 0) or not np.all(np.isfinite(pc)):
        raise PmfError("PMF entries must be finite and non-negative")
    total = pc.sum()
    if abs(total - 1.0) > 1e-6:
        raise PmfError(f"PMF mass {total!r} differs from 1 by more than 1e-6")
    if abs(total - 1.0) > 1e-12:
        pc = pc / total
    # trailing zeros would make L larger than the largest stopping time
    nz = np.flatnonzero(pc)
    if nz.size == 0:
        raise PmfError("PMF has no mass")
    pc = pc[: nz[-1] + 1]
    meta = _parse_meta(comments)
    return DecodePmf(
        pc,
        k=meta.get("k"),
        epsilon=meta.get("epsilon"),
        snr_db=meta.get("snr_db"),
        trials=meta.get("trials"),
        seed=meta.get("seed"),
    )


def _check_seq(pmf: DecodePmf, seq: FeedbackSequence):
    if seq.L != pmf.L:
        raise ValueError(f"sequence covers {seq.L} symbols but the PMF has L={pmf.L}")


def packet_success(pmf: DecodePmf, seq: FeedbackSequence) -> np.ndarray:
    """Probability that decoding first succeeds after packet ``r``."""
    _check_seq(pmf, seq)
    bounds = np.concatenate(([0], seq.boundaries))
    s = pmf.survival
    return s[bounds[:-1]] - s[bounds[1:]]


def conditional_success(pmf: DecodePmf, b: int, l: int) -> float:
    """Success probability after ``b`` symbols given failure at ``b - l``."""
    if not 1 <= l <= b <= pmf.L:
        raise ValueError(f"need 1 <= l <= b <= L, got b={b}, l={l}, L={pmf.L}")
    s = pmf.survival
    prior = s[b - l]
    if prior <= 0.0:
        raise InconsistentState(f"decoding cannot have failed after {b - l} symbols")
    return float((prior - s[b]) / prior)


def success_table(pmf: DecodePmf) -> np.ndarray:
    """``q[b, l]`` for all ``1 <= l <= b <= L``; other entries are zero."""
    L = pmf.L
    s = pmf.survival
    b = np.arange(L + 1)[:, None]
    l = np.arange(L + 1)[None, :]
    valid = (l >= 1) & (l <= b)
    prior = s[np.clip(b - l, 0, L)]
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(valid & (prior > 0), (prior - s[b]) / prior, 0.0)
    q[L, 1:] = 1.0
    return q


def expected_delay(pmf: DecodePmf, seq: FeedbackSequence) -> float:
    """Mean slots from the first symbol to reception of the ACK."""
    ps = packet_success(pmf, seq)
    r = np.arange(1, len(seq.nu) + 1)
    return float(np.dot(seq.boundaries + r * seq.beta, ps))


def save_sequence(seq: FeedbackSequence, path, header: list[str] | None = None) -> None:
    lines = [f"# {h}" for h in header or []]
    lines += [f"# beta: {seq.beta}", f"# L: {seq.L}", "nu"]
    lines += [str(v) for v in seq.nu]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")


def load_sequence(path, beta: int | None = None) -> FeedbackSequence:
    comments = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            comments[key.strip()] = value.strip()
        elif line.strip():
            body.append(line.strip())
    if not body or body[0] != "nu":
        raise ValueError("expected a single-column CSV with header 'nu'")
    values = [int(v) for v in body[1:]]
    if beta is None:
        beta = int(comments.get("beta", 0))
    return FeedbackSequence(tuple(values), beta, sum(values))


def default_workers() -> int:
    cap = os.environ.get("AOII_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n

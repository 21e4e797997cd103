"""Slot-level Monte Carlo of the zero-tolerance VLSF link.

Per slot: the source steps; a finished packet is decoded (success drawn
from ``q(b, l)``); feedback takes ``beta`` idle slots; a NACK either
continues the sample or, if the source has moved, drops it; an idle
transmitter picks up a fresh sample whenever the receiver is wrong.

Source values are tracked as labels rather than integers in ``1..M``:
only equality with the receiver estimate and with the in-flight sample
matters, so a jump lands on each of those with probability ``1/(M-1)``
and on a never-seen label otherwise.  This is exact in law and works
for ``M = 2**100``.

Each slot consumes five pre-drawn uniforms, so the compiled and the
pure-Python kernels produce identical runs for the same seed.
"""

from __future__ import annotations

import csv
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from . import _backend
from .aoii_dynamics import feedback_penalty
from .baseline import best_periodic
from .channel import DecodePmf, FeedbackSequence, estimate_pmf, expected_delay, load_pmf, save_pmf, success_table
from .mdp import build_aoii_mdp, build_delay_mdp, default_d_max, extract_feedback_sequence, solve_exact, solve_refined
from .source import SourceModel, new_source

IDEAL_ACK = "ideal-ack"
EPSILON_ERROR = "epsilon-error"
TIME_AVERAGE = "time-average"
STAGE_VIEW = "mdp-stage-view"
METHODS = ("aoii-optimal", "delay-optimal", "periodic")
RESULT_FIELDS = (
    "method", "snr_db", "k", "beta", "alpha", "epsilon", "avg_aoii", "aoii_ci95",
    "avg_delay", "delay_ci95", "fraction_error", "runs", "horizon", "seed",
)


class ShortHorizonWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SimConfig:
    horizon: int
    runs: int
    seed: int = 0
    fidelity: str = IDEAL_ACK
    measure: str = TIME_AVERAGE
    epsilon: float = 0.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.fidelity not in (IDEAL_ACK, EPSILON_ERROR):
            raise ValueError(f"unknown fidelity {self.fidelity!r}")
        if self.measure not in (TIME_AVERAGE, STAGE_VIEW):
            raise ValueError(f"unknown measure {self.measure!r}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")


@dataclass(frozen=True)
class SimReport:
    avg_aoii: float
    aoii_ci95: float
    avg_delay: float
    delay_ci95: float
    fraction_error: float
    runs_used: int
    stage_cost: float = float("nan")
    stage_cost_ci95: float = float("nan")
    d_feedback: float = 0.0
    samples: int = 0
    discards: int = 0


def _ci95(x: np.ndarray) -> float:
    n = x.size
    if n < 2:
        return float("nan")
    return float(stats.t.ppf(0.975, n - 1) * x.std(ddof=1) / np.sqrt(n))


def run_uniforms(seed: int, run: int, horizon: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, run])))
    return rng.random((horizon, 5))


def simulate(model: SourceModel, pmf: DecodePmf, seq: FeedbackSequence, config: SimConfig,
             kernels=None) -> SimReport:
    """Monte Carlo estimate of the per-slot AoII and per-sample delay of ``seq``."""
    if seq.L != pmf.L:
        raise ValueError(f"sequence covers {seq.L} symbols but the PMF has L={pmf.L}")
    k = kernels or _backend.kernels
    renewal = 1.0 / (1.0 - model.alpha) + expected_delay(pmf, seq)
    if config.horizon < 100 * renewal:
        warnings.warn(
            f"horizon {config.horizon} is short of 100 renewals (~{100 * renewal:.0f} slots)",
            ShortHorizonWarning,
            stacklevel=2,
        )
    q = success_table(pmf)
    inv_m1 = 1.0 / (model.M - 1)
    eps_mode = config.fidelity == EPSILON_ERROR
    nu = np.asarray(seq.nu, dtype=np.int32)
    T = config.horizon
    aoii = np.empty(config.runs)
    err = np.empty(config.runs)
    delay = np.full(config.runs, np.nan)
    stage = np.full(config.runs, np.nan)
    samples = discards = 0
    for run in range(config.runs):
        U = run_uniforms(config.seed, run, T)
        (s_aoii, n_err, s_delay, n_delay, s_stage, n_stage, n_samples, n_disc) = k.simulate_run(
            nu, seq.beta, q, model.alpha, inv_m1, eps_mode, config.epsilon, U
        )
        aoii[run] = s_aoii / T
        err[run] = n_err / T
        if n_delay:
            delay[run] = s_delay / n_delay
        if n_stage:
            stage[run] = s_stage / n_stage
        samples += n_samples
        discards += n_disc
    d_fb = feedback_penalty(model, seq.beta)
    delays = delay[~np.isnan(delay)]
    report = dict(
        avg_aoii=float(aoii.mean()),
        aoii_ci95=_ci95(aoii),
        avg_delay=float(delays.mean()) if delays.size else float("nan"),
        delay_ci95=_ci95(delays),
        fraction_error=float(err.mean()),
        runs_used=config.runs,
        d_feedback=d_fb,
        samples=samples,
        discards=discards,
    )
    if config.measure == STAGE_VIEW:
        st = stage[~np.isnan(stage)] + d_fb
        report["stage_cost"] = float(st.mean()) if st.size else float("nan")
        report["stage_cost_ci95"] = _ci95(st)
    return SimReport(**report)


# ---------------------------------------------------------------------------
# grid sweep

@dataclass(frozen=True)
class SweepSettings:
    alpha: float
    epsilon: float
    trials: int
    pmf_seed: int = 0
    d_max: int | None = None
    pmf_dir: str | None = None


def _pmf_for(k: int, snr_db: float, s: SweepSettings) -> DecodePmf:
    path = None
    if s.pmf_dir is not None:
        path = Path(s.pmf_dir) / f"pmf_k{k}_snr{snr_db:g}_eps{s.epsilon:g}_n{s.trials}_s{s.pmf_seed}.csv"
        if path.exists():
            return load_pmf(path)
    pmf = estimate_pmf(k, snr_db, s.epsilon, trials=s.trials, seed=s.pmf_seed)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_pmf(pmf, path)
    return pmf


def method_sequence(method: str, model: SourceModel, pmf: DecodePmf, beta: int,
                    d_max: int | None = None) -> FeedbackSequence:
    """Feedback sequence used by ``method`` for this PMF."""
    if method == "periodic":
        return best_periodic(pmf, beta)[2]
    if method == "delay-optimal":
        def build(dm):
            return build_delay_mdp(pmf, beta, dm)
    elif method == "aoii-optimal":
        def build(dm):
            return build_aoii_mdp(model, pmf, beta, dm)
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if d_max is None:
        _, sol, _ = solve_refined(build, default_d_max(pmf.L, beta))
    else:
        sol = solve_exact(build(d_max))
    return extract_feedback_sequence(sol.policy, pmf.L, beta)


def _format(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _key(row) -> tuple:
    return tuple(str(row[f]) for f in ("method", "snr_db", "k", "beta", "alpha", "epsilon", "seed"))


def _run_point(args):
    (snr_db, k, beta, method), config, settings = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pmf = _pmf_for(k, snr_db, settings)
        model = new_source(k, settings.alpha)
        seq = method_sequence(method, model, pmf, beta, settings.d_max)
        rep = simulate(model, pmf, seq, config)
    return {
        "method": method, "snr_db": float(snr_db), "k": int(k), "beta": int(beta),
        "alpha": float(settings.alpha), "epsilon": float(settings.epsilon),
        "avg_aoii": rep.avg_aoii, "aoii_ci95": rep.aoii_ci95,
        "avg_delay": rep.avg_delay, "delay_ci95": rep.delay_ci95,
        "fraction_error": rep.fraction_error, "runs": config.runs,
        "horizon": config.horizon, "seed": config.seed,
    }


def _read_rows(path: Path):
    rows = {}
    if not path.exists():
        return rows
    with open(path, encoding="utf-8", newline="") as fh:
        body = (line for line in fh if not line.startswith("#"))
        for row in csv.DictReader(body):
            rows[_key(row)] = row
    return rows


def sweep(grid, config: SimConfig, settings: SweepSettings, out=None,
          header: list[str] | None = None, workers: int = 1):
    """Simulate every ``(snr_db, k, beta, method)`` point of ``grid``.

    Rows already present in ``out`` (same key and seed) are reused, new ones
    are appended as they finish, and the file is finally rewritten in grid
    order.  All points share the simulation seed, so the methods at a
    given point see the same source and channel draws.
    """
    grid = [(float(s), int(k), int(b), str(m)) for s, k, b, m in grid]
    for point in grid:
        if point[3] not in METHODS:
            raise ValueError(f"unknown method {point[3]!r}; expected one of {METHODS}")
    path = Path(out) if out is not None else None
    done = _read_rows(path) if path is not None else {}

    def key_of(point):
        snr, k, beta, method = point
        return _key({"method": method, "snr_db": float(snr), "k": k, "beta": beta,
                     "alpha": float(settings.alpha), "epsilon": float(settings.epsilon),
                     "seed": config.seed})

    todo = [p for p in dict.fromkeys(grid) if key_of(p) not in done]
    fh = None
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not path.exists()
        fh = open(path, "a", encoding="utf-8", newline="")
        if fresh:
            for line in header or []:
                fh.write(f"# {line}\n")
            fh.write(",".join(RESULT_FIELDS) + "\n")
    try:
        jobs = [(p, config, settings) for p in todo]
        if workers > 1 and len(jobs) > 1:
            pool = ProcessPoolExecutor(max_workers=workers)
            results = pool.map(_run_point, jobs)
        else:
            pool = None
            results = map(_run_point, jobs)
        try:
            for row in results:
                done[_key(row)] = {f: _format(row[f]) for f in RESULT_FIELDS}
                if fh is not None:
                    fh.write(",".join(done[_key(row)][f] for f in RESULT_FIELDS) + "\n")
                    fh.flush()
        finally:
            if pool is not None:
                pool.shutdown()
    finally:
        if fh is not None:
            fh.close()
    ordered = [done[key_of(p)] for p in grid]
    if path is not None:
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            for line in header or []:
                fh.write(f"# {line}\n")
            fh.write(",".join(RESULT_FIELDS) + "\n")
            for row in ordered:
                fh.write(",".join(str(row[f]) for f in RESULT_FIELDS) + "\n")
        os.replace(tmp, path)
    return ordered

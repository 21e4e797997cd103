"""``aoii-vlsf`` command line: PMF estimation, MDP solves and SNR sweeps.

Exit codes: 0 success, 2 usage or invalid input, 3 numerical
non-convergence, 4 I/O failure.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
import warnings
from functools import wraps
from pathlib import Path

import click

from . import __version__
from .channel import (
    capacity_bits,
    default_workers,
    estimate_pmf,
    load_pmf,
    save_pmf,
    save_sequence,
    threshold_bits,
)
from .mdp import (
    AOII,
    DELAY,
    ConvergenceError,
    EXPLICIT_LIMIT,
    build_aoii_mdp,
    build_delay_mdp,
    default_d_max,
    extract_feedback_sequence,
    policy_rows,
    rvi_solve,
    save_policy,
    solve_exact,
    solve_refined,
)
from .simulator import EPSILON_ERROR, IDEAL_ACK, METHODS, SimConfig, SweepSettings, sweep
from .source import new_source

EXIT_USAGE = 2
EXIT_NONCONVERGENCE = 3
EXIT_IO = 4

REQUIRED_KEYS = (
    "alpha", "k", "epsilon", "beta", "snr_db", "methods", "trials",
    "horizon", "runs", "seed", "d_max", "out_dir",
)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def provenance(command: str, config: dict) -> list[str]:
    return [
        f"tool: aoii-vlsf {__version__}",
        f"command: {command}",
        f"config_hash: {config_hash(config)}",
        f"seed: {config.get('seed')}",
        f"config: {json.dumps(config, sort_keys=True)}",
    ]


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard(fn):
    """Map component failures onto the documented exit codes."""

    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConvergenceError as exc:
            _fail(EXIT_NONCONVERGENCE, str(exc))
        except OSError as exc:
            _fail(EXIT_IO, str(exc))
        except ValueError as exc:
            _fail(EXIT_USAGE, str(exc))

    return wrapper


@click.group()
@click.version_option(__version__)
def main():
    """Feedback sequences for VLSF coding under AoII."""
    warnings.showwarning = _show_warning


def _show_warning(message, category, filename, lineno, file=None, line=None):
    click.echo(f"warning: {message}", err=True)


def _epsilon(ctx, param, value):
    if value is not None and not 0.0 < value < 1.0:
        raise click.BadParameter("must lie strictly between 0 and 1")
    return value


@main.command("pmf")
@click.option("--k", "k", type=click.IntRange(min=1), required=True, help="Message bits.")
@click.option("--snr-db", type=float, required=True)
@click.option("--epsilon", type=float, required=True, callback=_epsilon)
@click.option("--trials", type=click.IntRange(min=1), default=10**6, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Default: AOII_THREADS or CPU count.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_guard
def cmd_pmf(k, snr_db, epsilon, trials, seed, workers, out):
    """Estimate the stopping-time PMF and write it as CSV."""
    cfg = {"k": k, "snr_db": snr_db, "epsilon": epsilon, "trials": trials, "seed": seed}
    pmf = estimate_pmf(k, snr_db, epsilon, trials=trials, seed=seed, workers=workers or default_workers())
    save_pmf(pmf, out, header=provenance("pmf", cfg))
    snr = 10.0 ** (snr_db / 10.0)
    click.echo(f"L = {pmf.L}")
    click.echo(f"mean blocklength = {pmf.mean():.6g}")
    click.echo(f"theta = {threshold_bits(k, epsilon):.6g} bits")
    click.echo(f"mean blocklength x C / k = {pmf.mean() * capacity_bits(snr) / k:.4f}")
    if pmf.aborted:
        click.echo(f"aborted trials dropped: {pmf.aborted}")


@main.command("solve")
@click.option("--objective", type=click.Choice([AOII, DELAY]), required=True)
@click.option("--pmf", "pmf_path", type=click.Path(dir_okay=False), required=True)
@click.option("--alpha", type=float, default=None, help="Required for the aoii objective.")
@click.option("--k", "k", type=click.IntRange(min=1), default=None, help="Defaults to the PMF's k.")
@click.option("--beta", type=click.IntRange(min=0), required=True)
@click.option("--d-max", type=click.IntRange(min=1), default=None,
              help="Default: start at 4(L+beta) and double until g settles.")
@click.option("--tol", type=float, default=1e-9, show_default=True)
@click.option("--max-iter", type=click.IntRange(min=1), default=200_000, show_default=True)
@click.option("--solver", type=click.Choice(["auto", "rvi", "exact"]), default="auto", show_default=True)
@click.option("--out-seq", type=click.Path(dir_okay=False), default="sequence.csv", show_default=True)
@click.option("--out-policy", type=click.Path(dir_okay=False), default="policy.csv", show_default=True)
@_guard
def cmd_solve(objective, pmf_path, alpha, k, beta, d_max, tol, max_iter, solver, out_seq, out_policy):
    """Solve the feedback MDP and write the extracted sequence and policy."""
    if tol <= 0:
        raise click.BadParameter("must be positive", param_hint="--tol")
    pmf = load_pmf(pmf_path)
    model = None
    if objective == AOII:
        if alpha is None:
            raise click.UsageError("--alpha is required for the aoii objective")
        k = k if k is not None else pmf.k
        if k is None:
            raise click.UsageError("--k is required (the PMF file does not record it)")
        model = new_source(k, alpha)

    def build(dm):
        if objective == AOII:
            return build_aoii_mdp(model, pmf, beta, dm)
        return build_delay_mdp(pmf, beta, dm)

    cfg = {"objective": objective, "pmf": Path(pmf_path).name, "alpha": alpha, "k": k,
           "beta": beta, "d_max": d_max, "tol": tol, "solver": solver, "seed": pmf.seed}
    start = d_max if d_max is not None else default_d_max(pmf.L, beta)
    if solver == "auto":
        solver = "rvi" if build(start).box_size <= EXPLICIT_LIMIT and d_max is not None else "exact"
    if solver == "rvi":
        spec = build(start)
        sol = rvi_solve(spec, tol=tol, max_iter=max_iter)
    elif d_max is None:
        spec, sol, history = solve_refined(build, start)
        click.echo("d_max refinement: " + ", ".join(f"{dm}:{g:.10g}" for dm, g in history))
    else:
        spec = build(start)
        sol = solve_exact(spec)
    seq = extract_feedback_sequence(sol.policy, pmf.L, beta)
    header = provenance("solve", cfg) + [f"d_max: {spec.d_max}", f"g: {sol.g!r}"]
    save_sequence(seq, out_seq, header=header)
    save_policy(policy_rows(spec, sol), out_policy, header=header)
    click.echo(f"g = {sol.g:.12g}")
    click.echo(f"g without d_feedback = {sol.g - spec.c0:.12g}")
    click.echo(f"d_max = {spec.d_max}")
    click.echo(f"sequence ({len(seq.nu)} packets) = {list(seq.nu)}")


def _as_list(config, key, kind):
    value = config[key]
    items = value if isinstance(value, list) else [value]
    if not items:
        raise click.UsageError(f"config key '{key}' must not be empty")
    out = []
    for i, v in enumerate(items):
        path = f"{key}[{i}]" if isinstance(value, list) else key
        if isinstance(v, bool) or not isinstance(v, kind):
            raise click.UsageError(f"config key '{path}' has the wrong type ({v!r})")
        out.append(v)
    return out


def validate_config(config: dict) -> dict:
    if not isinstance(config, dict):
        raise click.UsageError("config must be a JSON object")
    for key in REQUIRED_KEYS:
        if key not in config:
            raise click.UsageError(f"config is missing required key '{key}'")
    num = (int, float)
    for key in ("alpha", "epsilon"):
        if isinstance(config[key], bool) or not isinstance(config[key], num):
            raise click.UsageError(f"config key '{key}' must be a number")
    if not 0.0 < config["epsilon"] < 1.0:
        raise click.UsageError("config key 'epsilon' must lie in (0, 1)")
    for key in ("trials", "horizon", "runs", "seed"):
        if isinstance(config[key], bool) or not isinstance(config[key], int):
            raise click.UsageError(f"config key '{key}' must be an integer")
    if config["d_max"] is not None and (isinstance(config["d_max"], bool) or not isinstance(config["d_max"], int)):
        raise click.UsageError("config key 'd_max' must be an integer or null")
    _as_list(config, "k", int)
    _as_list(config, "beta", int)
    _as_list(config, "snr_db", num)
    for i, m in enumerate(_as_list(config, "methods", str)):
        if m not in METHODS:
            raise click.UsageError(f"config key 'methods[{i}]' must be one of {', '.join(METHODS)}")
    if config.get("fidelity", IDEAL_ACK) not in (IDEAL_ACK, EPSILON_ERROR):
        raise click.UsageError("config key 'fidelity' must be ideal-ack or epsilon-error")
    return config


PLOT_SCRIPT = '''"""Plot average AoII and delay against SNR from {csv_name}."""
import csv
import sys
import warnings
from collections import defaultdict
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
path = Path(sys.argv[1]) if len(sys.argv) > 1 else here / "{csv_name}"
with open(path, newline="") as fh:
    rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))

groups = defaultdict(list)
for r in rows:
    groups[(int(r["k"]), int(r["beta"]))].append(r)

for (k, beta), grp in sorted(groups.items()):
    for metric, label in (("aoii", "Average AoII"), ("delay", "Average delay")):
        fig, ax = plt.subplots(figsize=(5, 4))
        for method in sorted({{r["method"] for r in grp}}):
            pts = sorted((float(r["snr_db"]), float(r["avg_" + metric]), float(r[metric + "_ci95"]))
                         for r in grp if r["method"] == method)
            xs, ys, es = zip(*pts)
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=method)
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel(label + " (slots)")
        ax.set_title(f"k = {{k}}, beta = {{beta}}")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(here / f"{{metric}}_k{{k}}_beta{{beta}}.png", dpi=150)
        plt.close(fig)
'''


@main.command("run")
@click.argument("config_file", type=click.Path(dir_okay=False))
@click.option("--out-dir", default=None)
@click.option("--runs", type=click.IntRange(min=1), default=None)
@click.option("--horizon", type=click.IntRange(min=1), default=None)
@click.option("--trials", type=click.IntRange(min=1), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--d-max", type=click.IntRange(min=1), default=None)
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Default: AOII_THREADS or CPU count.")
@_guard
def cmd_run(config_file, out_dir, runs, horizon, trials, seed, alpha, d_max, workers):
    """Run an SNR sweep described by a JSON config."""
    try:
        text = Path(config_file).read_text(encoding="utf-8")
    except OSError as exc:
        _fail(EXIT_IO, f"cannot read config: {exc}")
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"config is not valid JSON: {exc}")
    overrides = {"out_dir": out_dir, "runs": runs, "horizon": horizon, "trials": trials,
                 "seed": seed, "alpha": alpha, "d_max": d_max}
    if isinstance(config, dict):
        config.update({k: v for k, v in overrides.items() if v is not None})
    config = validate_config(config)

    ks = _as_list(config, "k", int)
    betas = _as_list(config, "beta", int)
    snrs = [float(s) for s in _as_list(config, "snr_db", (int, float))]
    methods = _as_list(config, "methods", str)
    grid = [(s, k, b, m) for k in ks for b in betas for s in snrs for m in methods]
    fidelity = config.get("fidelity", IDEAL_ACK)
    sim_cfg = SimConfig(
        horizon=config["horizon"], runs=config["runs"], seed=config["seed"], fidelity=fidelity,
        epsilon=float(config["epsilon"]) if fidelity == EPSILON_ERROR else 0.0,
    )
    settings = SweepSettings(
        alpha=float(config["alpha"]), epsilon=float(config["epsilon"]), trials=config["trials"],
        pmf_seed=config["seed"], d_max=config["d_max"],
        pmf_dir=str(Path(config["out_dir"]) / "pmf"),
    )
    for k in ks:
        new_source(k, settings.alpha)  # validate alpha against every k up front
    out = Path(config["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    results = out / "results.csv"
    rows = sweep(grid, sim_cfg, settings, out=results, header=provenance("run", config),
                 workers=workers or default_workers())
    (out / "plot_results.py").write_text(PLOT_SCRIPT.format(csv_name=results.name), encoding="utf-8")
    click.echo(f"{len(rows)} rows -> {results}")
    for r in rows:
        aoii = float(r["avg_aoii"])
        click.echo(f"{r['method']:>14} k={r['k']:>3} beta={r['beta']} snr={float(r['snr_db']):>5g} dB "
                   f"AoII={aoii:.4g} delay={float(r['avg_delay']):.4g}"
                   + ("" if math.isfinite(aoii) else " (no data)"))


if __name__ == "__main__":
    main()

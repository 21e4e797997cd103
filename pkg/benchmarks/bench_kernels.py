"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time
import warnings

import numpy as np

from aoii_vlsf import _backend
from aoii_vlsf.channel import estimate_pmf, success_table
from aoii_vlsf.mdp import build_aoii_mdp, default_d_max, extract_feedback_sequence, solve_exact
from aoii_vlsf.simulator import run_uniforms
from aoii_vlsf.source import new_source


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--horizon", type=int, default=20000)
    args = ap.parse_args()
    if not _backend.HAVE_COMPILED:
        raise SystemExit("compiled extension not built; nothing to compare")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pmf = estimate_pmf(10, 5, 1e-3, trials=20000, seed=0)
    model = new_source(10, 0.995)
    beta = 1
    spec = build_aoii_mdp(model, pmf, beta, default_d_max(pmf.L, beta))
    sol = solve_exact(spec)
    seq = extract_feedback_sequence(sol.policy, pmf.L, beta)
    nu = np.asarray(seq.nu, dtype=np.int32)
    q = success_table(pmf)
    U = run_uniforms(0, 0, args.horizon)
    inv_m1 = 1.0 / (model.M - 1)

    cases = {
        f"sweep (L={pmf.L}, d_max={spec.d_max})":
            lambda k: k.sweep(sol.g, spec.c0, beta, spec.d_max, spec.pr_restart, spec.pr_cont),
        f"simulate_run (T={args.horizon})":
            lambda k: k.simulate_run(nu, beta, q, model.alpha, inv_m1, False, 0.0, U),
    }
    print(f"{'kernel':<32}{'compiled [ms]':>15}{'fallback [ms]':>15}{'speedup':>10}")
    for name, call in cases.items():
        tc = best_of(lambda: call(_backend.compiled), args.repeat)
        tf = best_of(lambda: call(_backend.fallback), args.repeat)
        print(f"{name:<32}{1e3 * tc:>15.2f}{1e3 * tf:>15.2f}{tf / tc:>9.1f}x")


if __name__ == "__main__":
    main()

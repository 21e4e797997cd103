"""End-to-end acceptance checks, one test per criterion.

Each test records its outcome with the ``acceptance`` fixture, which
prints a pass/fail line per criterion at the end of the session.
"""

import json
import shutil
import time
import warnings

import numpy as np
import pytest
from click.testing import CliRunner

from aoii_vlsf.aoii_dynamics import feedback_penalty, simulate_penalty
from aoii_vlsf.baseline import best_periodic
from aoii_vlsf.channel import capacity_bits, estimate_pmf
from aoii_vlsf.cli import main
from aoii_vlsf.mdp import (
    build_aoii_mdp,
    build_delay_mdp,
    default_d_max,
    extract_feedback_sequence,
    policy_average_cost,
    rvi_solve,
    sequence_policy,
    solve_exact,
    solve_refined,
)
from aoii_vlsf.simulator import STAGE_VIEW, SimConfig, method_sequence, simulate
from aoii_vlsf.source import new_source, p_same, p_same_matpow

from helpers import random_pmf
from oracles import brute_force

pytestmark = pytest.mark.slow

SNRS = (0, 5, 10, 15, 20)


def quiet(fn, *args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fn(*args, **kw)


@pytest.fixture(scope="module")
def pmfs_k10():
    return {snr: quiet(estimate_pmf, 10, snr, 1e-3, trials=10**6, seed=0) for snr in (0, 10, 20)}


def test_criterion_1_closed_form(acceptance):
    rng = np.random.default_rng(1)
    triples = [(float(rng.uniform(0.5, 1.0)), int(rng.integers(1, 101)), int(rng.integers(0, 10**4 + 1)))
               for _ in range(1000)]
    models = [new_source(k, a) for a, k, _ in triples]
    t0 = time.perf_counter()
    err = max(abs(p_same(m, t) - p_same_matpow(m, t)) for m, (_, _, t) in zip(models, triples))
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-12 and elapsed < 1.0
    acceptance(1, ok, f"max |err| = {err:.2e}, {elapsed:.3f} s")
    assert ok


def test_criterion_2_feedback_penalty(acceptance):
    t0 = time.perf_counter()
    errs = [abs(feedback_penalty(new_source(k, a), 1) - (1 - a)) for a in (0.6, 0.9, 0.995) for k in (1, 10)]
    model = new_source(1, 0.995)
    exact2 = feedback_penalty(model, 2)
    mc = []
    rng = np.random.default_rng(2)
    for beta in (1, 2, 4, 8):
        mean, se = simulate_penalty(model, beta, 10**6, rng)
        mc.append(abs(mean - feedback_penalty(model, beta)) / se)
    elapsed = time.perf_counter() - t0
    ok = max(errs) <= 1e-12 and abs(exact2 - 0.019925) <= 1e-12 and max(mc) <= 3 and elapsed < 30
    acceptance(2, ok, f"beta=2 penalty {exact2:.9f}, worst MC z = {max(mc):.2f}, {elapsed:.1f} s")
    assert ok


def test_criterion_3_pmf_sanity(acceptance, pmfs_k10):
    k, eps = 10, 1e-3
    sums = [abs(p.pc.sum() - 1) for p in pmfs_k10.values()]
    means = [pmfs_k10[s].mean() for s in (0, 10, 20)]
    ratios = [m * capacity_bits(10 ** (s / 10)) for m, s in zip(means, (0, 10, 20))]
    ok = (max(sums) <= 1e-9 and min(ratios) >= 0.9 * (1 - eps) * k
          and means[0] > means[1] > means[2])
    acceptance(3, ok, "mean blocklengths " + ", ".join(f"{m:.3f}" for m in means)
               + "; mean*C " + ", ".join(f"{r:.3f}" for r in ratios))
    assert ok


def test_criterion_4_rvi_vs_enumeration(acceptance):
    rng = np.random.default_rng(4)
    checked = skipped = 0
    worst = 0.0
    t0 = time.perf_counter()
    while checked < 24 and time.perf_counter() - t0 < 100:
        L = int(rng.integers(2, 6))
        beta = int(rng.integers(0, 3))
        d_max = int(rng.integers(L + beta, min(12, L + beta + 3) + 1))
        spec = build_aoii_mdp(new_source(1, float(rng.uniform(0.55, 0.99))),
                              random_pmf(rng, L, sparse=bool(rng.integers(2))), beta, d_max)
        try:
            g_bf, _ = brute_force(spec, budget=20000)
        except RuntimeError:
            skipped += 1
            continue
        worst = max(worst, abs(rvi_solve(spec).g - g_bf))
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = checked >= 20 and worst <= 1e-6 and elapsed < 120
    acceptance(4, ok, f"{checked} instances ({skipped} over budget), max |dg| = {worst:.1e}, {elapsed:.1f} s")
    assert ok


def test_criterion_5_dominance(acceptance, pmfs_k10):
    rng = np.random.default_rng(5)
    cases = [(p, 10, 0.995) for p in pmfs_k10.values()]
    cases += [(random_pmf(rng, int(rng.integers(1, 15)), sparse=bool(i % 2)), 3, float(rng.uniform(0.6, 0.999)))
              for i in range(12)]
    worst = -np.inf
    t0 = time.perf_counter()
    for pmf, k, alpha in cases:
        model = new_source(k, alpha)
        for beta in (0, 1, 3):
            d_max = 2 * default_d_max(pmf.L, beta)
            dspec = build_delay_mdp(pmf, beta, d_max)
            dsol = solve_exact(dspec)
            per = best_periodic(pmf, beta)[2]
            g_per_d = policy_average_cost(dspec, sequence_policy(per, d_max))
            delay_seq = extract_feedback_sequence(dsol.policy, pmf.L, beta)
            aspec = build_aoii_mdp(model, pmf, beta, d_max)
            asol = solve_exact(aspec)
            g_per_a = policy_average_cost(aspec, sequence_policy(per, d_max))
            g_del_a = policy_average_cost(aspec, sequence_policy(delay_seq, d_max))
            worst = max(worst, dsol.g - g_per_d, asol.g - g_per_a, asol.g - g_del_a)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 300
    acceptance(5, ok, f"{len(cases) * 3} instances, max (g_opt - g_other) = {worst:.1e}, {elapsed:.1f} s")
    assert ok


def _stage_case(k, snr, beta, method):
    pmf = quiet(estimate_pmf, k, snr, 1e-3, trials=10**5, seed=0)
    model = new_source(k, 0.995)

    def build(dm):
        return build_aoii_mdp(model, pmf, beta, dm)

    spec, _, _ = solve_refined(build, default_d_max(pmf.L, beta))
    seq = method_sequence(method, model, pmf, beta)
    g = policy_average_cost(spec, sequence_policy(seq, spec.d_max))
    rep = quiet(simulate, model, pmf, seq, SimConfig(10**5, 100, seed=6, measure=STAGE_VIEW))
    return g, rep


def test_criterion_6_stage_view(acceptance):
    cases = [(10, 10, 1, "aoii-optimal"), (10, 0, 4, "delay-optimal"),
             (10, 20, 1, "periodic"), (100, 5, 1, "aoii-optimal")]
    worst = 0.0
    slowest = 0.0
    for case in cases:
        t0 = time.perf_counter()
        g, rep = _stage_case(*case)
        slowest = max(slowest, time.perf_counter() - t0)
        worst = max(worst, abs(rep.stage_cost - g) / g)
    ok = worst <= 0.02 and slowest < 300
    acceptance(6, ok, f"{len(cases)} configurations, max relative gap {worst:.2%}, slowest {slowest:.1f} s")
    assert ok


@pytest.fixture(scope="module")
def reduced_sweep():
    t0 = time.perf_counter()
    cfg = SimConfig(10**4, 50, seed=7, measure=STAGE_VIEW)
    out = {}
    for k in (10, 100):
        model = new_source(k, 0.995)
        for snr in SNRS:
            pmf = quiet(estimate_pmf, k, snr, 1e-3, trials=10**5, seed=7)
            for method in ("aoii-optimal", "delay-optimal", "periodic"):
                seq = method_sequence(method, model, pmf, 1)
                out[k, snr, method] = quiet(simulate, model, pmf, seq, cfg)
    return out, time.perf_counter() - t0


def test_criterion_7_reduced_sweep(acceptance, reduced_sweep):
    res, elapsed = reduced_sweep
    methods = ("aoii-optimal", "delay-optimal", "periodic")
    bad_a = []
    for k in (10, 100):
        for m in methods:
            for s0, s1 in zip(SNRS, SNRS[1:]):
                a, b = res[k, s0, m], res[k, s1, m]
                if b.avg_aoii > a.avg_aoii + a.aoii_ci95 + b.aoii_ci95:
                    bad_a.append((k, m, s1, "aoii"))
                if b.avg_delay > a.avg_delay + a.delay_ci95 + b.delay_ci95:
                    bad_a.append((k, m, s1, "delay"))
    wins = [s for s in SNRS if s < 10
            and res[100, s, "periodic"].avg_aoii < res[100, s, "delay-optimal"].avg_aoii]
    bad_c = []
    for k in (10, 100):
        for s in SNRS:
            opt = res[k, s, "aoii-optimal"]
            for m in methods[1:]:
                other = res[k, s, m]
                if opt.stage_cost > other.stage_cost + opt.stage_cost_ci95 + other.stage_cost_ci95:
                    bad_c.append((k, s, m))
    ok = not bad_a and bool(wins) and not bad_c and elapsed < 3600
    acceptance(7, ok, f"(a) violations {bad_a}; (b) periodic below delay-optimal at k=100, SNR {wins} dB; "
                      f"(c) violations {bad_c}; {elapsed:.0f} s")
    assert ok


def test_criterion_8_determinism(acceptance, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    runner = CliRunner()
    cfg = {"alpha": 0.995, "k": 10, "epsilon": 1e-3, "beta": 1, "snr_db": [5, 15],
           "methods": ["aoii-optimal", "delay-optimal", "periodic"], "trials": 10000,
           "horizon": 5000, "runs": 4, "seed": 11, "d_max": None, "out_dir": "out"}
    with open("cfg.json", "w") as fh:
        json.dump(cfg, fh)
    commands = [
        (["pmf", "--k", "10", "--snr-db", "5", "--epsilon", "1e-3", "--trials", "10000", "--seed", "3",
          "--out", "pmf.csv"], ["pmf.csv"]),
        (["solve", "--objective", "aoii", "--pmf", "pmf.csv", "--alpha", "0.995", "--k", "10", "--beta", "1",
          "--out-seq", "seq.csv", "--out-policy", "policy.csv"], ["seq.csv", "policy.csv"]),
        (["run", "cfg.json"], ["out/results.csv"]),
    ]
    mismatched = []
    for args, files in commands:
        outputs = []
        for _ in range(2):
            shutil.rmtree("out", ignore_errors=True)
            res = runner.invoke(main, args, catch_exceptions=False)
            assert res.exit_code == 0, res.output
            outputs.append([open(f, "rb").read() for f in files])
        if outputs[0] != outputs[1]:
            mismatched.append(args[0])
    ok = not mismatched
    acceptance(8, ok, f"pmf, solve and run repeated: mismatches {mismatched}")
    assert ok

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aoii_vlsf.baseline import best_periodic, periodic_sequence
from aoii_vlsf.channel import DecodePmf, FeedbackSequence, estimate_pmf
from aoii_vlsf.mdp import (
    ConvergenceError,
    InvalidPolicy,
    Policy,
    SequencePolicy,
    StateSpaceOverflow,
    build_aoii_mdp,
    build_delay_mdp,
    extract_feedback_sequence,
    policy_average_cost,
    policy_rows,
    rvi_solve,
    save_policy,
    solve,
    solve_exact,
    solve_refined,
)
from aoii_vlsf.source import new_source, p_same

from helpers import pmf_from, pmfs
from oracles import brute_force, evaluate

PC3 = pmf_from([0.2, 0.3, 0.5])
POINT1 = DecodePmf(np.array([1.0]))


class Rule(Policy):
    def __init__(self, fn, L, d_max=10**6):
        self.fn, self.L, self.d_max = fn, L, d_max

    def action(self, d, b, l):
        return int(self.fn(d, b, l))


def with_offset(spec, offset):
    object.__setattr__(spec, "c0", spec.c0 + offset)
    spec.__dict__.pop("explicit", None)
    return spec


def test_kernel_example():
    spec = build_aoii_mdp(new_source(1, 0.995), PC3, 1)
    out = dict(spec.transitions((5, 3, 3), 1))
    s1 = p_same(new_source(1, 0.995), 3)
    assert s1 == pytest.approx(0.9851495, abs=1e-7)
    assert out[(0, 0, 0)] == pytest.approx(s1, abs=1e-12)
    assert out[(6, 0, 0)] == pytest.approx(1 - s1, abs=1e-12)
    assert (6, 3, 0) not in out
    assert spec.cost((5, 3, 3)) == pytest.approx(5 + 0.005)


def test_origin_forced_wait():
    spec = build_aoii_mdp(new_source(1, 0.995), PC3, 1)
    assert spec.forced((0, 0, 0)) == 0
    assert spec.transitions((0, 0, 0), 0) == [((1, 1, 1), 1.0)]
    assert spec.forced((4, 3, 2)) == 1
    with pytest.raises(InvalidPolicy):
        spec.transitions((0, 0, 0), 1)
    with pytest.raises(InvalidPolicy):
        spec.transitions((4, 3, 2), 0)


@given(pmfs(max_L=6), st.integers(0, 3), st.floats(0.55, 0.99), st.sampled_from(["aoii", "delay"]))
@settings(max_examples=40, deadline=None)
def test_rows_stochastic_and_saturated(pmf, beta, alpha, objective):
    d_max = pmf.L + beta + 2
    spec = (build_aoii_mdp(new_source(2, alpha), pmf, beta, d_max) if objective == "aoii"
            else build_delay_mdp(pmf, beta, d_max))
    m = spec.explicit
    fb = m.can_feedback
    assert np.allclose(m.prob_fb[fb].sum(axis=1), 1.0, atol=1e-12)
    assert np.all(m.states[:, 0] <= d_max)
    assert np.all(m.states[:, 2] <= m.states[:, 1])
    for s in map(tuple, m.states[:50].tolist()):
        for a in (0, 1):
            if spec.forced(s) in (None, a):
                assert sum(p for _, p in spec.transitions(s, a)) == pytest.approx(1.0, abs=1e-12)


def test_delay_point_mass():
    spec = build_delay_mdp(POINT1, 0)
    res = rvi_solve(spec)
    assert res.g == pytest.approx(0.5, abs=1e-9)
    assert solve_exact(spec).g == pytest.approx(0.5, abs=1e-12)
    assert policy_average_cost(spec, res.policy) == pytest.approx(0.5, abs=1e-12)
    assert spec.explicit.size == 2


def test_tiny_brute_force_example():
    spec = build_aoii_mdp(new_source(1, 0.9), pmf_from([0.5, 0.5]), 1, 12)
    g_bf, n = brute_force(spec)
    assert n > 1
    assert rvi_solve(spec).g == pytest.approx(g_bf, abs=1e-6)


@given(pmfs(max_L=4), st.integers(0, 2), st.floats(0.55, 0.99))
@settings(max_examples=15, deadline=None)
def test_rvi_matches_brute_force(pmf, beta, alpha):
    spec = build_aoii_mdp(new_source(1, alpha), pmf, beta, pmf.L + beta)
    g_bf, _ = brute_force(spec)
    assert rvi_solve(spec).g == pytest.approx(g_bf, abs=1e-6)


@given(pmfs(max_L=6), st.integers(0, 3), st.floats(0.55, 0.995))
@settings(max_examples=25, deadline=None)
def test_rvi_self_consistent(pmf, beta, alpha):
    tol = 1e-9
    spec = build_aoii_mdp(new_source(3, alpha), pmf, beta, 2 * (pmf.L + beta))
    res = rvi_solve(spec, tol=tol)
    assert abs(policy_average_cost(spec, res.policy) - res.g) <= 10 * tol
    assert evaluate(spec, lambda s: res.policy.action(*s)) == pytest.approx(res.g, abs=1e-7)
    # span diagnostic settles monotonically once past the burn-in
    tail = np.array(res.spans[len(res.spans) // 10:])
    assert np.all(np.diff(tail) <= 1e-12 * max(1.0, tail[0]))


def test_rvi_nonconvergence_reports_span():
    spec = build_aoii_mdp(new_source(1, 0.9), PC3, 1)
    with pytest.raises(ConvergenceError) as info:
        rvi_solve(spec, tol=1e-14, max_iter=3)
    assert info.value.span is not None and info.value.span > 0


def test_rvi_arguments():
    spec = build_delay_mdp(PC3, 1)
    with pytest.raises(ValueError):
        rvi_solve(spec, tol=0)
    with pytest.raises(ValueError):
        rvi_solve(spec, ref_state=(99, 0, 0))


def test_constant_cost_shift():
    spec = build_aoii_mdp(new_source(2, 0.9), PC3, 2)
    base = rvi_solve(spec, tol=1e-11)
    shifted = rvi_solve(with_offset(build_aoii_mdp(new_source(2, 0.9), PC3, 2), 3.25), tol=1e-11)
    assert shifted.g - base.g == pytest.approx(3.25, abs=1e-8)
    assert np.array_equal(shifted.policy.actions, base.policy.actions)
    ex = solve_exact(with_offset(build_aoii_mdp(new_source(2, 0.9), PC3, 2), 3.25))
    assert np.array_equal(ex.nu, solve_exact(spec).nu)


@given(pmfs(max_L=7), st.integers(0, 3))
@settings(max_examples=25, deadline=None)
def test_periodic_not_better_than_optimal(pmf, beta):
    spec = build_delay_mdp(pmf, beta)
    g = rvi_solve(spec, tol=1e-10).g
    for v in range(1, pmf.L + 1):
        per = SequencePolicy(periodic_sequence(pmf.L, beta, v), spec.d_max)
        assert policy_average_cost(spec, per) >= g - 1e-8


def test_extraction_examples():
    assert extract_feedback_sequence(Rule(lambda d, b, l: l == 2, 6), 6, 1).nu == (2, 2, 2)
    assert extract_feedback_sequence(Rule(lambda d, b, l: b == 6, 6), 6, 1).nu == (6,)
    assert extract_feedback_sequence(Rule(lambda d, b, l: l == 3 or b == 7, 7), 7, 1).nu == (3, 3, 1)


def test_extraction_rejects_empty_packet():
    with pytest.raises(InvalidPolicy):
        extract_feedback_sequence(Rule(lambda d, b, l: True, 4), 4, 1)


@given(pmfs(max_L=8), st.integers(0, 3))
@settings(max_examples=25, deadline=None)
def test_sequence_policy_round_trip(pmf, beta):
    _, _, seq = best_periodic(pmf, beta)
    pol = SequencePolicy(seq, pmf.L + beta)
    assert extract_feedback_sequence(pol, pmf.L, beta) == seq
    spec = build_delay_mdp(pmf, beta)
    assert policy_average_cost(spec, SequencePolicy(seq, spec.d_max), "renewal") == pytest.approx(
        policy_average_cost(spec, SequencePolicy(seq, spec.d_max), "stationary"), rel=1e-10)


def test_guards():
    with pytest.raises(ValueError):
        build_delay_mdp(PC3, 2, d_max=4)
    with pytest.raises(ValueError):
        build_aoii_mdp(new_source(1, 0.9), PC3, -1)
    spec = build_aoii_mdp(new_source(1, 0.9), PC3, 1, state_cap=10)
    with pytest.raises(StateSpaceOverflow):
        spec.explicit


def test_policy_must_respect_forced_actions():
    spec = build_delay_mdp(PC3, 1)
    with pytest.raises(InvalidPolicy):
        policy_average_cost(spec, Rule(lambda d, b, l: b == 2, 3, spec.d_max), "stationary")


def test_truncation_insensitive_k10():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pmf = estimate_pmf(10, 10, 1e-3, trials=20000, seed=0)
    m = new_source(10, 0.995)
    for beta in (1, 4):
        a = solve_exact(build_aoii_mdp(m, pmf, beta))
        b = solve_exact(build_aoii_mdp(m, pmf, beta, 2 * 4 * (pmf.L + beta)))
        assert abs(a.g - b.g) <= 1e-4 * b.g


def test_refinement_reports_history():
    pmf = pmf_from([0.1, 0.2, 0.3, 0.4])
    spec, sol, hist = solve_refined(lambda dm: build_aoii_mdp(new_source(3, 0.9), pmf, 1, dm), 5)
    assert hist[0][0] == 5 and spec.d_max == hist[-1][0]
    assert abs(hist[-1][1] - hist[-2][1]) <= 1e-4 * hist[-1][1]


def test_delay_optimum_non_increasing_in_snr():
    gs = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for snr in (0, 5, 10, 15, 20):
            pmf = estimate_pmf(10, snr, 1e-3, trials=20000, seed=3)
            gs.append(solve_exact(build_delay_mdp(pmf, 1)).g)
    assert all(a >= b for a, b in zip(gs, gs[1:]))


def test_solve_front_end_and_penalty_split():
    spec = build_aoii_mdp(new_source(1, 0.995), PC3, 2)
    a, b = solve(spec, "rvi"), solve(spec, "exact")
    assert a.g == pytest.approx(b.g, abs=1e-7)
    assert a.g - a.g_without_penalty == pytest.approx(0.019925, abs=1e-12)
    with pytest.raises(ValueError):
        solve(spec, "magic")


def test_policy_dump(tmp_path):
    spec = build_aoii_mdp(new_source(1, 0.9), PC3, 1)
    rvi = rvi_solve(spec)
    rows = list(policy_rows(spec, rvi))
    assert len(rows) == spec.explicit.size
    path = tmp_path / "policy.csv"
    save_policy(rows, path, header=["seed: 1"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed: 1" and lines[1] == "d,b,l,action,value"
    ex = solve_exact(spec)
    ex_rows = list(policy_rows(spec, ex))
    assert ex_rows[0][:3] == (0, 0, 0)
    # values along the exact policy agree with the RVI relative values
    vals = {r[:3]: r[4] for r in rows}
    for d, b, l, a, v in ex_rows:
        assert v == pytest.approx(vals[(d, b, l)], abs=1e-5)
        assert a == rvi.policy.action(d, b, l)

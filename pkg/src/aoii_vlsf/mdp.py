"""Feedback-scheduling MDPs over ``(d, b, l)`` and their solvers.

``d`` counts slots since the last correct decode (saturating at ``d_max``),
``b`` symbols sent for the current sample and ``l`` symbols since the last
feedback.  Action 0 sends one more symbol, action 1 ends the packet and
waits ``beta`` slots for ACK/NACK.

Two solution routes are provided for the same truncated MDP:

* :func:`rvi_solve` - relative value iteration on the explicitly enumerated
  state space, usable while that space stays small;
* :func:`solve_exact` - backward induction over ``d``.  Within one
  renewal cycle ``d`` never decreases, and the only intra-layer coupling
  (``d = d_max``) is a small fixed point over packet starts, so the
  Bellman equation can be solved layer by layer for a given average cost
  and the average cost itself found by Newton steps on the renewal ratio.

Both return a policy usable by :func:`extract_feedback_sequence`.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from . import _backend
from .aoii_dynamics import feedback_penalty
from .channel import DecodePmf, FeedbackSequence, success_table
from .source import SourceModel, p_same

AOII = "aoii"
DELAY = "delay"
DEFAULT_STATE_CAP = 10**7
EXPLICIT_LIMIT = 200_000


class StateSpaceOverflow(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, span=None, iterations=None):
        super().__init__(message)
        self.span = span
        self.iterations = iterations


class ReducibleChain(RuntimeError):
    pass


class InvalidPolicy(ValueError):
    pass


def default_d_max(L: int, beta: int) -> int:
    return 4 * (L + beta)


@dataclass(frozen=True, eq=False)
class ExplicitMdp:
    """Forward closure of ``(0, 0, 0)`` with dense per-state transition arrays."""

    states: np.ndarray      # (N, 3) rows (d, b, l); row 0 is (0, 0, 0)
    index: dict
    next_wait: np.ndarray   # (N,) successor under action 0, -1 if inadmissible
    next_fb: np.ndarray     # (N, 3) successors under action 1 (reset, continue, restart)
    prob_fb: np.ndarray     # (N, 3) matching probabilities; zero rows if inadmissible
    cost: np.ndarray

    @property
    def size(self) -> int:
        return len(self.states)

    @property
    def can_wait(self) -> np.ndarray:
        return self.next_wait >= 0

    @property
    def can_feedback(self) -> np.ndarray:
        return self.states[:, 2] > 0


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """Truncated feedback MDP (AoII or delay objective).

    Holds the per-``(b, l)`` probability tables; the explicit state space
    is only enumerated when :attr:`explicit` is accessed.
    """

    pmf: DecodePmf
    beta: int
    d_max: int
    objective: str
    model: SourceModel | None = None
    state_cap: int = DEFAULT_STATE_CAP
    c0: float = field(init=False)
    pr_reset: np.ndarray = field(init=False, repr=False)
    pr_cont: np.ndarray = field(init=False, repr=False)
    pr_restart: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        L = self.pmf.L
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.d_max < L + self.beta:
            raise ValueError(f"d_max={self.d_max} must be at least L + beta = {L + self.beta}")
        if self.objective not in (AOII, DELAY):
            raise ValueError(f"unknown objective {self.objective!r}")
        lengths = np.arange(L + 1)
        if self.objective == AOII:
            if self.model is None:
                raise ValueError("the AoII objective needs a source model")
            same_now = p_same(self.model, lengths)
            same_later = p_same(self.model, lengths + self.beta)
            c0 = feedback_penalty(self.model, self.beta)
        else:
            same_now = np.ones(L + 1)
            same_later = np.ones(L + 1)
            c0 = 0.0
        q = success_table(self.pmf)
        valid = (lengths[None, :] >= 1) & (lengths[None, :] <= lengths[:, None])
        reset = np.where(valid, q * same_now[None, :], 0.0)
        cont = np.where(valid, (1.0 - q) * same_later[None, :], 0.0)
        cont[L, :] = 0.0
        restart = np.where(valid, q * (1.0 - same_now[None, :]) + (1.0 - q) * (1.0 - same_later[None, :]), 0.0)
        # NACK after the last symbol abandons the sample
        restart[L, :] += np.where(valid[L], (1.0 - q[L]) * same_later, 0.0)
        for name, arr in (("pr_reset", reset), ("pr_cont", cont), ("pr_restart", restart)):
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "c0", float(c0))

    @property
    def L(self) -> int:
        return self.pmf.L

    @property
    def box_size(self) -> int:
        """Upper bound on the number of states."""
        return (self.d_max + 1) * (self.L + 1) * (self.L + 2) // 2

    def cost(self, state) -> float:
        return state[0] + self.c0

    def forced(self, state):
        """Forced action at ``state`` or ``None`` when both are admissible."""
        _, b, l = state
        if l == 0:
            return 0
        if b == self.L:
            return 1
        return None

    def transitions(self, state, action):
        """List of ``(next_state, probability)`` with positive probability."""
        d, b, l = state
        if action == 0:
            if b >= self.L:
                raise InvalidPolicy(f"cannot send beyond L at {state}")
            return [((min(d + 1, self.d_max), b + 1, l + 1), 1.0)]
        if l == 0:
            raise InvalidPolicy(f"empty packet at {state}")
        d2 = min(d + self.beta, self.d_max)
        out = {}
        for target, p in (
            ((0, 0, 0), self.pr_reset[b, l]),
            ((d2, b, 0), self.pr_cont[b, l]),
            ((d2, 0, 0), self.pr_restart[b, l]),
        ):
            if p > 0.0:
                out[target] = out.get(target, 0.0) + float(p)
        return list(out.items())

    @cached_property
    def explicit(self) -> ExplicitMdp:
        return _enumerate(self)


def build_aoii_mdp(model: SourceModel, pmf: DecodePmf, beta: int, d_max: int | None = None,
                   state_cap: int = DEFAULT_STATE_CAP) -> MdpSpec:
    if d_max is None:
        d_max = default_d_max(pmf.L, beta)
    return MdpSpec(pmf, beta, d_max, AOII, model, state_cap)


def build_delay_mdp(pmf: DecodePmf, beta: int, d_max: int | None = None,
                    state_cap: int = DEFAULT_STATE_CAP) -> MdpSpec:
    if d_max is None:
        d_max = default_d_max(pmf.L, beta)
    return MdpSpec(pmf, beta, d_max, DELAY, None, state_cap)


def _enumerate(spec: MdpSpec) -> ExplicitMdp:
    L, dmax, beta = spec.L, spec.d_max, spec.beta
    index = {(0, 0, 0): 0}
    states = [(0, 0, 0)]
    next_wait, next_fb, prob_fb = [], [], []

    def idx(s):
        i = index.get(s)
        if i is None:
            i = index[s] = len(states)
            states.append(s)
            if len(states) > spec.state_cap:
                raise StateSpaceOverflow(
                    f"more than {spec.state_cap} reachable states (d_max={dmax}, L={L})"
                )
        return i

    i = 0
    while i < len(states):
        d, b, l = states[i]
        next_wait.append(idx((min(d + 1, dmax), b + 1, l + 1)) if b < L else -1)
        if l > 0:
            d2 = min(d + beta, dmax)
            probs = (spec.pr_reset[b, l], spec.pr_cont[b, l], spec.pr_restart[b, l])
            targets = ((0, 0, 0), (d2, b, 0), (d2, 0, 0))
            next_fb.append([idx(t) if p > 0.0 else 0 for t, p in zip(targets, probs)])
            prob_fb.append(probs)
        else:
            next_fb.append([0, 0, 0])
            prob_fb.append((0.0, 0.0, 0.0))
        i += 1
    st = np.array(states, dtype=np.int64)
    mdp = ExplicitMdp(
        states=st,
        index=index,
        next_wait=np.array(next_wait, dtype=np.int64),
        next_fb=np.array(next_fb, dtype=np.int64),
        prob_fb=np.array(prob_fb, dtype=float),
        cost=st[:, 0] + spec.c0,
    )
    if not _all_policies_reach_origin(mdp):
        raise ReducibleChain("some policy never returns to (0, 0, 0); the MDP is not unichain")
    return mdp


def _all_policies_reach_origin(mdp: ExplicitMdp) -> bool:
    """True when (0,0,0) is reached with positive probability under every policy.

    Attractor computation: a state joins once every admissible action has a
    positive-probability successor already in the set.
    """
    N = mdp.size
    preds = [[] for _ in range(N)]
    pending = np.zeros(N, dtype=np.int64)
    for s in range(N):
        if mdp.next_wait[s] >= 0:
            preds[mdp.next_wait[s]].append((s, 0))
            pending[s] += 1
        if mdp.states[s, 2] > 0:
            pending[s] += 1
            for t, p in zip(mdp.next_fb[s], mdp.prob_fb[s]):
                if p > 0.0:
                    preds[t].append((s, 1))
    inside = np.zeros(N, dtype=bool)
    covered = np.zeros((N, 2), dtype=bool)
    inside[0] = True
    queue = deque([0])
    while queue:
        t = queue.popleft()
        for s, a in preds[t]:
            if inside[s] or covered[s, a]:
                continue
            covered[s, a] = True
            pending[s] -= 1
            if pending[s] == 0:
                inside[s] = True
                queue.append(s)
    return bool(inside.all())


# ---------------------------------------------------------------------------
# policies

class Policy:
    """Deterministic stationary feedback policy over ``(d, b, l)``."""

    d_max: int
    L: int

    def action(self, d: int, b: int, l: int) -> int:
        raise NotImplementedError

    def defined_at(self, d: int, b: int, l: int) -> bool:
        return True

    def packet_table(self) -> np.ndarray:
        """Packet length chosen at every packet start ``(d, b, 0)``.

        Shape ``(d_max + 1, L + 1)``; column ``L`` is unused.
        """
        table = np.zeros((self.d_max + 1, self.L + 1), dtype=np.int32)
        for d0 in range(self.d_max + 1):
            for b0 in range(self.L):
                if not self.defined_at(d0, b0, 0):
                    # never visited, any admissible length will do
                    table[d0, b0] = self.L - b0
                    continue
                d, b, l = d0, b0, 0
                while True:
                    if l > 0 and (b == self.L or self.action(d, b, l) == 1):
                        break
                    d, b, l = min(d + 1, self.d_max), b + 1, l + 1
                table[d0, b0] = l
        return table


class TablePolicy(Policy):
    """Action per enumerated state of an :class:`ExplicitMdp`."""

    def __init__(self, spec: MdpSpec, actions: np.ndarray):
        self.spec = spec
        self.actions = np.asarray(actions, dtype=np.int8)
        self.d_max = spec.d_max
        self.L = spec.L

    def defined_at(self, d, b, l):
        return (d, b, l) in self.spec.explicit.index

    def action(self, d, b, l):
        try:
            return int(self.actions[self.spec.explicit.index[(d, b, l)]])
        except KeyError:
            raise InvalidPolicy(f"state {(d, b, l)} is not in the state space") from None


class SequencePolicy(Policy):
    """Feedback exactly at the cumulative boundaries of a fixed sequence."""

    def __init__(self, seq: FeedbackSequence, d_max: int):
        self.seq = seq
        self.d_max = d_max
        self.L = seq.L
        self._bounds = frozenset(int(v) for v in seq.boundaries)

    def action(self, d, b, l):
        return int(l > 0 and b in self._bounds)

    def packet_table(self):
        bounds = np.asarray(self.seq.boundaries)
        starts = np.arange(self.L)
        nxt = bounds[np.searchsorted(bounds, starts, side="right")]
        row = np.zeros(self.L + 1, dtype=np.int32)
        row[: self.L] = nxt - starts
        return np.ascontiguousarray(np.broadcast_to(row, (self.d_max + 1, self.L + 1)))


class PacketPolicy(Policy):
    """Greedy policy of an exact solution, stored per packet start."""

    def __init__(self, spec: MdpSpec, g: float, w: np.ndarray, nu: np.ndarray):
        self.spec = spec
        self.g = g
        self.w = w
        self.nu = nu
        self.d_max = spec.d_max
        self.L = spec.L

    def packet_table(self):
        return self.nu

    def _options(self, d, b, l):
        """Values of feeding back after ``j = 0..L-b`` more symbols."""
        spec = self.spec
        j = np.arange(0, self.L - b + 1)
        costs = np.minimum(d + j, self.d_max) + spec.c0 - self.g
        acc = np.cumsum(costs)
        d2 = np.minimum(d + j + spec.beta, self.d_max)
        bb, ll = b + j, l + j
        vals = acc + spec.pr_restart[bb, ll] * self.w[d2, 0] + spec.pr_cont[bb, ll] * self.w[d2, bb]
        if l == 0:
            vals[0] = np.inf
        return vals

    def action(self, d, b, l):
        if l == 0:
            return 0
        if b == self.L:
            return 1
        start_d = d - l if d < self.d_max else self.d_max
        if start_d >= 0:
            chosen = int(self.nu[start_d, b - l])
            if l < chosen:
                return 0
            if l == chosen:
                return 1
        vals = self._options(d, b, l)
        return int(vals[0] < vals[1:].min())

    def value(self, d, b, l):
        if l == 0:
            return float(self.w[d, b])
        return float(self._options(d, b, l).min())


def sequence_policy(seq: FeedbackSequence, d_max: int) -> SequencePolicy:
    return SequencePolicy(seq, d_max)


# ---------------------------------------------------------------------------
# relative value iteration

@dataclass
class RviResult:
    g: float
    values: np.ndarray
    policy: TablePolicy
    iterations: int
    span: float
    spans: list = field(default_factory=list, repr=False)


def _bellman(mdp: ExplicitMdp, V: np.ndarray):
    q_wait = np.where(mdp.can_wait, mdp.cost + V[np.maximum(mdp.next_wait, 0)], np.inf)
    q_fb = np.where(
        mdp.can_feedback,
        mdp.cost + np.einsum("ij,ij->i", mdp.prob_fb, V[mdp.next_fb]),
        np.inf,
    )
    act = (q_fb < q_wait).astype(np.int8)
    return np.minimum(q_wait, q_fb), act


def rvi_solve(spec: MdpSpec, tol: float = 1e-9, max_iter: int = 200_000,
              ref_state=(0, 0, 0), damping: float = 0.5) -> RviResult:
    """Relative value iteration with an aperiodicity step.

    Each sweep applies ``V <- (1 - damping) V + damping (TV - TV(ref))``,
    which is plain RVI on the lazy chain ``damping P + (1 - damping) I``
    (same average cost and optimal policies, but immune to periodic
    cycles).  Stops when ``span(TV - V) <= tol``; the returned ``g`` is
    ``TV(ref) - V(ref)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    mdp = spec.explicit
    try:
        ref = mdp.index[tuple(ref_state)]
    except KeyError:
        raise ValueError(f"reference state {ref_state} is not reachable") from None
    V = np.zeros(mdp.size)
    span = np.inf
    spans = []
    for it in range(1, max_iter + 1):
        TV, act = _bellman(mdp, V)
        diff = TV - V
        span = float(diff.max() - diff.min())
        spans.append(span)
        if span <= tol:
            g = float(diff[ref])
            return RviResult(g, V, TablePolicy(spec, act), it, span, spans)
        V = (1.0 - damping) * V + damping * (TV - TV[ref])
        if not np.all(np.isfinite(V)):
            raise ConvergenceError("value iteration diverged", span, it)
    raise ConvergenceError(
        f"RVI did not reach span {tol:g} in {max_iter} iterations (span {span:.3g})",
        span,
        max_iter,
    )


# ---------------------------------------------------------------------------
# exact structured solver

@dataclass
class ExactSolution:
    g: float
    w: np.ndarray           # relative value at packet starts (d, b, 0)
    n: np.ndarray           # expected stages to the next reset
    nu: np.ndarray          # greedy packet length per packet start
    iterations: int
    policy: PacketPolicy


def solve_exact(spec: MdpSpec, tol: float = 1e-12, max_iter: int = 200,
                kernels=None) -> ExactSolution:
    """Optimal average cost by layered backward induction.

    For a trial average cost ``g`` one sweep gives the optimal value of
    ``sum(stage cost - g)`` until the next return to ``(0, 0, 0)``; the root
    in ``g`` is found by Newton steps ``g <- C/N`` (cycle cost over cycle
    stages of the current greedy policy), which terminate finitely.
    """
    k = kernels or _backend.kernels
    g = 0.0
    prev = None
    for it in range(1, max_iter + 1):
        w, n, nu = k.sweep(g, spec.c0, spec.beta, spec.d_max, spec.pr_restart, spec.pr_cont)
        g_new = float(g + w[0, 0] / n[0, 0])
        stable = prev is not None and np.array_equal(prev, nu)
        if stable or abs(g_new - g) <= tol * max(1.0, abs(g_new)):
            return ExactSolution(g_new, w, n, nu, it, PacketPolicy(spec, g, w, nu))
        prev = nu
        g = g_new
    raise ConvergenceError(f"Newton iteration on g did not settle in {max_iter} steps",
                           iterations=max_iter)


def solve_refined(build, d_max: int, rtol: float = 1e-4, max_doublings: int = 6):
    """Solve ``build(d_max)`` exactly, doubling ``d_max`` until ``g`` settles.

    Stops once two consecutive truncation levels agree within ``rtol``
    relative; returns ``(spec, solution, history)`` for the last level with
    ``history`` the list of ``(d_max, g)`` pairs tried.
    """
    spec = build(d_max)
    sol = solve_exact(spec)
    history = [(d_max, sol.g)]
    for _ in range(max_doublings):
        d_max *= 2
        spec2 = build(d_max)
        sol2 = solve_exact(spec2)
        history.append((d_max, sol2.g))
        settled = abs(sol2.g - sol.g) <= rtol * abs(sol2.g)
        spec, sol = spec2, sol2
        if settled:
            return spec, sol, history
    raise ConvergenceError(
        f"average cost still moving after {max_doublings} doublings of d_max "
        f"(last {history[-2][1]:.6g} -> {history[-1][1]:.6g})"
    )


def evaluate_packet_table(spec: MdpSpec, table: np.ndarray, kernels=None):
    """Average cost of a packet-length table via the renewal ratio."""
    k = kernels or _backend.kernels
    table = np.ascontiguousarray(table, dtype=np.int32)
    w, n, _ = k.sweep(0.0, spec.c0, spec.beta, spec.d_max, spec.pr_restart, spec.pr_cont, table)
    return float(w[0, 0] / n[0, 0])


# ---------------------------------------------------------------------------
# policy evaluation

def _policy_actions(spec: MdpSpec, policy: Policy) -> np.ndarray:
    mdp = spec.explicit
    if isinstance(policy, TablePolicy) and policy.spec is spec:
        acts = policy.actions.astype(np.int8)
    else:
        acts = np.array([policy.action(*map(int, s)) for s in mdp.states], dtype=np.int8)
    bad = (acts == 1) & ~mdp.can_feedback | (acts == 0) & ~mdp.can_wait
    if bad.any():
        s = tuple(int(v) for v in mdp.states[np.flatnonzero(bad)[0]])
        raise InvalidPolicy(f"policy violates a forced action at {s}")
    return acts


def policy_average_cost(spec: MdpSpec, policy: Policy, method: str = "auto") -> float:
    """Long-run average stage cost of ``policy``.

    ``"stationary"`` solves for the stationary distribution of the induced
    chain on the enumerated state space; ``"renewal"`` uses the cycle
    ratio from the layered sweep.  ``"auto"`` picks the first one when the
    state space is small.
    """
    if method == "auto":
        method = "stationary" if spec.box_size <= EXPLICIT_LIMIT else "renewal"
    if method == "renewal":
        return evaluate_packet_table(spec, policy.packet_table())
    if method != "stationary":
        raise ValueError(f"unknown method {method!r}")

    mdp = spec.explicit
    acts = _policy_actions(spec, policy)
    N = mdp.size
    rows, cols, vals = [], [], []
    wait = acts == 0
    ws = np.flatnonzero(wait)
    rows.append(ws)
    cols.append(mdp.next_wait[ws])
    vals.append(np.ones(ws.size))
    fs = np.flatnonzero(~wait)
    for j in range(3):
        rows.append(fs)
        cols.append(mdp.next_fb[fs, j])
        vals.append(mdp.prob_fb[fs, j])
    P = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )
    P.eliminate_zeros()
    reach = np.sort(csgraph.breadth_first_order(P, 0, directed=True, return_predecessors=False))
    sub = P[reach][:, reach]
    ncomp, _ = csgraph.connected_components(sub, directed=True, connection="strong")
    if ncomp != 1:
        raise ReducibleChain(f"induced chain from (0,0,0) splits into {ncomp} classes")
    n = reach.size
    A = (sub.T - sparse.identity(n, format="csr")).tolil()
    A[n - 1, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = spsolve(A.tocsc(), rhs)
    return float(np.dot(pi, mdp.cost[reach]))


# ---------------------------------------------------------------------------
# unified front end

@dataclass
class MdpSolution:
    g: float
    policy: Policy
    method: str
    iterations: int
    c0: float

    @property
    def g_without_penalty(self) -> float:
        return self.g - self.c0


def solve(spec: MdpSpec, method: str = "auto", tol: float = 1e-9, max_iter: int = 200_000) -> MdpSolution:
    """Solve with RVI on small state spaces, the exact layered solver otherwise."""
    if method == "auto":
        method = "rvi" if spec.box_size <= EXPLICIT_LIMIT else "exact"
    if method == "rvi":
        res = rvi_solve(spec, tol=tol, max_iter=max_iter)
        return MdpSolution(res.g, res.policy, "rvi", res.iterations, spec.c0)
    if method == "exact":
        res = solve_exact(spec)
        return MdpSolution(res.g, res.policy, "exact", res.iterations, spec.c0)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# sequence extraction

def extract_feedback_sequence(policy: Policy, L: int, beta: int) -> FeedbackSequence:
    """Walk the policy from ``(0, 0, 0)`` assuming NACKs and a static source."""
    d_max = getattr(policy, "d_max", None)
    d = b = l = 0
    nus = []
    limit = 2 * L + 1
    for _ in range(limit):
        dq = d if d_max is None else min(d, d_max)
        if b == L:
            if l == 0:
                raise InvalidPolicy("walk reached b = L with an empty packet")
            nus.append(l)
            return FeedbackSequence(tuple(nus), beta, L)
        if policy.action(dq, b, l) == 1:
            if l == 0:
                raise InvalidPolicy(f"policy requests feedback with an empty packet at {(dq, b, l)}")
            nus.append(l)
            l = 0
            d += beta
        else:
            d, b, l = d + 1, b + 1, l + 1
    raise InvalidPolicy(f"extraction walk exceeded {limit} stages")


# ---------------------------------------------------------------------------
# dumps

def policy_rows(spec: MdpSpec, solution):
    """``(d, b, l, action, value)`` rows.

    For an RVI solution every enumerated state is listed; for an exact
    solution, the states visited by the induced chain from ``(0, 0, 0)``.
    """
    if isinstance(solution, RviResult):
        mdp = spec.explicit
        acts = solution.policy.actions
        for (d, b, l), a, v in zip(mdp.states.tolist(), acts.tolist(), solution.values.tolist()):
            yield d, b, l, a, v
        return
    pol = solution.policy if isinstance(solution, (ExactSolution, MdpSolution)) else solution
    if isinstance(pol, TablePolicy):
        mdp = spec.explicit
        for (d, b, l), a in zip(mdp.states.tolist(), pol.actions.tolist()):
            yield d, b, l, a, math.nan
        return
    seen = set()
    starts = deque([(0, 0)])
    visited = {(0, 0)}
    rows = []
    while starts:
        d0, b0 = starts.popleft()
        v = int(pol.nu[d0, b0])
        # values along the packet: total from the start minus the costs already paid
        costs = np.minimum(d0 + np.arange(v + 1), spec.d_max) + spec.c0 - pol.g
        tail = float(pol.w[d0, b0]) - np.concatenate(([0.0], np.cumsum(costs[:-1])))
        for j in range(v + 1):
            st = (min(d0 + j, spec.d_max), b0 + j, j)
            if st not in seen:
                seen.add(st)
                rows.append((*st, int(j == v), float(tail[j])))
        bb = b0 + v
        d2 = min(d0 + v + spec.beta, spec.d_max)
        nxt = []
        if spec.pr_cont[bb, v] > 0.0 and bb < spec.L:
            nxt.append((d2, bb))
        if spec.pr_restart[bb, v] > 0.0:
            nxt.append((d2, 0))
        for s in nxt:
            if s not in visited:
                visited.add(s)
                starts.append(s)
    rows.sort()
    yield from rows


def save_policy(rows, path, header: list[str] | None = None) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        for line in header or []:
            fh.write(f"# {line}\n")
        fh.write("d,b,l,action,value\n")
        for d, b, l, a, v in rows:
            fh.write(f"{d},{b},{l},{a},{v!r}\n")

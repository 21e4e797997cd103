"""Pure-Python/numpy versions of the hot kernels.

Same signatures and same arithmetic order as ``_kernels.pyx``; the
simulator kernel is bit-for-bit identical to the compiled one, the solver
sweeps agree to floating-point rounding.
"""

from __future__ import annotations

import numpy as np

IDLE, TX, FB = 0, 1, 2


def top_layer(g, c0, dmax, pr_restart, pr_cont, fixed_nu=None, max_iter=200):
    """Solve the saturated layer ``d = dmax`` (packet starts only).

    Returns ``(u, n, nu)`` with ``u[b]`` the relative value, ``n[b]`` the
    expected number of stages to the next reset and ``nu[b]`` the packet
    length chosen at packet start ``b``; arrays have ``L + 1`` entries with
    a zero sentinel at ``b = L``.
    """
    L = pr_restart.shape[0] - 1
    ctop = dmax + c0 - g
    u = np.zeros(L + 1)
    slope = np.zeros(L + 1)
    stages = np.zeros(L + 1)
    nu = np.zeros(L + 1, dtype=np.int32)
    x = 0.0
    prev = None
    for _ in range(max_iter):
        for b in range(L - 1, -1, -1):
            lengths = np.arange(1, L - b + 1)
            bb = b + lengths
            rr = pr_restart[bb, lengths]
            rc = pr_cont[bb, lengths]
            if fixed_nu is None:
                val = (lengths + 1) * ctop + rr * x + rc * u[bb]
                j = val.size - 1 - int(np.argmin(val[::-1]))
            else:
                j = int(fixed_nu[b]) - 1
                val = None
            v = int(lengths[j])
            nu[b] = v
            u[b] = (v + 1) * ctop + rr[j] * x + rc[j] * u[b + v]
            slope[b] = rr[j] + rc[j] * slope[b + v]
            stages[b] = (v + 1) + rc[j] * stages[b + v]
        # u[0] is affine in x under the current choices: solve the fixed point
        x_new = (u[0] - slope[0] * x) / (1.0 - slope[0])
        same = prev is not None and np.array_equal(prev, nu)
        done = fixed_nu is not None or same or abs(x_new - x) <= 1e-13 * max(1.0, abs(x_new))
        prev = nu.copy()
        x = x_new
        if done:
            break
    # final pass at the converged x so every u[b] is consistent with it
    n0 = stages[0] / (1.0 - slope[0])
    for b in range(L - 1, -1, -1):
        v = int(nu[b])
        bb = b + v
        u[b] = (v + 1) * ctop + pr_restart[bb, v] * x + pr_cont[bb, v] * u[bb]
    u[0] = x
    n = stages + slope * n0
    n[L] = 0.0
    u[L] = 0.0
    return u, n, nu


def sweep(g, c0, beta, dmax, pr_restart, pr_cont, fixed_nu=None):
    """Backward induction over ``d`` on packet-start states ``(d, b, 0)``.

    ``w[d, b]`` is the relative value (stage cost ``d + c0 - g``, reset
    state valued zero), ``n[d, b]`` the expected stage count to reset and
    ``nu[d, b]`` the greedy (or fixed) packet length.  Column ``L`` is a
    zero sentinel.
    """
    L = pr_restart.shape[0] - 1
    w = np.zeros((dmax + 1, L + 1))
    n = np.zeros((dmax + 1, L + 1))
    nu = np.zeros((dmax + 1, L + 1), dtype=np.int32)
    top_fixed = None if fixed_nu is None else fixed_nu[dmax]
    w[dmax], n[dmax], nu[dmax] = top_layer(g, c0, dmax, pr_restart, pr_cont, top_fixed)
    if dmax == 0:
        return w, n, nu

    lengths = np.arange(1, L + 1)
    b_col = np.arange(L)[:, None]
    bb = b_col + lengths[None, :]
    valid = bb <= L
    bb_c = np.where(valid, bb, L)
    len_c = np.broadcast_to(lengths, bb.shape)
    rr = np.where(valid, pr_restart[bb_c, len_c], 0.0)
    rc = np.where(valid, pr_cont[bb_c, len_c], 0.0)
    stage_cnt = (lengths + 1).astype(float)
    rows = np.arange(L)
    offs = np.arange(L + 1)

    for d in range(dmax - 1, -1, -1):
        costs = np.minimum(d + offs, dmax) + c0 - g
        cp = np.cumsum(costs)[1:]          # cp[v-1] = sum_{j=0..v} cost_j
        d2 = np.minimum(d + lengths + beta, dmax)
        w_restart = w[d2, 0]
        w_cont = w[d2[None, :], bb_c]
        val = cp[None, :] + rr * w_restart[None, :] + rc * w_cont
        if fixed_nu is None:
            val = np.where(valid, val, np.inf)
            j = L - 1 - np.argmin(val[:, ::-1], axis=1)
        else:
            j = fixed_nu[d, :L].astype(np.intp) - 1
        n_restart = n[d2, 0]
        n_cont = n[d2[None, :], bb_c]
        nst = stage_cnt[None, :] + rr * n_restart[None, :] + rc * n_cont
        w[d, :L] = val[rows, j]
        n[d, :L] = nst[rows, j]
        nu[d, :L] = j + 1
    return w, n, nu


def simulate_run(nu, beta, q, alpha, inv_m1, eps_mode, epsilon, U):
    """One simulation run over ``len(U)`` slots.

    ``U`` holds five uniforms per slot: source stay, source jump target,
    decode success, decode error, error target.  Source values are labels:
    only equality with the receiver estimate and the in-flight sample
    matters, so any value outside those two is a fresh label.

    Returns ``(sum_aoii, err_slots, sum_delay, n_delay, stage_sum, n_stages,
    samples, discards)``.
    """
    R = len(nu)
    nu = [int(v) for v in nu]
    U = U.tolist()
    qt = q.tolist()
    # the receiver starts out of sync so the first sample is sent at t = 0
    x = s = 0
    xhat = 1
    fresh = 2
    phase = IDLE
    r = sent = b = fb_left = 0
    ack = False
    t_start = 0
    aoii = 0
    sum_aoii = err_slots = sum_delay = n_delay = 0
    stage_sum = n_stages = samples = discards = 0
    dst = 0

    for t in range(len(U)):
        u0, u1, u2, u3, u4 = U[t]
        # source step
        if u0 >= alpha:
            cand = []
            if xhat != x:
                cand.append(xhat)
            if s != x and s != xhat:
                cand.append(s)
            if u1 < len(cand) * inv_m1:
                x = cand[min(int(u1 / inv_m1), len(cand) - 1)]
            else:
                x = fresh
                fresh += 1
        # decoding attempt at the end of a packet
        if phase == TX and sent == nu[r]:
            stage_sum += dst
            n_stages += 1
            if u2 < qt[b][sent]:
                if eps_mode and u3 < epsilon:
                    cand = []
                    if x != s:
                        cand.append(x)
                    if xhat != s and xhat != x:
                        cand.append(xhat)
                    if u4 < len(cand) * inv_m1:
                        xhat = cand[min(int(u4 / inv_m1), len(cand) - 1)]
                    else:
                        xhat = fresh
                        fresh += 1
                else:
                    xhat = s
                ack = True
                if xhat == x:
                    dst = 0
                else:
                    dst += beta
            else:
                ack = False
                dst += beta
            phase = FB
            fb_left = beta
        # feedback reception
        if phase == FB and fb_left == 0:
            if ack:
                sum_delay += t - t_start
                n_delay += 1
                phase = IDLE
            else:
                r += 1
                if x != s or r == R:
                    if x != s:
                        discards += 1
                    phase = IDLE
                else:
                    phase = TX
                    sent = 0
        # zero-tolerance: start a fresh sample whenever the receiver is wrong
        if phase == IDLE and x != xhat:
            s = x
            r = sent = b = 0
            t_start = t
            phase = TX
            samples += 1
        if phase == TX:
            stage_sum += dst
            n_stages += 1
            dst += 1
            sent += 1
            b += 1
        elif phase == FB:
            fb_left -= 1
        if x != xhat:
            aoii += 1
            err_slots += 1
        else:
            aoii = 0
        sum_aoii += aoii
    return sum_aoii, err_slots, sum_delay, n_delay, stage_sum, n_stages, samples, discards

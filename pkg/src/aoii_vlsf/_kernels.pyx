# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: saturated-layer solve, backward sweep, slot simulator."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY

cnp.import_array()

cdef enum:
    IDLE = 0
    TX = 1
    FB = 2


cdef inline double _dmin(double a, double b) nogil:
    return a if a < b else b


def top_layer(double g, double c0, long dmax, const double[:, ::1] pr_restart,
              const double[:, ::1] pr_cont, fixed_nu=None, int max_iter=200):
    cdef Py_ssize_t L = pr_restart.shape[0] - 1
    cdef double ctop = dmax + c0 - g
    cdef cnp.ndarray[double, ndim=1] u_arr = np.zeros(L + 1)
    cdef cnp.ndarray[double, ndim=1] slope_arr = np.zeros(L + 1)
    cdef cnp.ndarray[double, ndim=1] stages_arr = np.zeros(L + 1)
    cdef cnp.ndarray[int, ndim=1] nu_arr = np.zeros(L + 1, dtype=np.int32)
    cdef cnp.ndarray[int, ndim=1] prev_arr = np.zeros(L + 1, dtype=np.int32)
    cdef double[::1] u = u_arr
    cdef double[::1] slope = slope_arr
    cdef double[::1] stages = stages_arr
    cdef int[::1] nu = nu_arr
    cdef int[::1] prev = prev_arr
    cdef int[::1] fixed
    cdef bint has_fixed = fixed_nu is not None
    if has_fixed:
        fixed = np.ascontiguousarray(fixed_nu, dtype=np.int32)
    cdef double x = 0.0, x_new, best, val, rr, rc
    cdef Py_ssize_t b, v, bb, best_v, it
    cdef bint same, first = True
    for it in range(max_iter):
        for b in range(L - 1, -1, -1):
            if has_fixed:
                best_v = fixed[b]
            else:
                best = INFINITY
                best_v = 1
                for v in range(1, L - b + 1):
                    bb = b + v
                    val = (v + 1) * ctop + pr_restart[bb, v] * x + pr_cont[bb, v] * u[bb]
                    if val <= best:
                        best = val
                        best_v = v
            bb = b + best_v
            rr = pr_restart[bb, best_v]
            rc = pr_cont[bb, best_v]
            nu[b] = <int>best_v
            u[b] = (best_v + 1) * ctop + rr * x + rc * u[bb]
            slope[b] = rr + rc * slope[bb]
            stages[b] = (best_v + 1) + rc * stages[bb]
        x_new = (u[0] - slope[0] * x) / (1.0 - slope[0])
        same = not first
        if same:
            for b in range(L + 1):
                if prev[b] != nu[b]:
                    same = False
                    break
        first = False
        for b in range(L + 1):
            prev[b] = nu[b]
        if has_fixed or same or fabs(x_new - x) <= 1e-13 * (fabs(x_new) if fabs(x_new) > 1.0 else 1.0):
            x = x_new
            break
        x = x_new
    cdef double n0 = stages[0] / (1.0 - slope[0])
    for b in range(L - 1, -1, -1):
        v = nu[b]
        bb = b + v
        u[b] = (v + 1) * ctop + pr_restart[bb, v] * x + pr_cont[bb, v] * u[bb]
    u[0] = x
    n_arr = stages_arr + slope_arr * n0
    n_arr[L] = 0.0
    u[L] = 0.0
    return u_arr, n_arr, nu_arr


def sweep(double g, double c0, long beta, long dmax, const double[:, ::1] pr_restart,
          const double[:, ::1] pr_cont, fixed_nu=None):
    cdef Py_ssize_t L = pr_restart.shape[0] - 1
    cdef cnp.ndarray[double, ndim=2] w_arr = np.zeros((dmax + 1, L + 1))
    cdef cnp.ndarray[double, ndim=2] n_arr = np.zeros((dmax + 1, L + 1))
    cdef cnp.ndarray[int, ndim=2] nu_arr = np.zeros((dmax + 1, L + 1), dtype=np.int32)
    cdef bint has_fixed = fixed_nu is not None
    cdef int[:, ::1] fixed
    top_fixed = None
    if has_fixed:
        fixed = np.ascontiguousarray(fixed_nu, dtype=np.int32)
        top_fixed = np.asarray(fixed[dmax])
    u, nn, nt = top_layer(g, c0, dmax, pr_restart, pr_cont, top_fixed)
    w_arr[dmax] = u
    n_arr[dmax] = nn
    nu_arr[dmax] = nt
    if dmax == 0:
        return w_arr, n_arr, nu_arr

    cdef double[:, ::1] w = w_arr
    cdef double[:, ::1] n = n_arr
    cdef int[:, ::1] nu = nu_arr
    cdef cnp.ndarray[double, ndim=1] cp_arr = np.zeros(L + 1)
    cdef double[::1] cp = cp_arr
    cdef Py_ssize_t d, b, v, bb, best_v, j
    cdef long d2
    cdef double acc, val, best, rr, rc, cost

    with nogil:
        for d in range(dmax - 1, -1, -1):
            # cp[v] = sum of the stage costs for v waits plus the feedback stage
            acc = _dmin(<double>d, <double>dmax) + c0 - g
            for j in range(1, L + 1):
                cost = _dmin(<double>(d + j), <double>dmax) + c0 - g
                acc = acc + cost
                cp[j] = acc
            for b in range(L):
                if has_fixed:
                    best_v = fixed[d, b]
                else:
                    best = INFINITY
                    best_v = 1
                    for v in range(1, L - b + 1):
                        bb = b + v
                        d2 = d + v + beta
                        if d2 > dmax:
                            d2 = dmax
                        val = cp[v] + pr_restart[bb, v] * w[d2, 0] + pr_cont[bb, v] * w[d2, bb]
                        if val <= best:
                            best = val
                            best_v = v
                bb = b + best_v
                d2 = d + best_v + beta
                if d2 > dmax:
                    d2 = dmax
                rr = pr_restart[bb, best_v]
                rc = pr_cont[bb, best_v]
                w[d, b] = cp[best_v] + rr * w[d2, 0] + rc * w[d2, bb]
                n[d, b] = (best_v + 1) + rr * n[d2, 0] + rc * n[d2, bb]
                nu[d, b] = <int>best_v
    return w_arr, n_arr, nu_arr


cdef inline long _pick(long a, long c, long exclude, double u, double inv_m1, long *fresh) nogil:
    # uniform jump away from `exclude`; a and c are the tracked labels
    cdef long cands[2]
    cdef int k = 0
    cdef long idx
    if a != exclude:
        cands[k] = a
        k += 1
    if c != exclude and c != a:
        cands[k] = c
        k += 1
    if u < k * inv_m1:
        idx = <long>(u / inv_m1)
        if idx > k - 1:
            idx = k - 1
        return cands[idx]
    fresh[0] += 1
    return fresh[0] - 1


def simulate_run(nu_seq, long beta, const double[:, ::1] q, double alpha, double inv_m1,
                 bint eps_mode, double epsilon, const double[:, ::1] U):
    cdef int[::1] nu = np.ascontiguousarray(nu_seq, dtype=np.int32)
    cdef Py_ssize_t R = nu.shape[0]
    cdef Py_ssize_t T = U.shape[0]
    cdef long x = 0, xhat = 1, s = 0, fresh = 2
    cdef int phase = IDLE
    cdef long r = 0, sent = 0, b = 0, fb_left = 0
    cdef bint ack = False
    cdef long t_start = 0, aoii = 0
    cdef long long sum_aoii = 0, err_slots = 0, sum_delay = 0, n_delay = 0
    cdef long long stage_sum = 0, n_stages = 0, samples = 0, discards = 0
    cdef long long dst = 0
    cdef Py_ssize_t t
    with nogil:
        for t in range(T):
            if U[t, 0] >= alpha:
                x = _pick(xhat, s, x, U[t, 1], inv_m1, &fresh)
            if phase == TX and sent == nu[r]:
                stage_sum += dst
                n_stages += 1
                if U[t, 2] < q[b, sent]:
                    if eps_mode and U[t, 3] < epsilon:
                        xhat = _pick(x, xhat, s, U[t, 4], inv_m1, &fresh)
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
            if phase == IDLE and x != xhat:
                s = x
                r = 0
                sent = 0
                b = 0
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

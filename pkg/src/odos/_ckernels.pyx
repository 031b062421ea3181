# cython: language_level=3
"""Compiled two-state CTMC kernels; same contracts as ``odos._pykernels``."""

import numpy as np

from libc.math cimport exp, expm1, log, INFINITY


cdef inline void _probs(double lam, double mu, double dt,
                        double* p00, double* p01, double* p10, double* p11) noexcept nogil:
    cdef double s = lam + mu
    cdef double ome, e
    if s <= 0.0:
        p00[0] = 1.0
        p01[0] = 0.0
        p10[0] = 0.0
        p11[0] = 1.0
        return
    ome = -expm1(-s * dt)
    e = 1.0 - ome
    p01[0] = lam / s * ome
    p10[0] = mu / s * ome
    p00[0] = (mu + lam * e) / s
    p11[0] = (lam + mu * e) / s


def loglik_transitions(double[::1] lam, double[::1] mu, long[::1] from_state,
                       long[::1] to_state, double[::1] dt):
    cdef Py_ssize_t n = lam.shape[0]
    cdef Py_ssize_t m = dt.shape[0]
    cdef Py_ssize_t i, k
    cdef double p00, p01, p10, p11, p, acc
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            acc = 0.0
            for k in range(m):
                _probs(lam[i], mu[i], dt[k], &p00, &p01, &p10, &p11)
                if from_state[k] == 0:
                    p = p00 if to_state[k] == 0 else p01
                else:
                    p = p10 if to_state[k] == 0 else p11
                if p <= 0.0:
                    acc = -INFINITY
                    break
                acc += log(p)
            o[i] = acc
    return out


def info_transitions(double[::1] lam, double[::1] mu, double[:, ::1] ref_law,
                     double[::1] lead, double[::1] dt):
    cdef Py_ssize_t n = lam.shape[0]
    cdef Py_ssize_t m = dt.shape[0]
    cdef Py_ssize_t i, k
    cdef double l, u, s, d, ome, e, a, b, w0, w1, law0, law1
    cdef double p00, p01, p10, p11, q00, q01, q10, q11
    cdef double d0l, d0u, d1l, d1u, i00, i01, i11
    out = np.zeros((n, 2, 2), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for i in range(n):
            l = lam[i]
            u = mu[i]
            s = l + u
            i00 = 0.0
            i01 = 0.0
            i11 = 0.0
            for k in range(m):
                d = dt[k]
                if d <= 0.0:
                    continue
                _probs(l, u, lead[k], &q00, &q01, &q10, &q11)
                law0 = ref_law[k, 0] * q00 + ref_law[k, 1] * q10
                law1 = ref_law[k, 0] * q01 + ref_law[k, 1] * q11
                ome = -expm1(-s * d)
                e = 1.0 - ome
                a = ome / (s * s)
                b = d * e / s
                _probs(l, u, d, &p00, &p01, &p10, &p11)
                d0l = u * a + l * b
                d0u = -l * a + l * b
                d1l = -u * a + u * b
                d1u = l * a + u * b
                w0 = law0 * (1.0 / p00 + 1.0 / p01)
                w1 = law1 * (1.0 / p10 + 1.0 / p11)
                i00 += w0 * d0l * d0l + w1 * d1l * d1l
                i11 += w0 * d0u * d0u + w1 * d1u * d1u
                i01 += w0 * d0l * d0u + w1 * d1l * d1u
            o[i, 0, 0] = i00
            o[i, 1, 1] = i11
            o[i, 0, 1] = i01
            o[i, 1, 0] = i01
    return out


def simulate_paths(double lam, double mu, long[::1] init_state, long[::1] offsets,
                   double[::1] times, double[::1] expo):
    cdef Py_ssize_t n_units = offsets.shape[0] - 1
    cdef Py_ssize_t n_expo = expo.shape[0]
    cdef Py_ssize_t u, k, lo, hi
    cdef Py_ssize_t pos = 0
    cdef bint exhausted = False
    cdef long state
    cdef double r, nxt, tk
    cdef double rates[2]
    rates[0] = lam
    rates[1] = mu
    states = np.empty(times.shape[0], dtype=np.int64)
    cdef long[::1] st = states
    with nogil:
        for u in range(n_units):
            lo = offsets[u]
            hi = offsets[u + 1]
            if lo == hi:
                continue
            state = init_state[u]
            st[lo] = state
            if pos >= n_expo:
                exhausted = True
                break
            r = rates[state]
            nxt = times[lo] + expo[pos] / r if r > 0.0 else INFINITY
            pos += 1
            for k in range(lo + 1, hi):
                tk = times[k]
                while nxt <= tk:
                    state = 1 - state
                    if pos >= n_expo:
                        exhausted = True
                        break
                    r = rates[state]
                    nxt = nxt + expo[pos] / r if r > 0.0 else INFINITY
                    pos += 1
                if exhausted:
                    break
                st[k] = state
            if exhausted:
                break
    if exhausted:
        return states, -1
    return states, pos

"""Reference implementations of the two-state CTMC kernels (numpy / pure Python).

States are coded 0 and 1 here (state labels 1 and 2 elsewhere).  ``lam`` is
the 0 -> 1 intensity and ``mu`` the 1 -> 0 intensity.
"""

from __future__ import annotations

import math

import numpy as np


def _probs(lam, mu, dt):
    """``p00, p01, p10, p11`` broadcast over the inputs."""
    s = lam + mu
    with np.errstate(divide="ignore", invalid="ignore"):
        one_m_e = -np.expm1(-s * dt)
        e = 1.0 - one_m_e
        p01 = np.where(s > 0, lam / s * one_m_e, 0.0)
        p10 = np.where(s > 0, mu / s * one_m_e, 0.0)
        p00 = np.where(s > 0, (mu + lam * e) / s, 1.0)
        p11 = np.where(s > 0, (lam + mu * e) / s, 1.0)
    return p00, p01, p10, p11


def loglik_transitions(lam, mu, from_state, to_state, dt):
    """Sum over transitions of ``log p[from, to](dt)``, one total per particle."""
    lam = np.asarray(lam, dtype=np.float64)[:, None]
    mu = np.asarray(mu, dtype=np.float64)[:, None]
    if len(dt) == 0:
        return np.zeros(lam.shape[0])
    p00, p01, p10, p11 = _probs(lam, mu, np.asarray(dt, dtype=np.float64)[None, :])
    f = np.asarray(from_state)[None, :]
    t = np.asarray(to_state)[None, :]
    p = np.where(f == 0, np.where(t == 0, p00, p01), np.where(t == 0, p10, p11))
    with np.errstate(divide="ignore"):
        return np.log(p).sum(axis=1)


def info_transitions(lam, mu, ref_law, lead, dt):
    """Expected Fisher information for (lam, mu), one 2x2 matrix per particle.

    Pair ``m`` is an observation at some time followed by one ``dt[m]`` later.
    The earlier state has law ``ref_law[m] @ P(lead[m])``: a reference law
    propagated forward by ``lead[m]``.
    """
    lam = np.asarray(lam, dtype=np.float64)[:, None]
    mu = np.asarray(mu, dtype=np.float64)[:, None]
    out = np.zeros((lam.shape[0], 2, 2))
    dt = np.asarray(dt, dtype=np.float64)
    keep = dt > 0
    if not keep.any():
        return out
    dt = dt[keep][None, :]
    ref = np.asarray(ref_law, dtype=np.float64)[keep]
    lead = np.asarray(lead, dtype=np.float64)[keep][None, :]
    q00, q01, q10, q11 = _probs(lam, mu, lead)
    law0 = ref[None, :, 0] * q00 + ref[None, :, 1] * q10
    law1 = ref[None, :, 0] * q01 + ref[None, :, 1] * q11
    s = lam + mu
    one_m_e = -np.expm1(-s * dt)
    e = 1.0 - one_m_e
    a = one_m_e / (s * s)
    b = dt * e / s
    p00, p01, p10, p11 = _probs(lam, mu, dt)
    # row 0: d p01 / d(lam, mu); row 1: d p10 / d(lam, mu)
    d0 = (mu * a + lam * b, -lam * a + lam * b)
    d1 = (-mu * a + mu * b, lam * a + mu * b)
    w0 = law0 * (1.0 / p00 + 1.0 / p01)
    w1 = law1 * (1.0 / p10 + 1.0 / p11)
    out[:, 0, 0] = (w0 * d0[0] ** 2 + w1 * d1[0] ** 2).sum(axis=1)
    out[:, 1, 1] = (w0 * d0[1] ** 2 + w1 * d1[1] ** 2).sum(axis=1)
    off = (w0 * d0[0] * d0[1] + w1 * d1[0] * d1[1]).sum(axis=1)
    out[:, 0, 1] = off
    out[:, 1, 0] = off
    return out


def simulate_paths(lam, mu, init_state, offsets, times, expo):
    """Exact path sampling read off at the given times.

    Unit ``u`` owns ``times[offsets[u]:offsets[u+1]]`` (sorted) and starts in
    ``init_state[u]`` at its first time.  Holding times are ``expo[k] / rate``
    consumed in order.  Returns ``(states, n_used)``; ``n_used == -1`` means the
    exponential buffer ran out.
    """
    rates = (float(lam), float(mu))
    states = np.empty(len(times), dtype=np.int64)
    pos = 0
    n_expo = len(expo)
    for u in range(len(offsets) - 1):
        lo, hi = int(offsets[u]), int(offsets[u + 1])
        if lo == hi:
            continue
        state = int(init_state[u])
        t = float(times[lo])
        states[lo] = state
        if pos >= n_expo:
            return states, -1
        r = rates[state]
        nxt = t + expo[pos] / r if r > 0 else math.inf
        pos += 1
        for k in range(lo + 1, hi):
            tk = float(times[k])
            while nxt <= tk:
                state = 1 - state
                if pos >= n_expo:
                    return states, -1
                r = rates[state]
                nxt = nxt + expo[pos] / r if r > 0 else math.inf
                pos += 1
            states[k] = state
    return states, pos

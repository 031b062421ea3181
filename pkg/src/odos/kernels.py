"""Backend selection for the CTMC hot loops.

The compiled extension ``odos._ckernels`` is used when it imports; otherwise
the numpy/pure-Python module ``odos._pykernels`` is used.  Setting
``ODOS_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

_ext = None
if os.environ.get("ODOS_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _ext
    except ImportError:
        _ext = None

BACKEND = "cython" if _ext is not None else "python"
_impl = _ext if _ext is not None else _pykernels


def available_backends() -> dict[str, object]:
    out: dict[str, object] = {"python": _pykernels}
    if _ext is not None:
        out["cython"] = _ext
    return out


def _f64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def _i64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.int64)


def loglik_transitions(lam, mu, from_state, to_state, dt, impl=None) -> np.ndarray:
    """Log-likelihood of observed transitions for each ``(lam[i], mu[i])``."""
    impl = impl or _impl
    return impl.loglik_transitions(_f64(np.atleast_1d(lam)), _f64(np.atleast_1d(mu)),
                                   _i64(from_state), _i64(to_state), _f64(dt))


def info_transitions(lam, mu, ref_law, lead, dt, impl=None) -> np.ndarray:
    """Expected information matrices, shape ``(n, 2, 2)``."""
    impl = impl or _impl
    law = np.ascontiguousarray(np.asarray(ref_law, dtype=np.float64).reshape(-1, 2))
    return impl.info_transitions(_f64(np.atleast_1d(lam)), _f64(np.atleast_1d(mu)), law, _f64(lead), _f64(dt))


def simulate_paths(lam: float, mu: float, init_state, offsets, times,
                   rng: np.random.Generator, impl=None) -> np.ndarray:
    """Sample states at ``times`` for each unit; see ``_pykernels.simulate_paths``.

    Exponential variates are drawn here, in blocks, so both backends consume
    the random stream identically.
    """
    impl = impl or _impl
    init_state, offsets, times = _i64(init_state), _i64(offsets), _f64(times)
    n_units = max(len(offsets) - 1, 0)
    span = 0.0
    for u in range(n_units):
        if offsets[u + 1] > offsets[u]:
            span += times[offsets[u + 1] - 1] - times[offsets[u]]
    expected = span * max(lam, mu, 0.0)
    size = int(2 * expected + 4 * np.sqrt(expected + 1) + n_units + 16)
    expo = rng.standard_exponential(size)
    while True:
        states, used = impl.simulate_paths(float(lam), float(mu), init_state, offsets, times, expo)
        if used >= 0:
            return states
        expo = np.concatenate([expo, rng.standard_exponential(len(expo))])

"""Time the compiled and pure-Python CTMC kernels on the same inputs.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from odos import kernels


def workloads(n_theta: int, n_trans: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    lam = rng.gamma(2.0, 0.5, n_theta)
    mu = rng.gamma(2.0, 0.5, n_theta)
    frm = rng.integers(0, 2, n_trans)
    to = rng.integers(0, 2, n_trans)
    dt = rng.uniform(0.1, 2.0, n_trans)
    law = np.tile([0.5, 0.5], (n_trans, 1))
    lead = rng.uniform(0.0, 3.0, n_trans)
    n_units, per_unit = 200, 6
    offsets = np.arange(0, n_units * per_unit + 1, per_unit)
    times = np.tile(np.arange(per_unit) * 0.5, n_units)
    init = rng.integers(0, 2, n_units)

    def loglik(impl):
        return lambda: kernels.loglik_transitions(lam, mu, frm, to, dt, impl=impl)

    def info(impl):
        return lambda: kernels.info_transitions(lam, mu, law, lead, dt, impl=impl)

    def simulate(impl):
        return lambda: kernels.simulate_paths(1.0, 1.0, init, offsets, times, np.random.default_rng(1), impl=impl)

    return {"loglik_transitions": loglik, "info_transitions": info, "simulate_paths": simulate}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n-theta", type=int, default=2000)
    ap.add_argument("--n-trans", type=int, default=100)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    print(f"default backend: {kernels.BACKEND}")
    for name, make in workloads(args.n_theta, args.n_trans).items():
        times = {}
        for bname, impl in backends.items():
            fn = make(impl)
            fn()
            times[bname] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        line = "  ".join(f"{b}={t * 1e3:9.3f} ms" for b, t in times.items())
        if "cython" in times:
            line += f"  speedup={times['python'] / times['cython']:.1f}x"
        print(f"{name:20s} {line}")


if __name__ == "__main__":
    main()

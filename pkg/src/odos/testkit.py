"""Independent reference computations for checking the main modules.

Everything here is deliberately naive (loops, dense grids, matrix
exponentials, finite differences) and shares no numerical code with the
inference, kernel, utility or search modules: only the domain types from
``core`` and the model parameter containers are used.
"""

from __future__ import annotations

import itertools
import math
import numbers
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, stats

from .core import Dataset, MeasurementPlan, StudyFrame, read_dataset_csv
from .errors import SpaceTooLarge
from .models import LinReg, NestedNormalMean, NormalMean, TwoStateCTMC


@dataclass(frozen=True)
class OracleReport:
    name: str
    reference: object
    comparand: object
    tolerance: float
    passed: bool

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: reference={self.reference} " \
               f"got={self.comparand} tol={self.tolerance}"


def compare(name: str, reference, comparand, tolerance: float, relative: bool = False) -> OracleReport:
    ref = np.asarray(reference, dtype=float)
    got = np.asarray(comparand, dtype=float)
    err = np.abs(got - ref)
    if relative:
        err = err / np.maximum(np.abs(ref), 1e-300)
    return OracleReport(name, reference, comparand, tolerance, bool(np.all(err <= tolerance)))


# --------------------------------------------------------------------------
# Shipped data
# --------------------------------------------------------------------------


def ctmc_small_frame() -> StudyFrame:
    return StudyFrame(2, 1, (0.0, 0.5, 1.0))


def ctmc_small_dataset() -> Dataset:
    """Two units observed three times, states coded 1 / 2."""
    text = resources.files("odos").joinpath("data/ctmc_small.csv").read_text()
    return read_dataset_csv(text, ctmc_small_frame())


# --------------------------------------------------------------------------
# Conjugate moments
# --------------------------------------------------------------------------


def conjugate_oracle(model, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance by a separate route.

    Normal mean: running sums in a Python loop.  Regression: the prior is
    appended as pseudo-observations and the stacked problem is solved by
    least squares.
    """
    if isinstance(model, NormalMean):
        n, total = 0, 0.0
        for k, v in zip(data.keys.tolist(), data.values.tolist()):
            n += 1
            total += v
        if n == 0 or model.prior_variance == 0:
            return np.array([model.prior_mean]), np.array([[model.prior_variance]])
        var = 1.0 / (1.0 / model.prior_variance + n / model.noise_variance)
        return np.array([var * (model.prior_mean / model.prior_variance + total / model.noise_variance)]), \
            np.array([[var]])
    if isinstance(model, LinReg):
        rows, ys = [], []
        for k, v in zip(data.keys.tolist(), data.values.tolist()):
            if k[1] == model.outcome_variable:
                rows.append(model.covariates[k[0]])
                ys.append(v)
        s = math.sqrt(model.noise_variance)
        # prior N(b0, B0) as observations R b0 = R beta + e with R' R = B0^{-1}
        R = np.linalg.cholesky(np.linalg.inv(model.prior_cov)).T
        A = np.vstack([np.array(rows).reshape(-1, model.dim) / s, R])
        y = np.concatenate([np.array(ys) / s, R @ model.prior_mean])
        mean = np.linalg.lstsq(A, y, rcond=None)[0]
        Q, Rq = np.linalg.qr(A)
        Rinv = linalg.solve_triangular(Rq, np.eye(model.dim))
        return mean, Rinv @ Rinv.T
    raise TypeError("conjugate oracle covers the normal-mean and regression models")


# --------------------------------------------------------------------------
# Exhaustive subset enumeration
# --------------------------------------------------------------------------


def enumerate_oracle(pool: Sequence[MeasurementPlan], budget: int, objective: Callable,
                     limit: int = 100_000, exact: bool = False) -> tuple[tuple[int, ...], float]:
    """Best subset of at most (or exactly) ``budget`` increments by brute force."""
    n = len(pool)
    sizes = [min(budget, n)] if exact else range(0, min(budget, n) + 1)
    total = sum(math.comb(n, k) for k in sizes)
    if total > limit:
        raise SpaceTooLarge(f"{total} subsets exceed {limit}")
    best, best_val = None, None
    for k in sizes:
        for combo in itertools.combinations(range(n), k):
            entries = set()
            for i in combo:
                entries |= set(pool[i].entries)
            val = objective(MeasurementPlan(pool[0].frame, entries))
            val = float(val) if isinstance(val, numbers.Real) else float(val.mean)
            if best is None or val > best_val or (val == best_val and combo < best):
                best, best_val = combo, val
    return best, best_val


# --------------------------------------------------------------------------
# CTMC via matrix exponentials
# --------------------------------------------------------------------------


def generator(lam, mu) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    Q = np.zeros(lam.shape + (2, 2))
    Q[..., 0, 0] = -lam
    Q[..., 0, 1] = lam
    Q[..., 1, 0] = mu
    Q[..., 1, 1] = -mu
    return Q


def transition_expm(lam, mu, dt) -> np.ndarray:
    """``exp(Q dt)``, batched over the shapes of ``lam`` and ``mu``."""
    return linalg.expm(generator(lam, mu) * float(dt))


def _unit_sequences(model: TwoStateCTMC, data: Dataset):
    seqs: dict[int, list[tuple[float, int]]] = {}
    grid = data.frame.time_grid
    for k, v in zip(data.keys.tolist(), data.values.tolist()):
        if k[1] == model.state_variable:
            seqs.setdefault(k[0], []).append((grid[k[2]], int(v) - 1))
    return {u: sorted(s) for u, s in seqs.items()}


def ctmc_log_likelihood_grid(model: TwoStateCTMC, data: Dataset, lam: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Log-likelihood on arrays of intensities, via ``expm``."""
    out = np.zeros(np.broadcast(lam, mu).shape)
    lam, mu = np.broadcast_arrays(lam, mu)
    cache = {}
    for seq in _unit_sequences(model, data).values():
        out += math.log(model.initial[seq[0][1]])
        for (t0, s0), (t1, s1) in zip(seq, seq[1:]):
            dt = round(t1 - t0, 12)
            if dt not in cache:
                cache[dt] = transition_expm(lam, mu, dt)
            with np.errstate(divide="ignore"):
                out += np.log(cache[dt][..., s0, s1])
    return out


def quadrature_oracle(model: TwoStateCTMC, data: Dataset, resolution: int = 300,
                      upper: float | None = None) -> dict:
    """Posterior moments of ``(lambda, mu)`` by trapezoid quadrature on a grid."""
    if resolution > 500:
        raise ValueError("grid resolution is capped at 500 per axis")
    lp, mp = model.lambda_prior, model.mu_prior
    if upper is None:
        upper = max(stats.gamma.ppf(1 - 1e-9, lp.shape, scale=1 / lp.rate),
                    stats.gamma.ppf(1 - 1e-9, mp.shape, scale=1 / mp.rate))
    g = np.linspace(0.0, upper, resolution)
    L, M = np.meshgrid(g, g, indexing="ij")
    logp = (stats.gamma.logpdf(L, lp.shape, scale=1 / lp.rate) + stats.gamma.logpdf(M, mp.shape, scale=1 / mp.rate))
    finite = np.isfinite(logp)
    logp = np.where(finite, logp, -np.inf)
    if data.n_observed:
        inner = (L > 0) | (M > 0)
        ll = np.full(L.shape, -np.inf)
        ll[inner] = ctmc_log_likelihood_grid(model, data, L[inner], M[inner])
        logp = logp + ll
    dens = np.exp(logp - logp[np.isfinite(logp)].max())
    dens[~np.isfinite(logp)] = 0.0

    def integrate(f):
        return np.trapezoid(np.trapezoid(f, g, axis=1), g)

    z = integrate(dens)
    m_l = integrate(dens * L) / z
    m_m = integrate(dens * M) / z
    v_l = integrate(dens * (L - m_l) ** 2) / z
    v_m = integrate(dens * (M - m_m) ** 2) / z
    return {"mean": np.array([m_l, m_m]), "var": np.array([v_l, v_m]), "normalizer": z}


def _pairs(model: TwoStateCTMC, plan: MeasurementPlan):
    grid = plan.frame.time_grid
    per_unit: dict[int, list[float]] = {}
    for u, j, t in sorted(plan.entries):
        if j == model.state_variable:
            per_unit.setdefault(u, []).append(grid[t])
    for times in per_unit.values():
        for a, b in zip(times, times[1:]):
            yield a - times[0], b - a


def ctmc_fd_information(model: TwoStateCTMC, plan: MeasurementPlan, theta, step: float = 1e-4) -> np.ndarray:
    """Expected information as minus the curvature of the expected log-likelihood.

    ``E_theta0[log p(X | theta)]`` is formed from matrix exponentials and
    differentiated twice by central differences at ``theta0``.
    """
    theta0 = np.asarray(theta, dtype=float)
    pairs = list(_pairs(model, plan))
    pi0 = np.asarray(model.initial, dtype=float)

    def expected_loglik(th):
        total = 0.0
        for lead, dt in pairs:
            law = pi0 @ transition_expm(*theta0, lead)
            P0 = transition_expm(*theta0, dt)
            P = transition_expm(*th, dt)
            for g in range(2):
                for h in range(2):
                    if P0[g, h] > 0:
                        total += law[g] * P0[g, h] * math.log(P[g, h])
        return total

    H = np.zeros((2, 2))
    e = np.eye(2) * step
    f0 = expected_loglik(theta0)
    for i in range(2):
        H[i, i] = (expected_loglik(theta0 + e[i]) - 2 * f0 + expected_loglik(theta0 - e[i])) / step**2
    H[0, 1] = H[1, 0] = (expected_loglik(theta0 + e[0] + e[1]) - expected_loglik(theta0 + e[0] - e[1])
                         - expected_loglik(theta0 - e[0] + e[1]) + expected_loglik(theta0 - e[0] - e[1])) / (4 * step**2)
    return -H


def _info_batch(lam: np.ndarray, mu: np.ndarray, pi0: np.ndarray, n_units: int, n1: int, delta: float,
                h: float = 1e-6) -> np.ndarray:
    """Information of ``n_units`` equidistant paths for many draws, via ``expm``."""
    P = transition_expm(lam, mu, delta)
    dl = (transition_expm(lam + h, mu, delta) - transition_expm(lam - h, mu, delta)) / (2 * h)
    dm = (transition_expm(lam, mu + h, delta) - transition_expm(lam, mu - h, delta)) / (2 * h)
    info = np.zeros(lam.shape + (2, 2))
    law = np.broadcast_to(pi0, lam.shape + (2,)).copy()
    for _ in range(n1 - 1):
        for g in range(2):
            for k in range(2):
                d = np.stack([dl[..., g, k], dm[..., g, k]], axis=-1)
                w = law[..., g] / P[..., g, k]
                info += w[..., None, None] * d[..., :, None] * d[..., None, :]
        law = np.einsum("...g,...gh->...h", law, P)
    return n_units * info


def markov_timing_oracle(model: TwoStateCTMC, budget: int, n1_values: Sequence[int], deltas: Sequence[float],
                         n_draws: int, seed: int) -> dict:
    """Average log det information per grid cell from fresh prior draws; returns the surface and argmax."""
    rng = np.random.default_rng(seed)
    lam = rng.gamma(model.lambda_prior.shape, 1 / model.lambda_prior.rate, n_draws)
    mu = rng.gamma(model.mu_prior.shape, 1 / model.mu_prior.rate, n_draws)
    pi0 = np.asarray(model.initial, dtype=float)
    surface = np.empty((len(n1_values), len(deltas)))
    for a, n1 in enumerate(n1_values):
        for b, d in enumerate(deltas):
            info = _info_batch(lam, mu, pi0, budget // n1, n1, d)
            eig = np.linalg.eigvalsh(0.5 * (info + np.swapaxes(info, -1, -2)))
            top = eig[:, -1]
            singular = (top <= 0) | (eig[:, 0] <= 1e-12 * top)
            vals = np.where(singular, -np.inf, np.log(np.clip(eig, 1e-300, None)).sum(axis=1))
            surface[a, b] = -np.inf if singular.any() else vals.mean()
    i, j = np.unravel_index(int(np.argmax(surface)), surface.shape)
    return {"surface": surface, "argmax": (int(n1_values[i]), float(deltas[j]))}


def stationary_pair_information(lam: float, mu: float) -> np.ndarray:
    """Information of one pair of independent stationary draws (infinite spacing)."""
    s = lam + mu
    v = np.array([mu, -lam])
    return np.outer(v, v) / (s * s * lam * mu)


# --------------------------------------------------------------------------
# Evidence
# --------------------------------------------------------------------------


def naive_log_likelihood(model, theta, data: Dataset) -> float:
    """Observation-by-observation log-likelihood written from the model definitions."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    keys = data.keys.tolist()
    vals = data.values.tolist()
    if isinstance(model, NormalMean):
        return sum(stats.norm.logpdf(v, theta[0], math.sqrt(model.noise_variance)) for v in vals)
    if isinstance(model, LinReg):
        total = 0.0
        for k, v in zip(keys, vals):
            if k[1] == model.outcome_variable:
                total += stats.norm.logpdf(v, float(model.covariates[k[0]] @ theta), math.sqrt(model.noise_variance))
        return total
    if isinstance(model, NestedNormalMean):
        if not vals:
            return 0.0
        units = [k[0] for k in keys]
        n = len(units)
        V = np.eye(n) * model.noise_variance
        h = data.frame.hierarchy
        for lev, om2 in enumerate(model.level_variances, start=1):
            for a in range(n):
                for b in range(n):
                    if h.membership[units[a], lev] == h.membership[units[b], lev]:
                        V[a, b] += om2
        return float(stats.multivariate_normal.logpdf(vals, np.full(n, theta[0]), V))
    if isinstance(model, TwoStateCTMC):
        return float(ctmc_log_likelihood_grid(model, data, np.array(theta[0]), np.array(theta[1])))
    raise TypeError(type(model).__name__)


def evidence_oracle(model, data: Dataset, n_draws: int, seed: int) -> tuple[float, float]:
    """Monte Carlo estimate of ``p(data)`` (mean likelihood over prior draws) and its standard error."""
    rng = np.random.default_rng(seed)
    lik = np.array([math.exp(naive_log_likelihood(model, model.sample_prior(rng), data)) for _ in range(n_draws)])
    return float(lik.mean()), float(lik.std(ddof=1) / math.sqrt(n_draws))

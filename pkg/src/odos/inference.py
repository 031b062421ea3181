"""Posterior computation and information matrices."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Union

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from . import kernels
from .core import Dataset, MeasurementPlan
from .errors import DegenerateWeights, SingularMatrix
from .models import LinReg, ModelSpec, NestedNormalMean, NormalMean, TwoStateCTMC

MIN_PARTICLES = 100
MIN_ESS = 10.0
COND_LIMIT = 1e12


@lru_cache(maxsize=None)
def _hermite_nodes(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return x, w / w.sum()


@lru_cache(maxsize=None)
def _standard_nodes(d: int) -> tuple[np.ndarray, np.ndarray]:
    if d <= 3:
        x, w = _hermite_nodes({1: 64, 2: 24, 3: 12}[d])
        z = np.column_stack([g.ravel() for g in np.meshgrid(*([x] * d), indexing="ij")])
        wz = np.ones(z.shape[0])
        for g in np.meshgrid(*([w] * d), indexing="ij"):
            wz = wz * g.ravel()
    else:
        z = np.random.default_rng(0).standard_normal((4096, d))
        wz = np.full(4096, 1.0 / 4096)
    z.flags.writeable = False
    wz.flags.writeable = False
    return z, wz


def _sqrt_psd(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True, eq=False)
class ExactNormal:
    """Gaussian posterior with closed-form moments."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        c = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if c.shape != (m.size, m.size):
            raise ValueError("mean and covariance disagree in dimension")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", 0.5 * (c + c.T))

    @property
    def dim(self) -> int:
        return self.mean.size

    def functional_moments(self, weights: np.ndarray) -> tuple[float, float]:
        """Mean and variance of ``weights @ theta``."""
        c = np.asarray(weights, dtype=float)
        return float(c @ self.mean), float(c @ self.cov @ c)

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature points and weights for posterior expectations.

        Tensor Gauss-Hermite rules up to three dimensions (exact for
        polynomials of moderate degree); a fixed-seed sample beyond that.
        """
        z, wz = _standard_nodes(self.dim)
        return self.mean + z @ _sqrt_psd(self.cov).T, wz

    def sample(self, rng, size: int | None = None) -> np.ndarray:
        root = _sqrt_psd(self.cov)
        if size is None:
            return self.mean + root @ rng.standard_normal(self.dim)
        return self.mean + rng.standard_normal((size, self.dim)) @ root.T


@dataclass(frozen=True, eq=False)
class Particles:
    """Weighted parameter draws (weights sum to one)."""

    draws: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.draws, dtype=float)
        if d.ndim == 1:
            d = d[:, None]
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if d.shape[0] < 1 or d.shape[0] != w.size:
            raise ValueError("need at least one particle and one weight per particle")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("particle weights must be non-negative and sum to 1")
        object.__setattr__(self, "draws", d)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.draws.shape[1]

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.draws

    @property
    def cov(self) -> np.ndarray:
        r = self.draws - self.mean
        return (self.weights[:, None] * r).T @ r

    def functional_moments(self, weights: np.ndarray) -> tuple[float, float]:
        g = self.draws @ np.asarray(weights, dtype=float)
        m = float(self.weights @ g)
        return m, float(self.weights @ (g - m) ** 2)

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        return self.draws, self.weights

    def sample(self, rng, size: int | None = None) -> np.ndarray:
        idx = rng.choice(self.weights.size, size=size, p=self.weights)
        return self.draws[idx]


Posterior = Union[ExactNormal, Particles]


def expect(posterior: Posterior, fn: Callable[[np.ndarray], np.ndarray]) -> float:
    """Posterior expectation of a function vectorized over ``(n, dim)`` draws."""
    pts, w = posterior.nodes()
    return float(w @ np.broadcast_to(fn(pts), w.shape))


# --------------------------------------------------------------------------
# Conjugate posteriors
# --------------------------------------------------------------------------


def posterior_normal_mean(model: NormalMean, data: Dataset) -> ExactNormal:
    x = model.observations(data)
    n = x.size
    if n == 0 or model.prior_variance == 0:
        return ExactNormal([model.prior_mean], [[model.prior_variance]])
    prec = 1.0 / model.prior_variance + n / model.noise_variance
    var = 1.0 / prec
    mean = var * (model.prior_mean / model.prior_variance + x.sum() / model.noise_variance)
    return ExactNormal([mean], [[var]])


def posterior_linreg(model: LinReg, data: Dataset) -> ExactNormal:
    Ws, y = model.observations(data)
    if y.size == 0:
        return ExactNormal(model.prior_mean, model.prior_cov)
    prior_prec = np.linalg.inv(model.prior_cov)
    prec = prior_prec + Ws.T @ Ws / model.noise_variance
    if np.linalg.cond(prec) > COND_LIMIT:
        raise SingularMatrix("posterior precision is numerically singular")
    cov = np.linalg.inv(prec)
    mean = cov @ (prior_prec @ model.prior_mean + Ws.T @ y / model.noise_variance)
    return ExactNormal(mean, cov)


def posterior_nested(model: NestedNormalMean, data: Dataset) -> ExactNormal:
    x = data.values
    if x.size == 0 or model.prior_variance == 0:
        return ExactNormal([model.prior_mean], [[model.prior_variance]])
    V = model.marginal_cov(data.frame, data.keys[:, 0])
    Vinv_1 = np.linalg.solve(V, np.ones_like(x))
    prec = 1.0 / model.prior_variance + Vinv_1.sum()
    var = 1.0 / prec
    return ExactNormal([var * (model.prior_mean / model.prior_variance + Vinv_1 @ x)], [[var]])


def exact_posterior(model: ModelSpec, data: Dataset) -> ExactNormal | None:
    """Closed-form posterior when the model has one, else ``None``."""
    if isinstance(model, NormalMean):
        return posterior_normal_mean(model, data)
    if isinstance(model, LinReg):
        return posterior_linreg(model, data)
    if isinstance(model, NestedNormalMean):
        return posterior_nested(model, data)
    return None


# --------------------------------------------------------------------------
# Importance sampling
# --------------------------------------------------------------------------


def reweight(draws: np.ndarray, log_lik: np.ndarray) -> Particles:
    """Self-normalized importance weights for prior draws."""
    if not np.isfinite(log_lik).any():
        raise DegenerateWeights(0.0, "every particle has zero likelihood")
    lw = log_lik - logsumexp(log_lik)
    w = np.exp(lw)
    w /= w.sum()
    post = Particles(draws, w)
    if post.ess < MIN_ESS:
        raise DegenerateWeights(post.ess)
    return post


def importance_posterior(
    model: ModelSpec,
    data: Dataset,
    n_particles: int,
    rng: np.random.Generator | None = None,
    prior_draws: np.ndarray | None = None,
) -> Particles:
    """Prior draws weighted by the likelihood of ``data``."""
    if prior_draws is None:
        if n_particles < MIN_PARTICLES:
            raise ValueError(f"n_particles must be >= {MIN_PARTICLES}")
        prior_draws = model.sample_prior(rng, size=n_particles)
    n = prior_draws.shape[0]
    if data.n_observed == 0:
        return Particles(prior_draws, np.full(n, 1.0 / n))
    return reweight(prior_draws, model.log_likelihood_many(prior_draws, data))


def posterior(
    model: ModelSpec,
    data: Dataset,
    method: str = "exact",
    n_particles: int = 10_000,
    rng: np.random.Generator | None = None,
    plan: MeasurementPlan | None = None,
) -> Posterior:
    """Posterior ``p(theta | data)``.

    ``plan`` is accepted for bookkeeping only: missingness by design is
    ignorable, so the result never depends on it.  When given, the observed
    triples must be exactly the plan's entries.
    """
    if plan is not None and data.observed_keys != plan.entries:
        raise ValueError("dataset does not match the measurement plan that generated it")
    if method == "exact":
        post = exact_posterior(model, data)
        if post is not None:
            return post
    elif method != "importance":
        raise ValueError(f"unknown posterior method {method!r}")
    return importance_posterior(model, data, n_particles, rng)


# --------------------------------------------------------------------------
# Information matrices
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InformationMatrix:
    matrix: np.ndarray
    kind: str = "expected"

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        object.__setattr__(self, "matrix", m)

    def __add__(self, other: "InformationMatrix") -> "InformationMatrix":
        return InformationMatrix(self.matrix + other.matrix, "combined")

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def _ctmc_pairs(model: TwoStateCTMC, plan: MeasurementPlan, prior_data: Dataset | None):
    """Reference laws, lead times and lags of consecutive planned observations."""
    grid = np.asarray(plan.frame.time_grid)
    keys = plan.array
    keys = keys[keys[:, 1] == model.state_variable]
    history = model.unit_sequences(prior_data) if prior_data is not None else {}
    refs, leads, dts = [], [], []
    if keys.shape[0]:
        units = keys[:, 0]
        bounds = np.flatnonzero(np.diff(units)) + 1
        for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, len(units)]):
            unit = int(units[lo])
            t = grid[keys[lo:hi, 2]]
            if unit in history:
                h_t, h_s = history[unit]
                ref = np.eye(2)[int(h_s[-1])]
                t = np.r_[grid[h_t[-1]], t]
            else:
                ref = np.asarray(model.initial)
            for a, b in zip(t[:-1], t[1:]):
                refs.append(ref)
                leads.append(a - t[0])
                dts.append(b - a)
    return np.array(refs).reshape(-1, 2), np.array(leads, dtype=float), np.array(dts, dtype=float)


def ctmc_information_many(model: TwoStateCTMC, plan: MeasurementPlan, thetas: np.ndarray,
                          prior_data: Dataset | None = None) -> np.ndarray:
    """Expected information of the plan for many ``(lambda, mu)`` at once."""
    thetas = np.asarray(thetas, dtype=float).reshape(-1, 2)
    refs, leads, dts = _ctmc_pairs(model, plan, prior_data)
    return kernels.info_transitions(thetas[:, 0], thetas[:, 1], refs, leads, dts)


def expected_information(
    model: ModelSpec, plan: MeasurementPlan, theta, prior_data: Dataset | None = None
) -> InformationMatrix:
    """Fisher information of the new data the plan would collect, at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if isinstance(model, NormalMean):
        return InformationMatrix([[len(plan) / model.noise_variance]])
    if isinstance(model, LinReg):
        keys = plan.array
        Ws = model.covariates[keys[keys[:, 1] == model.outcome_variable, 0]]
        return InformationMatrix(Ws.T @ Ws / model.noise_variance)
    if isinstance(model, NestedNormalMean):
        units = plan.array[:, 0]
        if units.size == 0:
            return InformationMatrix([[0.0]])
        V = model.marginal_cov(plan.frame, units)
        return InformationMatrix([[np.linalg.solve(V, np.ones(units.size)).sum()]])
    if isinstance(model, TwoStateCTMC):
        return InformationMatrix(ctmc_information_many(model, plan, theta, prior_data)[0])
    raise TypeError(f"unsupported model {type(model).__name__}")


def _fd_hessian(f: Callable[[np.ndarray], np.ndarray], theta: np.ndarray, rel_step: float) -> np.ndarray:
    """Central-difference Hessian; ``f`` maps an ``(n, d)`` batch to ``(n,)``."""
    d = theta.size
    h = rel_step * (1.0 + np.abs(theta))
    pts = [theta]
    for i in range(d):
        for si in (1, -1):
            pts.append(theta + si * h[i] * np.eye(d)[i])
    for i in range(d):
        for j in range(i + 1, d):
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                pts.append(theta + si * h[i] * np.eye(d)[i] + sj * h[j] * np.eye(d)[j])
    vals = f(np.array(pts))
    f0 = vals[0]
    H = np.zeros((d, d))
    k = 1
    for i in range(d):
        H[i, i] = (vals[k] - 2.0 * f0 + vals[k + 1]) / h[i] ** 2
        k += 2
    for i in range(d):
        for j in range(i + 1, d):
            pp, pm, mp, mm = vals[k:k + 4]
            H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4.0 * h[i] * h[j])
            k += 4
    return H


def observed_information(model: ModelSpec, data: Dataset, theta) -> InformationMatrix:
    """Negative Hessian of the log-likelihood at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if isinstance(model, NormalMean):
        return InformationMatrix([[model.observations(data).size / model.noise_variance]], "observed")
    if isinstance(model, LinReg):
        Ws, _ = model.observations(data)
        return InformationMatrix(Ws.T @ Ws / model.noise_variance, "observed")
    if isinstance(model, NestedNormalMean):
        if data.n_observed == 0:
            return InformationMatrix([[0.0]], "observed")
        V = model.marginal_cov(data.frame, data.keys[:, 0])
        return InformationMatrix([[np.linalg.solve(V, np.ones(data.n_observed)).sum()]], "observed")
    if isinstance(model, TwoStateCTMC):
        if model.transitions(data).dt.size == 0:
            return InformationMatrix(np.zeros((2, 2)), "observed")
        H = _fd_hessian(lambda th: model.log_likelihood_many(th, data), theta, 1e-5)
        return InformationMatrix(-H, "observed")
    raise TypeError(f"unsupported model {type(model).__name__}")


# --------------------------------------------------------------------------
# Point estimates
# --------------------------------------------------------------------------


def point_estimate(model: ModelSpec, data: Dataset, ridge: float = 1e-8, start=None) -> np.ndarray:
    """Maximum likelihood with a small ridge penalty ``ridge * |theta|^2 / 2``."""
    if isinstance(model, NormalMean):
        x = model.observations(data)
        return np.array([(x.sum() / model.noise_variance) / (x.size / model.noise_variance + ridge)])
    if isinstance(model, LinReg):
        Ws, y = model.observations(data)
        A = Ws.T @ Ws / model.noise_variance + ridge * np.eye(model.dim)
        return np.linalg.solve(A, Ws.T @ y / model.noise_variance)
    if isinstance(model, NestedNormalMean):
        x = data.values
        if x.size == 0:
            return np.array([0.0])
        V = model.marginal_cov(data.frame, data.keys[:, 0])
        a = np.linalg.solve(V, np.ones_like(x))
        return np.array([(a @ x) / (a.sum() + ridge)])
    if isinstance(model, TwoStateCTMC):
        x0 = np.array([model.lambda_prior.mean, model.mu_prior.mean]) if start is None else np.asarray(start, float)

        def neg(th):
            v = -model.log_likelihood_many(th[None, :], data)[0] + 0.5 * ridge * th @ th
            return v if np.isfinite(v) else 1e300

        res = optimize.minimize(neg, x0, method="L-BFGS-B", bounds=[(1e-10, None)] * 2)
        return res.x
    raise TypeError(f"unsupported model {type(model).__name__}")


def is_psd(matrix, tol: float = 1e-8) -> bool:
    """Symmetric with minimum eigenvalue >= -tol * trace."""
    m = np.asarray(matrix, dtype=float)
    if not np.allclose(m, m.T, atol=1e-10):
        return False
    scale = max(abs(np.trace(m)), 1e-300)
    return bool(np.linalg.eigvalsh(m).min() >= -tol * scale)

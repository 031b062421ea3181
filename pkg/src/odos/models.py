"""Probabilistic models p(x | theta), p(theta) used by the design machinery.

Parameter draws are plain 1-D numpy arrays; each model declares ``dim`` and
``param_names``.  Batched evaluation takes an ``(n, dim)`` array.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import kernels
from .core import Dataset, MeasurementPlan, StudyFrame
from .errors import DegenerateChain, DegenerateChainWarning, MissingHierarchy, NonFiniteValue

LOG_2PI = math.log(2.0 * math.pi)


def _check_finite(values: np.ndarray) -> None:
    if values.size and not np.isfinite(values).all():
        raise NonFiniteValue("observed value is NaN or infinite")


@dataclass(frozen=True)
class NormalMean:
    """Independent ``x ~ N(theta, noise_variance)`` for every observed triple."""

    noise_variance: float = 1.0
    prior_mean: float = 0.0
    prior_variance: float = 1.0

    dim = 1
    param_names = ("theta",)

    def __post_init__(self):
        if self.noise_variance <= 0:
            raise ValueError("noise variance must be positive")
        if self.prior_variance < 0:
            raise ValueError("prior variance must be non-negative")

    def sample_prior(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        sd = math.sqrt(self.prior_variance)
        if size is None:
            return np.array([self.prior_mean + sd * rng.standard_normal()])
        return (self.prior_mean + sd * rng.standard_normal(size))[:, None]

    def observations(self, data: Dataset) -> np.ndarray:
        return data.values

    def simulate_data(self, theta, plan: MeasurementPlan, rng, prior_data: Dataset | None = None) -> Dataset:
        keys = plan.array
        values = theta[0] + math.sqrt(self.noise_variance) * rng.standard_normal(len(keys))
        return Dataset(plan.frame, keys, values, validate=False)

    def log_likelihood_many(self, thetas: np.ndarray, data: Dataset) -> np.ndarray:
        x = self.observations(data)
        _check_finite(x)
        thetas = np.asarray(thetas, dtype=float).reshape(-1, 1)
        n = x.size
        if n == 0:
            return np.zeros(thetas.shape[0])
        s2 = self.noise_variance
        sx, sxx = x.sum(), (x * x).sum()
        t = thetas[:, 0]
        ss = sxx - 2.0 * t * sx + n * t * t
        return -0.5 * n * (LOG_2PI + math.log(s2)) - 0.5 * ss / s2


@dataclass(frozen=True, eq=False)
class LinReg:
    """Outcome ``y_i = w_i' beta + e``; covariates ``W`` are fixed and known.

    Only triples on ``outcome_variable`` enter the likelihood, so a dataset
    may also carry the first-stage covariate variables.
    """

    noise_variance: float
    prior_mean: np.ndarray
    prior_cov: np.ndarray
    covariates: np.ndarray
    outcome_variable: int = 0

    param_names = ()

    def __post_init__(self):
        b0 = np.asarray(self.prior_mean, dtype=float).reshape(-1)
        B0 = np.asarray(self.prior_cov, dtype=float)
        W = np.asarray(self.covariates, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        q = b0.size
        if B0.shape != (q, q) or W.shape[1] != q:
            raise ValueError("prior mean, prior covariance and covariates disagree in dimension")
        if self.noise_variance <= 0:
            raise ValueError("noise variance must be positive")
        if not np.allclose(B0, B0.T, atol=1e-12):
            raise ValueError("prior covariance must be symmetric")
        try:
            np.linalg.cholesky(B0)
        except np.linalg.LinAlgError:
            raise ValueError("prior covariance must be positive definite") from None
        for name, arr in (("prior_mean", b0), ("prior_cov", B0), ("covariates", W)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "param_names", tuple(f"beta{k}" for k in range(q)))

    @property
    def dim(self) -> int:
        return self.prior_mean.size

    @property
    def n_units(self) -> int:
        return self.covariates.shape[0]

    def sample_prior(self, rng, size: int | None = None) -> np.ndarray:
        L = np.linalg.cholesky(self.prior_cov)
        if size is None:
            return self.prior_mean + L @ rng.standard_normal(self.dim)
        return self.prior_mean + rng.standard_normal((size, self.dim)) @ L.T

    def observations(self, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
        """Design rows and outcomes for every observed outcome triple."""
        keys, y = data.for_variable(self.outcome_variable)
        return self.covariates[keys[:, 0]], y

    def simulate_data(self, theta, plan: MeasurementPlan, rng, prior_data: Dataset | None = None) -> Dataset:
        keys = plan.array
        if keys.size and (keys[:, 1] != self.outcome_variable).any():
            raise ValueError("linear-regression plans may only select the outcome variable")
        mean = self.covariates[keys[:, 0]] @ np.asarray(theta, dtype=float)
        y = mean + math.sqrt(self.noise_variance) * rng.standard_normal(len(keys))
        return Dataset(plan.frame, keys, y, validate=False)

    def log_likelihood_many(self, thetas: np.ndarray, data: Dataset) -> np.ndarray:
        Ws, y = self.observations(data)
        _check_finite(y)
        thetas = np.asarray(thetas, dtype=float).reshape(-1, self.dim)
        if y.size == 0:
            return np.zeros(thetas.shape[0])
        r = y[None, :] - thetas @ Ws.T
        s2 = self.noise_variance
        return -0.5 * y.size * (LOG_2PI + math.log(s2)) - 0.5 * (r * r).sum(axis=1) / s2


def covariates_from_dataset(
    data: Dataset, variables: Sequence[int], time_index: int = 0, intercept: bool = True
) -> np.ndarray:
    """Build the covariate matrix ``W`` from first-stage measurements.

    Every unit in the frame must have all ``variables`` observed at
    ``time_index``.
    """
    N = data.frame.n_units
    cols = [np.ones(N)] if intercept else []
    for j in variables:
        col = np.full(N, np.nan)
        keys, vals = data.for_variable(j)
        sel = keys[:, 2] == time_index
        col[keys[sel, 0]] = vals[sel]
        if np.isnan(col).any():
            missing = int(np.flatnonzero(np.isnan(col))[0])
            raise ValueError(f"covariate {j} is missing for unit {missing}")
        cols.append(col)
    return np.column_stack(cols)


@dataclass(frozen=True)
class GammaPrior:
    shape: float
    rate: float

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("Gamma shape and rate must be positive")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def variance(self) -> float:
        return self.shape / self.rate**2


def ctmc_transition_matrix(lam: float, mu: float, dt: float, strict: bool = False) -> np.ndarray:
    """Transition matrix ``P(dt)`` of the two-state chain (rows: from-state 1, 2).

    ``lam`` is the 1 -> 2 intensity, ``mu`` the 2 -> 1 intensity.
    """
    if lam < 0 or mu < 0 or dt < 0:
        raise ValueError("intensities and elapsed time must be non-negative")
    if dt == 0:
        return np.eye(2)
    s = lam + mu
    if s == 0:
        if strict:
            raise DegenerateChain("lambda = mu = 0 with positive elapsed time")
        warnings.warn("lambda = mu = 0: returning the identity", DegenerateChainWarning, stacklevel=2)
        return np.eye(2)
    one_m_e = -math.expm1(-s * dt)
    e = 1.0 - one_m_e
    return np.array([[(mu + lam * e) / s, lam / s * one_m_e], [mu / s * one_m_e, (lam + mu * e) / s]])


@dataclass(frozen=True)
class CTMCTransitions:
    """A dataset reduced to what the two-state likelihood needs (states coded 0/1)."""

    first_states: np.ndarray
    from_state: np.ndarray
    to_state: np.ndarray
    dt: np.ndarray


@dataclass(frozen=True)
class TwoStateCTMC:
    """Two-state continuous-time Markov chain observed at grid times.

    The observed variable holds state labels 1 and 2.  ``initial`` is the
    distribution of a unit's state at its first observation.
    """

    lambda_prior: GammaPrior = field(default_factory=lambda: GammaPrior(2.0, 2.0))
    mu_prior: GammaPrior = field(default_factory=lambda: GammaPrior(2.0, 2.0))
    initial: tuple[float, float] = (0.5, 0.5)
    state_variable: int = 0

    dim = 2
    param_names = ("lambda", "mu")

    def __post_init__(self):
        init = tuple(float(p) for p in self.initial)
        if len(init) != 2 or min(init) < 0 or abs(sum(init) - 1.0) > 1e-12:
            raise ValueError("initial distribution must be a probability vector of length 2")
        object.__setattr__(self, "initial", init)

    def sample_prior(self, rng, size: int | None = None) -> np.ndarray:
        n = 1 if size is None else size
        lam = rng.gamma(self.lambda_prior.shape, 1.0 / self.lambda_prior.rate, size=n)
        mu = rng.gamma(self.mu_prior.shape, 1.0 / self.mu_prior.rate, size=n)
        out = np.column_stack([lam, mu])
        return out[0] if size is None else out

    def unit_sequences(self, data: Dataset) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """Per unit: sorted time indices and 0/1-coded states."""
        keys, vals = data.for_variable(self.state_variable)
        _check_finite(vals)
        if vals.size and not np.isin(vals, (1.0, 2.0)).all():
            raise ValueError("CTMC observations must be state labels 1 or 2")
        out = {}
        if keys.shape[0] == 0:
            return out
        # keys are sorted by (unit, variable, time) already
        units = keys[:, 0]
        bounds = np.flatnonzero(np.diff(units)) + 1
        for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, len(units)]):
            out[int(units[lo])] = (keys[lo:hi, 2], vals[lo:hi].astype(np.int64) - 1)
        return out

    def transitions(self, data: Dataset) -> CTMCTransitions:
        grid = np.asarray(data.frame.time_grid)
        first, frm, to, dts = [], [], [], []
        for _, (tidx, states) in self.unit_sequences(data).items():
            first.append(states[0])
            frm.append(states[:-1])
            to.append(states[1:])
            dts.append(np.diff(grid[tidx]))
        if not first:
            z = np.zeros(0, dtype=np.int64)
            return CTMCTransitions(z, z, z, np.zeros(0))
        return CTMCTransitions(
            np.array(first, dtype=np.int64),
            np.concatenate(frm).astype(np.int64),
            np.concatenate(to).astype(np.int64),
            np.concatenate(dts).astype(float),
        )

    def log_likelihood_many(self, thetas: np.ndarray, data: Dataset) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float).reshape(-1, 2)
        tr = self.transitions(data)
        if tr.first_states.size == 0:
            return np.zeros(thetas.shape[0])
        with np.errstate(divide="ignore"):
            init = float(np.log(np.asarray(self.initial)[tr.first_states]).sum())
        return init + kernels.loglik_transitions(thetas[:, 0], thetas[:, 1], tr.from_state, tr.to_state, tr.dt)

    def simulate_data(self, theta, plan: MeasurementPlan, rng, prior_data: Dataset | None = None) -> Dataset:
        """Sample exact paths and read them at the plan's times.

        A unit with earlier observations in ``prior_data`` continues from its
        last observed state; otherwise its state at its first planned time is
        drawn from ``initial``.
        """
        keys = plan.array
        if keys.size and (keys[:, 1] != self.state_variable).any():
            raise ValueError("CTMC plans may only select the state variable")
        if keys.shape[0] == 0:
            return Dataset(plan.frame)
        grid = np.asarray(plan.frame.time_grid)
        history = self.unit_sequences(prior_data) if prior_data is not None else {}
        units = keys[:, 0]
        bounds = np.flatnonzero(np.diff(units)) + 1
        starts, ends = np.r_[0, bounds], np.r_[bounds, len(units)]
        draws = rng.random(len(starts))
        init, offsets, times, keep = [], [0], [], []
        for u_draw, lo, hi in zip(draws, starts, ends):
            unit = int(units[lo])
            tidx = keys[lo:hi, 2]
            if unit in history:
                h_t, h_s = history[unit]
                if tidx[0] <= h_t[-1]:
                    raise ValueError(f"unit {unit}: planned times must follow its prior observations")
                init.append(int(h_s[-1]))
                times.append(grid[h_t[-1]])
                keep.append(False)
            else:
                init.append(0 if u_draw < self.initial[0] else 1)
            times.extend(grid[tidx])
            keep.extend([True] * (hi - lo))
            offsets.append(len(times))
        states = kernels.simulate_paths(theta[0], theta[1], init, offsets, times, rng)
        values = states[np.asarray(keep, dtype=bool)].astype(float) + 1.0
        return Dataset(plan.frame, keys, values, validate=False)


@dataclass(frozen=True)
class NestedNormalMean:
    """Normal mean with known random effects on hierarchy levels 2..K.

    ``x_i = theta + sum_k b_{k, cluster(i, k)} + e_i`` with
    ``b_k ~ N(0, level_variances[k-2])`` and ``e ~ N(0, noise_variance)``.
    The hierarchy is read from the data's frame.
    """

    noise_variance: float = 1.0
    prior_mean: float = 0.0
    prior_variance: float = 1.0
    level_variances: tuple[float, ...] = ()

    dim = 1
    param_names = ("theta",)

    def __post_init__(self):
        object.__setattr__(self, "level_variances", tuple(float(v) for v in self.level_variances))
        if self.noise_variance <= 0 or self.prior_variance < 0 or any(v < 0 for v in self.level_variances):
            raise ValueError("variances must be non-negative (noise variance positive)")

    def sample_prior(self, rng, size: int | None = None) -> np.ndarray:
        return NormalMean(self.noise_variance, self.prior_mean, self.prior_variance).sample_prior(rng, size)

    def _hierarchy(self, frame: StudyFrame):
        h = frame.hierarchy
        if h is None:
            if self.level_variances:
                raise MissingHierarchy("nested model needs a frame with a hierarchy")
            return None
        if h.n_levels - 1 != len(self.level_variances):
            raise ValueError(f"{len(self.level_variances)} level variances for a {h.n_levels}-level hierarchy")
        return h

    def marginal_cov(self, frame: StudyFrame, units: np.ndarray) -> np.ndarray:
        V = self.noise_variance * np.eye(units.size)
        h = self._hierarchy(frame)
        if h is not None:
            for k, om2 in enumerate(self.level_variances, start=1):
                m = h.membership[units, k]
                V += om2 * (m[:, None] == m[None, :])
        return V

    def simulate_data(self, theta, plan: MeasurementPlan, rng, prior_data: Dataset | None = None) -> Dataset:
        keys = plan.array
        n = keys.shape[0]
        h = self._hierarchy(plan.frame)
        x = theta[0] + math.sqrt(self.noise_variance) * rng.standard_normal(n)
        if h is not None:
            for k, om2 in enumerate(self.level_variances, start=1):
                effects = math.sqrt(om2) * rng.standard_normal(int(h.membership[:, k].max()) + 1)
                x += effects[h.membership[keys[:, 0], k]]
        return Dataset(plan.frame, keys, x, validate=False)

    def log_likelihood_many(self, thetas: np.ndarray, data: Dataset) -> np.ndarray:
        x = data.values
        _check_finite(x)
        t = np.asarray(thetas, dtype=float).reshape(-1)
        if x.size == 0:
            return np.zeros(t.size)
        V = self.marginal_cov(data.frame, data.keys[:, 0])
        L = np.linalg.cholesky(V)
        a = np.linalg.solve(L, x)
        b = np.linalg.solve(L, np.ones_like(x))
        logdet = 2.0 * np.log(np.diag(L)).sum()
        quad = a @ a - 2.0 * t * (a @ b) + t * t * (b @ b)
        return -0.5 * (x.size * LOG_2PI + logdet) - 0.5 * quad


ModelSpec = Union[NormalMean, LinReg, TwoStateCTMC, NestedNormalMean]


def sample_prior(model: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    return model.sample_prior(rng)


def simulate_data(model: ModelSpec, theta, plan: MeasurementPlan, rng, prior_data: Dataset | None = None) -> Dataset:
    return model.simulate_data(np.asarray(theta, dtype=float), plan, rng, prior_data)


def log_likelihood(model: ModelSpec, theta, data: Dataset) -> float:
    """``log p(observed values | theta)``; missing triples contribute nothing."""
    return float(model.log_likelihood_many(np.asarray(theta, dtype=float)[None, :], data)[0])

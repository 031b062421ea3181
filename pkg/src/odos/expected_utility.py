"""Monte Carlo estimates of expected utility and expected cost."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .core import (
    CostModel,
    Dataset,
    Design,
    MeasurementPlan,
    design_support,
    deterministic_plan,
    is_deterministic,
    plan_cost,
    sample_plan,
)
from .errors import SupportTooLarge
from .inference import (
    Posterior,
    ctmc_information_many,
    exact_posterior,
    expected_information,
    importance_posterior,
    observed_information,
    point_estimate,
    reweight,
)
from .models import ModelSpec, TwoStateCTMC
from .utility import (
    INFORMATION_UTILITIES,
    NegPosteriorVariance,
    information_utility,
    point_mass,
    posterior_utility,
    target_vector,
)

# stream tags, so that streams for different purposes never overlap
TAG_DRAW = 1
TAG_PARTICLES = 2
TAG_PLANS = 3
TAG_PLAN_SEED = 4


def child_rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))


def derived_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, path)]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class MCConfig:
    outer_draws: int = 200
    seed: int = 0
    posterior_method: str = "exact"
    n_particles: int = 2000
    plan_samples: int = 200
    workers: int | None = None
    support_limit: int = 1000

    def __post_init__(self):
        if self.outer_draws < 1 or self.plan_samples < 1:
            raise ValueError("outer_draws and plan_samples must be at least 1")
        if self.posterior_method not in ("exact", "importance"):
            raise ValueError(f"unknown posterior method {self.posterior_method!r}")

    def with_seed(self, seed: int) -> "MCConfig":
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class UtilityEstimate:
    mean: float
    std_error: float
    n_samples: int

    def __post_init__(self):
        if not self.std_error >= 0:
            raise ValueError("standard error must be non-negative")

    def to_json(self) -> dict:
        return asdict(self)


def n_workers(cfg: MCConfig) -> int:
    if cfg.workers is not None:
        return max(1, int(cfg.workers))
    env = os.environ.get("ODOS_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def parallel_map(fn: Callable, items: Sequence, workers: int) -> list:
    """Ordered map; results come back in input order whatever the worker count."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def summarize(values: Sequence[float]) -> UtilityEstimate:
    """Mean and standard error of i.i.d. draws."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n == 0:
        raise ValueError("no samples to summarize")
    if np.isneginf(v).any():
        return UtilityEstimate(-math.inf, 0.0, n)
    if np.ptp(v) == 0.0:
        return UtilityEstimate(float(v[0]), 0.0, n)
    se = float(np.std(v, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return UtilityEstimate(math.fsum(v) / n, se, n)


# --------------------------------------------------------------------------
# Current posterior and its updates
# --------------------------------------------------------------------------


class _Updater:
    """Posterior given ``prior_data`` and its update with new data.

    Without a closed form, one set of prior particles (fixed by the seed) is
    reused for every outer draw so that plans are compared on common
    numbers.
    """

    def __init__(self, model: ModelSpec, prior_data: Dataset, cfg: MCConfig):
        self.model = model
        self.prior_data = prior_data
        self.exact = cfg.posterior_method == "exact" and exact_posterior(model, prior_data) is not None
        if self.exact:
            self.current = exact_posterior(model, prior_data)
            self.particles = None
        else:
            self.particles = model.sample_prior(child_rng(cfg.seed, TAG_PARTICLES), size=cfg.n_particles)
            self.current = importance_posterior(model, prior_data, cfg.n_particles, prior_draws=self.particles)

    def draw(self, rng) -> np.ndarray:
        if not self.exact and self.prior_data.n_observed == 0:
            return self.model.sample_prior(rng)
        return self.current.sample(rng)

    def update(self, new: Dataset) -> Posterior:
        if new.n_observed == 0:
            return self.current
        data = self.prior_data.merge(new)
        if self.exact:
            return exact_posterior(self.model, data)
        return reweight(self.particles, self.model.log_likelihood_many(self.particles, data))


def current_posterior(model: ModelSpec, prior_data: Dataset, cfg: MCConfig) -> Posterior:
    """Posterior given the data in hand, as used for the outer draws."""
    return _Updater(model, prior_data, cfg).current


def _empty(plan: MeasurementPlan, prior_data: Dataset | None) -> Dataset:
    return prior_data if prior_data is not None else Dataset.empty(plan.frame)


def outer_posteriors(plan: MeasurementPlan, model: ModelSpec, prior_data: Dataset | None,
                     cfg: MCConfig) -> tuple[Posterior, list[Posterior]]:
    """Current posterior and one updated posterior per outer draw.

    Draw ``i`` uses the stream ``(seed, TAG_DRAW, i)`` for both the parameter
    draw and the simulated data, so every plan sees the same schedule.
    """
    prior_data = _empty(plan, prior_data)
    up = _Updater(model, prior_data, cfg)

    def one(i: int) -> Posterior:
        rng = child_rng(cfg.seed, TAG_DRAW, i)
        theta = up.draw(rng)
        return up.update(model.simulate_data(theta, plan, rng, prior_data))

    return up.current, parallel_map(one, range(cfg.outer_draws), n_workers(cfg))


def _outer_thetas(model, prior_data: Dataset, cfg: MCConfig) -> np.ndarray:
    up = _Updater(model, prior_data, cfg)
    return np.array([up.draw(child_rng(cfg.seed, TAG_DRAW, i)) for i in range(cfg.outer_draws)])


def information_values(plan: MeasurementPlan, model: ModelSpec, utility, prior_data: Dataset | None,
                       cfg: MCConfig) -> np.ndarray:
    """Information utility at each outer draw of the parameter (no simulation needed)."""
    prior_data = _empty(plan, prior_data)
    thetas = _outer_thetas(model, prior_data, cfg)
    if isinstance(model, TwoStateCTMC):
        new = ctmc_information_many(model, plan, thetas, prior_data)
    else:
        new = [expected_information(model, plan, t, prior_data).matrix for t in thetas]

    def one(i: int) -> float:
        obs = observed_information(model, prior_data, thetas[i]).matrix
        return information_utility(utility, new[i], obs)

    return np.array(parallel_map(one, range(len(thetas)), n_workers(cfg)))


# --------------------------------------------------------------------------
# Expected utility
# --------------------------------------------------------------------------


def utility_draws(plan: MeasurementPlan, model: ModelSpec, utility, prior_data: Dataset | None = None,
                  cfg: MCConfig | None = None) -> np.ndarray:
    """Utility at each outer draw; draw ``i`` uses the same stream for every plan."""
    cfg = cfg or MCConfig()
    if isinstance(utility, INFORMATION_UTILITIES):
        return information_values(plan, model, utility, prior_data, cfg)
    if len(plan) == 0:
        # nothing new is observed: the current posterior is the answer, exactly
        current = current_posterior(model, _empty(plan, prior_data), cfg)
        return np.full(cfg.outer_draws, posterior_utility(current, utility))
    _, posts = outer_posteriors(plan, model, prior_data, cfg)
    return np.array([posterior_utility(p, utility) for p in posts])


def expected_utility_plan(plan: MeasurementPlan, model: ModelSpec, utility, prior_data: Dataset | None = None,
                          cfg: MCConfig | None = None) -> UtilityEstimate:
    """Expected utility of a deterministic plan given the data already in hand."""
    return summarize(utility_draws(plan, model, utility, prior_data, cfg))


def _support_or_none(design: Design, limit: int):
    try:
        return design_support(design, limit)
    except SupportTooLarge:
        return None


def sampled_plans(design: Design, cfg: MCConfig) -> list[MeasurementPlan]:
    rng = child_rng(cfg.seed, TAG_PLANS)
    return [sample_plan(design, rng) for _ in range(cfg.plan_samples)]


def expected_utility_design(design: Design, model: ModelSpec, utility, prior_data: Dataset | None = None,
                            cfg: MCConfig | None = None, force_sampling: bool = False) -> UtilityEstimate:
    """Expected utility of a possibly random design.

    An enumerable support is averaged exactly, every plan on the same seed
    schedule, so the standard error comes from the per-draw weighted
    combination across plans.  Otherwise ``cfg.plan_samples`` plans are drawn, each evaluated
    on its own schedule, and the standard error is the spread of the
    per-plan estimates (which covers both the plan and the inner stage).
    """
    cfg = cfg or MCConfig()
    if is_deterministic(design):
        return expected_utility_plan(deterministic_plan(design), model, utility, prior_data, cfg)
    support = None if force_sampling else _support_or_none(design, cfg.support_limit)
    if support is not None:
        draws = [(utility_draws(p, model, utility, prior_data, cfg), w) for p, w in support]
        if any(np.any(d == -math.inf) for d, _ in draws):
            return UtilityEstimate(-math.inf, 0.0, cfg.outer_draws * len(draws))
        s = summarize(sum(w * d for d, w in draws))
        return UtilityEstimate(s.mean, s.std_error, cfg.outer_draws * len(draws))
    plans = sampled_plans(design, cfg)
    inner = replace(cfg, workers=1)
    ests = parallel_map(
        lambda j: expected_utility_plan(plans[j], model, utility, prior_data,
                                        inner.with_seed(derived_seed(cfg.seed, TAG_PLAN_SEED, j))),
        range(len(plans)), n_workers(cfg))
    s = summarize([e.mean for e in ests])
    return UtilityEstimate(s.mean, s.std_error, sum(e.n_samples for e in ests))


def expected_cost(design: Design, cost: CostModel, prior_data: Dataset | None = None,
                  cfg: MCConfig | None = None) -> UtilityEstimate:
    """Design-weighted plan cost; exact whenever the support can be listed."""
    cfg = cfg or MCConfig()
    support = _support_or_none(design, cfg.support_limit)
    if support is not None:
        return UtilityEstimate(math.fsum(w * plan_cost(p, cost) for p, w in support), 0.0, len(support))
    return summarize([plan_cost(p, cost) for p in sampled_plans(design, cfg)])


# --------------------------------------------------------------------------
# Point-estimate variant
# --------------------------------------------------------------------------


def _plugin_value(model, utility, plan, prior_data: Dataset, merged: Dataset, theta_hat) -> float:
    if isinstance(utility, INFORMATION_UTILITIES):
        new = expected_information(model, plan, theta_hat, prior_data).matrix
        obs = observed_information(model, prior_data, theta_hat).matrix
        return information_utility(utility, new, obs)
    if isinstance(utility, NegPosteriorVariance):
        # asymptotic variance of the target at the estimate
        info = observed_information(model, merged, theta_hat).matrix
        c = target_vector(utility.target, info.shape[0])
        try:
            if np.linalg.cond(info) > 1e12:
                return -math.inf
            return -float(c @ np.linalg.solve(info, c))
        except np.linalg.LinAlgError:
            return -math.inf
    return posterior_utility(point_mass(theta_hat), utility)


def frequentist_expected_utility(plan: MeasurementPlan, model: ModelSpec, utility, prior_data: Dataset | None,
                                 theta_hat, cfg: MCConfig | None = None) -> UtilityEstimate:
    """Expected utility when only a point estimate of the parameters is carried.

    New data are simulated at ``theta_hat``; the parameters are re-estimated
    by (lightly ridged) maximum likelihood and the utility is evaluated at
    that estimate, treated as a degenerate posterior for decisions.
    """
    cfg = cfg or MCConfig()
    prior_data = _empty(plan, prior_data)
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))

    def one(i: int) -> float:
        rng = child_rng(cfg.seed, TAG_DRAW, i)
        merged = prior_data.merge(model.simulate_data(theta_hat, plan, rng, prior_data))
        est = point_estimate(model, merged, start=theta_hat)
        return _plugin_value(model, utility, plan, prior_data, merged, est)

    return summarize(parallel_map(one, range(cfg.outer_draws), n_workers(cfg)))


"""Run configuration: strict JSON schema and conversion to domain objects."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .core import (
    Dataset,
    Deterministic,
    Hierarchical,
    Hierarchy,
    MeasurementPlan,
    PerMeasurement,
    SimpleRandomSample,
    StudyFrame,
    SumCost,
    WeightedPlans,
    read_dataset_csv,
)
from .errors import ParseError, ValidationError
from .expected_utility import MCConfig
from .models import GammaPrior, LinReg, NestedNormalMean, NormalMean, TwoStateCTMC
from .utility import (
    AOptimality,
    ConstantUtility,
    DecisionQuadratic,
    DecisionTable,
    DOptimality,
    FiniteDecisions,
    NegPosteriorVariance,
)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# --------------------------------------------------------------------------
# Blocks
# --------------------------------------------------------------------------


class HierarchyBlock(_Strict):
    branching: Optional[list[int]] = None
    membership: Optional[list[list[int]]] = None

    @model_validator(mode="after")
    def _one(self):
        if (self.branching is None) == (self.membership is None):
            raise ValueError("give exactly one of branching / membership")
        return self


class FrameBlock(_Strict):
    n_units: int = Field(ge=1)
    n_variables: int = Field(default=1, ge=1)
    time_grid: list[float] = Field(default_factory=lambda: [0.0])
    hierarchy: Optional[HierarchyBlock] = None


class GammaBlock(_Strict):
    shape: float = Field(gt=0)
    rate: float = Field(gt=0)


class NormalMeanBlock(_Strict):
    type: Literal["normal_mean"]
    noise_variance: float = Field(default=1.0, gt=0)
    prior_mean: float = 0.0
    prior_variance: float = Field(default=1.0, ge=0)


class LinRegBlock(_Strict):
    type: Literal["linreg"]
    noise_variance: float = Field(default=1.0, gt=0)
    prior_mean: list[float]
    prior_cov: list[list[float]]
    covariates: list[list[float]]
    outcome_variable: int = Field(default=0, ge=0)


class CTMCBlock(_Strict):
    type: Literal["ctmc"]
    lambda_prior: GammaBlock = GammaBlock(shape=2.0, rate=2.0)
    mu_prior: GammaBlock = GammaBlock(shape=2.0, rate=2.0)
    initial: list[float] = Field(default_factory=lambda: [0.5, 0.5])
    state_variable: int = Field(default=0, ge=0)


class NestedBlock(_Strict):
    type: Literal["nested_normal_mean"]
    noise_variance: float = Field(default=1.0, gt=0)
    prior_mean: float = 0.0
    prior_variance: float = Field(default=1.0, ge=0)
    level_variances: list[float] = Field(default_factory=list)


ModelBlock = Annotated[Union[NormalMeanBlock, LinRegBlock, CTMCBlock, NestedBlock], Field(discriminator="type")]


class NegVarBlock(_Strict):
    type: Literal["neg_posterior_variance"]
    target: Union[int, list[float]] = 0


class DOptBlock(_Strict):
    type: Literal["d_optimality"]


class AOptBlock(_Strict):
    type: Literal["a_optimality"]


class QuadraticBlock(_Strict):
    type: Literal["decision_quadratic"]
    target: Union[int, list[float]] = 0


class DecisionEntry(_Strict):
    label: str
    value: str


class TableBlock(_Strict):
    type: Literal["decision_table"]
    decisions: list[DecisionEntry] = Field(min_length=1)


class ConstantBlock(_Strict):
    type: Literal["constant"]
    value: float


UtilityBlock = Annotated[
    Union[NegVarBlock, DOptBlock, AOptBlock, QuadraticBlock, TableBlock, ConstantBlock], Field(discriminator="type")
]


class PerMeasurementBlock(_Strict):
    type: Literal["per_measurement"]
    cost: float = Field(ge=0)


class HierarchicalCostBlock(_Strict):
    type: Literal["hierarchical"]
    level_costs: list[float] = Field(min_length=1)


class SumCostBlock(_Strict):
    type: Literal["sum"]
    parts: list[Union[PerMeasurementBlock, HierarchicalCostBlock]] = Field(min_length=1)


CostBlock = Annotated[Union[PerMeasurementBlock, HierarchicalCostBlock, SumCostBlock], Field(discriminator="type")]

Triple = tuple[int, int, int]


class DeterministicBlock(_Strict):
    type: Literal["deterministic"]
    plan: list[Triple] = Field(default_factory=list)


class SRSBlock(_Strict):
    type: Literal["srs"]
    sample_size: int = Field(ge=0)
    variable: int = 0
    time_index: int = 0


class WeightedEntry(_Strict):
    plan: list[Triple]
    probability: float = Field(gt=0)


class WeightedBlock(_Strict):
    type: Literal["weighted"]
    plans: list[WeightedEntry] = Field(min_length=1)


DesignBlock = Annotated[Union[DeterministicBlock, SRSBlock, WeightedBlock], Field(discriminator="type")]


class SearchBlock(_Strict):
    """Search and scenario settings; each command reads the fields it needs."""

    strategy: Literal["exhaustive", "greedy", "greedy+exchange", "design-search"] = "greedy+exchange"
    budget_n: Optional[int] = Field(default=None, ge=0)
    budget_cost: Optional[float] = Field(default=None, ge=0)
    variable: int = 0
    time_index: int = 0
    best_improvement: bool = False
    targets: Optional[list[list[float]]] = None
    # sample size
    target_variance: Optional[float] = None
    n_max: Optional[int] = Field(default=None, ge=0)
    # hierarchical sizing
    branching: Optional[list[int]] = None
    level_costs: Optional[list[float]] = None
    # subsample selection / re-measurement
    n1: Optional[int] = Field(default=None, ge=0)
    strategies: Optional[list[str]] = None
    rounds: Optional[int] = Field(default=None, ge=1)
    round_strategy: Literal["greedy", "exchange", "exhaustive"] = "greedy"
    allow_revisit: bool = True
    # markov timing
    n1_values: Optional[list[int]] = None
    deltas: Optional[list[float]] = None


class MCBlock(_Strict):
    outer_draws: int = Field(default=200, ge=1)
    posterior_method: Literal["exact", "importance"] = "exact"
    n_particles: int = Field(default=2000, ge=100)
    plan_samples: int = Field(default=200, ge=1)
    support_limit: int = Field(default=1000, ge=1)


class ObservationBlock(_Strict):
    unit: int
    variable: int = 0
    time_index: int = 0
    value: Optional[float] = None


class PriorDataBlock(_Strict):
    csv: Optional[str] = None
    observations: Optional[list[ObservationBlock]] = None

    @model_validator(mode="after")
    def _one(self):
        if (self.csv is None) == (self.observations is None):
            raise ValueError("give exactly one of csv / observations")
        return self


class VoiBlock(_Strict):
    curve: str = "v"


class RunConfig(_Strict):
    seed: int = Field(ge=0, lt=2**64)
    output: str = "odos"
    frame: Optional[FrameBlock] = None
    model: ModelBlock
    utility: Optional[UtilityBlock] = None
    cost: Optional[CostBlock] = None
    design: Optional[DesignBlock] = None
    search: Optional[SearchBlock] = None
    mc: MCBlock = MCBlock()
    prior_data: Optional[PriorDataBlock] = None
    voi: Optional[VoiBlock] = None

    @model_validator(mode="after")
    def _invariants(self):
        if (self.design is None) == (self.search is None):
            raise ValueError("exactly one of design / search must be present")
        if self.design is not None and self.frame is None:
            raise ValueError("a design block needs a frame block")
        if self.frame is not None:
            _check_indices(self)
        return self


def _check_triple(frame: FrameBlock, t, where: str) -> None:
    bounds = (frame.n_units, frame.n_variables, len(frame.time_grid))
    for name, x, b in zip(("unit", "variable", "time_index"), t, bounds):
        if not 0 <= x < b:
            raise ValueError(f"{where}: {name} index {x} out of range [0, {b})")


def _check_indices(cfg: RunConfig) -> None:
    f = cfg.frame
    d = cfg.design
    if isinstance(d, DeterministicBlock):
        for t in d.plan:
            _check_triple(f, t, "design.plan")
    elif isinstance(d, WeightedBlock):
        for k, e in enumerate(d.plans):
            for t in e.plan:
                _check_triple(f, t, f"design.plans[{k}].plan")
    elif isinstance(d, SRSBlock):
        if d.sample_size > f.n_units:
            raise ValueError(f"design.sample_size {d.sample_size} exceeds n_units {f.n_units}")
        _check_triple(f, (0, d.variable, d.time_index), "design")
    if cfg.prior_data is not None and cfg.prior_data.observations is not None:
        for k, o in enumerate(cfg.prior_data.observations):
            _check_triple(f, (o.unit, o.variable, o.time_index), f"prior_data.observations[{k}]")
    if isinstance(cfg.model, LinRegBlock) and len(cfg.model.covariates) != f.n_units:
        raise ValueError(f"model.covariates has {len(cfg.model.covariates)} rows, frame has {f.n_units} units")


# --------------------------------------------------------------------------
# Parsing and emission
# --------------------------------------------------------------------------


def _format_errors(exc: pydantic.ValidationError) -> str:
    parts = []
    for e in exc.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON run configuration."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ParseError("configuration must be a JSON object")
    try:
        return RunConfig.model_validate(raw)
    except pydantic.ValidationError as exc:
        raise ValidationError(_format_errors(exc)) from None


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def config_dict(cfg: RunConfig) -> dict:
    return cfg.model_dump(mode="json")


def emit_config(cfg: RunConfig) -> str:
    return json.dumps(config_dict(cfg), indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# Domain objects
# --------------------------------------------------------------------------


def build_frame(cfg: RunConfig) -> StudyFrame:
    if cfg.frame is None:
        raise ValidationError("frame: block required for this command")
    f = cfg.frame
    h = None
    if f.hierarchy is not None:
        try:
            h = (Hierarchy.nested(f.hierarchy.branching) if f.hierarchy.branching is not None
                 else Hierarchy(np.asarray(f.hierarchy.membership)))
        except ValueError as exc:
            raise ValidationError(f"frame.hierarchy: {exc}") from None
    try:
        return StudyFrame(f.n_units, f.n_variables, tuple(f.time_grid), h)
    except ValueError as exc:
        raise ValidationError(f"frame: {exc}") from None


def build_model(cfg: RunConfig):
    m = cfg.model
    try:
        if isinstance(m, NormalMeanBlock):
            return NormalMean(m.noise_variance, m.prior_mean, m.prior_variance)
        if isinstance(m, LinRegBlock):
            return LinReg(m.noise_variance, np.array(m.prior_mean), np.array(m.prior_cov), np.array(m.covariates),
                          m.outcome_variable)
        if isinstance(m, CTMCBlock):
            return TwoStateCTMC(GammaPrior(m.lambda_prior.shape, m.lambda_prior.rate),
                                GammaPrior(m.mu_prior.shape, m.mu_prior.rate), tuple(m.initial), m.state_variable)
        return NestedNormalMean(m.noise_variance, m.prior_mean, m.prior_variance, tuple(m.level_variances))
    except ValueError as exc:
        raise ValidationError(f"model: {exc}") from None


def build_utility(cfg: RunConfig, default=None):
    u = cfg.utility
    if u is None:
        if default is None:
            raise ValidationError("utility: block required for this command")
        return default
    target = getattr(u, "target", 0)
    target = tuple(target) if isinstance(target, list) else target
    if isinstance(u, NegVarBlock):
        return NegPosteriorVariance(target)
    if isinstance(u, QuadraticBlock):
        return DecisionQuadratic(target)
    if isinstance(u, DOptBlock):
        return DOptimality()
    if isinstance(u, AOptBlock):
        return AOptimality()
    if isinstance(u, ConstantBlock):
        return ConstantUtility(u.value)
    try:
        return DecisionTable(FiniteDecisions(tuple(d.label for d in u.decisions), tuple(d.value for d in u.decisions)))
    except ValueError as exc:
        raise ValidationError(f"utility.decisions: {exc}") from None


def _cost(block):
    if isinstance(block, PerMeasurementBlock):
        return PerMeasurement(block.cost)
    if isinstance(block, HierarchicalCostBlock):
        return Hierarchical(tuple(block.level_costs))
    return SumCost(tuple(_cost(p) for p in block.parts))


def build_cost(cfg: RunConfig):
    return None if cfg.cost is None else _cost(cfg.cost)


def build_design(cfg: RunConfig, frame: StudyFrame):
    d = cfg.design
    try:
        if isinstance(d, DeterministicBlock):
            return Deterministic(MeasurementPlan(frame, d.plan))
        if isinstance(d, SRSBlock):
            return SimpleRandomSample(frame, d.sample_size, d.variable, d.time_index)
        return WeightedPlans(tuple((MeasurementPlan(frame, e.plan), e.probability) for e in d.plans))
    except ValueError as exc:
        raise ValidationError(f"design: {exc}") from None


def build_prior_data(cfg: RunConfig, frame: StudyFrame, base: Path | None = None) -> Dataset:
    p = cfg.prior_data
    if p is None:
        return Dataset.empty(frame)
    try:
        if p.csv is not None:
            path = Path(p.csv)
            if base is not None and not path.is_absolute():
                path = base / path
            return read_dataset_csv(path, frame)
        mapping = {(o.unit, o.variable, o.time_index): o.value for o in p.observations}
        return Dataset.from_mapping(frame, mapping)
    except ValueError as exc:
        raise ValidationError(f"prior_data: {exc}") from None


def build_mc(cfg: RunConfig, seed: int | None = None, workers: int | None = None) -> MCConfig:
    m = cfg.mc
    return MCConfig(m.outer_draws, cfg.seed if seed is None else seed, m.posterior_method, m.n_particles,
                    m.plan_samples, workers, m.support_limit)

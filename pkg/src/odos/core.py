"""Study frames, measurement plans, designs, datasets and cost models.

Indices are zero-based throughout: units ``0..N-1``, variables ``0..J-1`` and
time indices ``0..M`` into the frame's time grid.  A measurement plan is the
set of ``(unit, variable, time_index)`` triples that will be observed.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence, Union

import numpy as np

from .errors import MissingHierarchy, SupportTooLarge

Triple = tuple[int, int, int]

DEFAULT_SUPPORT_LIMIT = 10**6


class _Missing:
    """Marker for a value that was not observed."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NA"

    def __bool__(self) -> bool:
        return False

    def __reduce__(self):
        return (_Missing, ())


MISSING = _Missing()


# --------------------------------------------------------------------------
# Frame and hierarchy
# --------------------------------------------------------------------------


class Hierarchy:
    """Cluster membership of units on levels ``k = 1..K``.

    ``membership[i, k-1]`` is the cluster index of unit ``i`` on level ``k``.
    Level 1 is the unit level, so its column is ``0..N-1``.
    """

    def __init__(self, membership: np.ndarray | Sequence[Sequence[int]]):
        m = np.array(membership, dtype=np.int64)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise ValueError("membership must be an (N, K) integer array")
        if not np.array_equal(m[:, 0], np.arange(m.shape[0])):
            raise ValueError("level 1 clusters must be the units themselves")
        if (m < 0).any():
            raise ValueError("cluster indices must be non-negative")
        self.membership = m
        self.membership.flags.writeable = False

    @classmethod
    def nested(cls, branching: Sequence[int]) -> "Hierarchy":
        """Balanced nesting, top level first.

        ``nested([2, 5])`` gives 2 clusters of 5 units each;
        ``nested([2, 3, 4])`` gives 2 top clusters x 3 sub-clusters x 4 units.
        """
        branching = [int(b) for b in branching]
        if not branching or min(branching) < 1:
            raise ValueError("branching factors must be positive")
        n_units = int(np.prod(branching))
        K = len(branching)
        cols = []
        # level k (1-based) groups units in blocks of prod(branching[K-k+1:]) ... bottom-up
        for k in range(1, K + 1):
            block = int(np.prod(branching[K - k + 1:])) if k > 1 else 1
            cols.append(np.arange(n_units) // block)
        return cls(np.column_stack(cols))

    @property
    def n_units(self) -> int:
        return self.membership.shape[0]

    @property
    def n_levels(self) -> int:
        return self.membership.shape[1]

    @property
    def clusters_per_level(self) -> tuple[int, ...]:
        return tuple(int(np.unique(self.membership[:, k]).size) for k in range(self.n_levels))

    def cluster_of(self, unit: int, level: int) -> int:
        """Cluster of ``unit`` on 1-based ``level``."""
        return int(self.membership[unit, level - 1])

    def units_in(self, level: int, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.membership[:, level - 1] == cluster)

    def indicator(self, unit: int, level: int, cluster: int) -> int:
        return int(self.membership[unit, level - 1] == cluster)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Hierarchy) and np.array_equal(self.membership, other.membership)

    def __hash__(self) -> int:
        return hash(self.membership.tobytes())

    def __repr__(self) -> str:
        return f"Hierarchy(n_units={self.n_units}, clusters_per_level={self.clusters_per_level})"


@dataclass(frozen=True, eq=False)
class StudyFrame:
    """Population size, variables, time grid and optional hierarchy.

    ``admissible`` optionally restricts, per ``(unit, variable)`` pair, which
    time indices may be measured; pairs absent from the mapping are
    unrestricted.
    """

    n_units: int
    n_variables: int = 1
    time_grid: tuple[float, ...] = (0.0,)
    hierarchy: Hierarchy | None = None
    admissible: Mapping[tuple[int, int], frozenset[int]] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_units < 1:
            raise ValueError("n_units must be >= 1")
        if self.n_variables < 1:
            raise ValueError("n_variables must be >= 1")
        grid = tuple(float(t) for t in self.time_grid)
        if not grid:
            raise ValueError("time grid must be non-empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("time grid must be strictly increasing")
        object.__setattr__(self, "time_grid", grid)
        if self.hierarchy is not None and self.hierarchy.n_units != self.n_units:
            raise ValueError("hierarchy size does not match n_units")

    @property
    def n_times(self) -> int:
        return len(self.time_grid)

    def check_triple(self, triple: Triple) -> None:
        i, j, t = triple
        if not (0 <= i < self.n_units):
            raise ValueError(f"unit index {i} out of range [0, {self.n_units})")
        if not (0 <= j < self.n_variables):
            raise ValueError(f"variable index {j} out of range [0, {self.n_variables})")
        if not (0 <= t < self.n_times):
            raise ValueError(f"time index {t} out of range [0, {self.n_times})")
        if self.admissible is not None:
            allowed = self.admissible.get((i, j))
            if allowed is not None and t not in allowed:
                raise ValueError(f"time index {t} not admissible for unit {i}, variable {j}")

    def all_triples(self) -> list[Triple]:
        out = []
        for i in range(self.n_units):
            for j in range(self.n_variables):
                for t in range(self.n_times):
                    allowed = None if self.admissible is None else self.admissible.get((i, j))
                    if allowed is None or t in allowed:
                        out.append((i, j, t))
        return out


# --------------------------------------------------------------------------
# Measurement plans
# --------------------------------------------------------------------------


class MeasurementPlan:
    """Immutable set of ``(unit, variable, time_index)`` triples on a frame."""

    def __init__(self, frame: StudyFrame, entries: Iterable[Sequence[int]] = ()):
        triples = []
        for e in entries:
            tr = (int(e[0]), int(e[1]), int(e[2]))
            frame.check_triple(tr)
            triples.append(tr)
        self.frame = frame
        self.entries = frozenset(triples)

    @classmethod
    def empty(cls, frame: StudyFrame) -> "MeasurementPlan":
        return cls(frame, ())

    @classmethod
    def for_units(
        cls, frame: StudyFrame, units: Iterable[int], variable: int = 0, time_index: int = 0
    ) -> "MeasurementPlan":
        return cls(frame, ((int(u), variable, time_index) for u in units))

    @classmethod
    def full(cls, frame: StudyFrame) -> "MeasurementPlan":
        return cls(frame, frame.all_triples())

    @cached_property
    def array(self) -> np.ndarray:
        """Entries as a sorted ``(n, 3)`` integer array."""
        if not self.entries:
            return np.zeros((0, 3), dtype=np.int64)
        arr = np.array(sorted(self.entries), dtype=np.int64)
        arr.flags.writeable = False
        return arr

    @cached_property
    def units(self) -> tuple[int, ...]:
        return tuple(sorted({e[0] for e in self.entries}))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Triple]:
        return iter(sorted(self.entries))

    def __contains__(self, item) -> bool:
        return tuple(item) in self.entries

    def __eq__(self, other: object) -> bool:
        return isinstance(other, MeasurementPlan) and self.entries == other.entries

    def __hash__(self) -> int:
        return hash(self.entries)

    def __or__(self, other: "MeasurementPlan") -> "MeasurementPlan":
        return self._with(self.entries | other.entries)

    def __and__(self, other: "MeasurementPlan") -> "MeasurementPlan":
        return self._with(self.entries & other.entries)

    def __sub__(self, other: "MeasurementPlan") -> "MeasurementPlan":
        return self._with(self.entries - other.entries)

    def isdisjoint(self, other: "MeasurementPlan") -> bool:
        return self.entries.isdisjoint(other.entries)

    def _with(self, entries: frozenset) -> "MeasurementPlan":
        new = MeasurementPlan.__new__(MeasurementPlan)
        new.frame = self.frame
        new.entries = frozenset(entries)
        return new

    def __repr__(self) -> str:
        shown = sorted(self.entries)
        if len(shown) > 6:
            return f"MeasurementPlan({shown[:6]} ... {len(shown)} entries)"
        return f"MeasurementPlan({shown})"


def plan_cardinality(plan: MeasurementPlan) -> int:
    return len(plan)


# --------------------------------------------------------------------------
# Designs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Deterministic:
    plan: MeasurementPlan


@dataclass(frozen=True)
class SimpleRandomSample:
    """Uniform ``sample_size``-subset of units, one variable, one time index."""

    frame: StudyFrame
    sample_size: int
    variable: int = 0
    time_index: int = 0

    def __post_init__(self):
        if not (0 <= self.sample_size <= self.frame.n_units):
            raise ValueError(f"sample size must lie in [0, {self.frame.n_units}]")
        self.frame.check_triple((0, self.variable, self.time_index))

    def plan_for(self, units: Iterable[int]) -> MeasurementPlan:
        return MeasurementPlan.for_units(self.frame, units, self.variable, self.time_index)


@dataclass(frozen=True)
class WeightedPlans:
    plans: tuple[tuple[MeasurementPlan, float], ...]

    def __post_init__(self):
        plans = tuple((p, float(w)) for p, w in self.plans)
        if not plans:
            raise ValueError("weighted design needs at least one plan")
        if any(w <= 0 for _, w in plans):
            raise ValueError("plan probabilities must be strictly positive")
        total = math.fsum(w for _, w in plans)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"plan probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "plans", plans)


Design = Union[Deterministic, SimpleRandomSample, WeightedPlans]


def null_design(frame: StudyFrame) -> Deterministic:
    """The design that collects no new data."""
    return Deterministic(MeasurementPlan.empty(frame))


def is_deterministic(design: Design) -> bool:
    if isinstance(design, Deterministic):
        return True
    if isinstance(design, SimpleRandomSample):
        return math.comb(design.frame.n_units, design.sample_size) == 1
    return len(design.plans) == 1


def deterministic_plan(design: Design) -> MeasurementPlan:
    """The single plan of a design that has only one possible outcome."""
    if not is_deterministic(design):
        raise ValueError("design has more than one possible plan")
    return design_support(design)[0][0]


def support_size(design: Design) -> int:
    if isinstance(design, Deterministic):
        return 1
    if isinstance(design, SimpleRandomSample):
        return math.comb(design.frame.n_units, design.sample_size)
    return len(design.plans)


def design_support(
    design: Design, limit: int = DEFAULT_SUPPORT_LIMIT
) -> list[tuple[MeasurementPlan, float]]:
    """All plans the design can realize, with their probabilities."""
    if isinstance(design, Deterministic):
        return [(design.plan, 1.0)]
    if isinstance(design, WeightedPlans):
        return list(design.plans)
    size = support_size(design)
    if size > limit:
        raise SupportTooLarge(f"support has {size} plans (limit {limit}); sample plans instead")
    p = 1.0 / size
    return [
        (design.plan_for(units), p)
        for units in itertools.combinations(range(design.frame.n_units), design.sample_size)
    ]


def sample_plan(design: Design, rng: np.random.Generator) -> MeasurementPlan:
    if isinstance(design, Deterministic):
        return design.plan
    if isinstance(design, SimpleRandomSample):
        units = rng.choice(design.frame.n_units, size=design.sample_size, replace=False)
        return design.plan_for(np.sort(units))
    probs = np.array([w for _, w in design.plans])
    k = rng.choice(len(design.plans), p=probs / probs.sum())
    return design.plans[int(k)][0]


# --------------------------------------------------------------------------
# Datasets
# --------------------------------------------------------------------------


class Dataset:
    """Observed values on a frame; every other triple is ``MISSING``.

    Observed entries are held as parallel arrays sorted by
    ``(unit, variable, time_index)``.  Triples explicitly read as ``NA`` are
    remembered in ``explicit_missing`` but carry no value.
    """

    def __init__(
        self,
        frame: StudyFrame,
        keys: np.ndarray | Sequence[Sequence[int]] = (),
        values: np.ndarray | Sequence[float] = (),
        explicit_missing: Iterable[Triple] = (),
        *,
        validate: bool = True,
    ):
        k = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        v = np.asarray(values, dtype=np.float64).reshape(-1)
        if k.shape[0] != v.shape[0]:
            raise ValueError("keys and values differ in length")
        if k.shape[0] > 1:
            order = np.lexsort((k[:, 2], k[:, 1], k[:, 0]))
            k, v = k[order], v[order]
            if validate and (np.diff(k, axis=0) == 0).all(axis=1).any():
                raise ValueError("duplicate observation triple in dataset")
        if validate and k.shape[0]:
            for bound, col, name in (
                (frame.n_units, 0, "unit"),
                (frame.n_variables, 1, "variable"),
                (frame.n_times, 2, "time"),
            ):
                bad = (k[:, col] < 0) | (k[:, col] >= bound)
                if bad.any():
                    raise ValueError(f"{name} index {int(k[bad][0, col])} out of range")
        k.flags.writeable = False
        v.flags.writeable = False
        self.frame = frame
        self.keys = k
        self.values = v
        self.explicit_missing = frozenset(tuple(int(x) for x in t) for t in explicit_missing)

    @classmethod
    def empty(cls, frame: StudyFrame) -> "Dataset":
        return cls(frame)

    @classmethod
    def from_mapping(cls, frame: StudyFrame, mapping: Mapping[Triple, object]) -> "Dataset":
        keys, values, missing = [], [], []
        for key, val in mapping.items():
            if val is MISSING or val is None:
                missing.append(tuple(key))
            else:
                keys.append(key)
                values.append(float(val))
        return cls(frame, keys, values, missing)

    @property
    def n_observed(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.n_observed

    @cached_property
    def observed_keys(self) -> frozenset[Triple]:
        return frozenset(tuple(int(x) for x in row) for row in self.keys)

    def __getitem__(self, key: Sequence[int]):
        tr = tuple(int(x) for x in key)
        idx = self._index.get(tr)
        return MISSING if idx is None else float(self.values[idx])

    @cached_property
    def _index(self) -> dict[Triple, int]:
        return {tuple(int(x) for x in row): n for n, row in enumerate(self.keys)}

    def to_mapping(self) -> dict[Triple, object]:
        out: dict[Triple, object] = {tr: MISSING for tr in self.explicit_missing}
        for row, val in zip(self.keys, self.values):
            out[tuple(int(x) for x in row)] = float(val)
        return out

    def merge(self, other: "Dataset") -> "Dataset":
        """Union of two datasets with disjoint observed triples."""
        if other.n_observed == 0:
            return self
        if self.n_observed == 0:
            return other
        return Dataset(
            self.frame,
            np.vstack([self.keys, other.keys]),
            np.concatenate([self.values, other.values]),
            self.explicit_missing | other.explicit_missing,
        )

    def for_variable(self, variable: int) -> tuple[np.ndarray, np.ndarray]:
        """``(keys, values)`` restricted to one variable."""
        mask = self.keys[:, 1] == variable
        return self.keys[mask], self.values[mask]

    def subset_units(self, units: Iterable[int]) -> "Dataset":
        mask = np.isin(self.keys[:, 0], np.fromiter(units, dtype=np.int64))
        return Dataset(self.frame, self.keys[mask], self.values[mask], validate=False)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Dataset)
            and np.array_equal(self.keys, other.keys)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    def __repr__(self) -> str:
        return f"Dataset(n_observed={self.n_observed}, frame_units={self.frame.n_units})"


# --------------------------------------------------------------------------
# Costs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PerMeasurement:
    cost: float

    def __post_init__(self):
        if self.cost < 0:
            raise ValueError("unit costs must be non-negative")


@dataclass(frozen=True)
class Hierarchical:
    """Cost ``c_k`` for each activated cluster on level ``k`` (index 0 is level 1)."""

    level_costs: tuple[float, ...]

    def __post_init__(self):
        costs = tuple(float(c) for c in self.level_costs)
        if not costs or min(costs) < 0:
            raise ValueError("unit costs must be non-negative")
        object.__setattr__(self, "level_costs", costs)


@dataclass(frozen=True)
class SumCost:
    parts: tuple["CostModel", ...]


CostModel = Union[PerMeasurement, Hierarchical, SumCost]


def activated_clusters(plan: MeasurementPlan, hierarchy: Hierarchy) -> tuple[int, ...]:
    """Number of clusters ``N(k)`` with at least one selected unit, per level."""
    units = np.array(plan.units, dtype=np.int64)
    if units.size == 0:
        return (0,) * hierarchy.n_levels
    return tuple(int(np.unique(hierarchy.membership[units, k]).size) for k in range(hierarchy.n_levels))


def plan_cost(plan: MeasurementPlan, cost: CostModel) -> float:
    if isinstance(cost, PerMeasurement):
        return cost.cost * len(plan)
    if isinstance(cost, SumCost):
        return math.fsum(plan_cost(plan, c) for c in cost.parts)
    hierarchy = plan.frame.hierarchy
    if hierarchy is None:
        raise MissingHierarchy("hierarchical cost needs a frame with a hierarchy")
    if len(cost.level_costs) != hierarchy.n_levels:
        raise ValueError(
            f"{len(cost.level_costs)} level costs given for a {hierarchy.n_levels}-level hierarchy"
        )
    counts = activated_clusters(plan, hierarchy)
    return math.fsum(c * n for c, n in zip(cost.level_costs, counts))


# --------------------------------------------------------------------------
# CSV interchange
# --------------------------------------------------------------------------

DATASET_HEADER = ["unit", "variable", "time_index", "value"]
PLAN_HEADER = ["unit", "variable", "time_index"]


def _open_text(source) -> io.TextIOBase:
    if isinstance(source, (str, Path)) and not (isinstance(source, str) and "\n" in source):
        return open(source, newline="")
    return io.StringIO(source)


def read_dataset_csv(source, frame: StudyFrame) -> Dataset:
    """Read ``unit,variable,time_index,value`` rows; ``NA`` marks a missing value."""
    with _open_text(source) as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header != DATASET_HEADER:
            raise ValueError(f"expected header {','.join(DATASET_HEADER)}, got {','.join(header)}")
        keys, values, missing = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ValueError(f"line {lineno}: expected 4 fields")
            key = (int(row[0]), int(row[1]), int(row[2]))
            frame.check_triple(key)
            token = row[3].strip()
            if token == "NA":
                missing.append(key)
            else:
                keys.append(key)
                values.append(float(token))
    return Dataset(frame, keys, values, missing)


def write_dataset_csv(data: Dataset, target=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DATASET_HEADER)
    rows = [(tuple(k), repr(float(v))) for k, v in zip(data.keys.tolist(), data.values)]
    rows += [(k, "NA") for k in data.explicit_missing if k not in data.observed_keys]
    for k, v in sorted(rows):
        w.writerow([*k, v])
    text = buf.getvalue()
    if target is not None:
        Path(target).write_text(text)
    return text


def read_plan_csv(source, frame: StudyFrame) -> MeasurementPlan:
    with _open_text(source) as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header != PLAN_HEADER:
            raise ValueError(f"expected header {','.join(PLAN_HEADER)}, got {','.join(header)}")
        entries = [tuple(int(c) for c in row) for row in reader if row and any(c.strip() for c in row)]
    return MeasurementPlan(frame, entries)


def write_plan_csv(plan: MeasurementPlan, target=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLAN_HEADER)
    for tr in plan:
        w.writerow(tr)
    text = buf.getvalue()
    if target is not None:
        Path(target).write_text(text)
    return text

"""Emission curve, objective terms, weighted-sum scalarization, Pareto filter.

Units are fixed throughout: km, km/h, hours, grams and an abstract currency.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .network import RoadNetwork, arrival_schedule

if TYPE_CHECKING:
    from .expand import NCSolution

TERMS = ("TGE", "TSC", "TDT", "MDD", "LAC", "MAT")
CSV_COLUMNS = ("tge_g", "tsc_usd", "tdt_h", "mdd_km", "lac_usd", "mat_h")
SPEED_TERMS = (0, 2, 4, 5)  # TGE, TDT, LAC, MAT


@dataclass(frozen=True)
class EmissionCurve:
    """CO2 grams per km as e0 + e1 v + e2 v^2 + e3 / v^2, v in km/h."""

    e0: float = 871.0
    e1: float = -16.0
    e2: float = 0.143
    e3: float = 32031.0

    def __call__(self, v):
        return self.e0 + self.e1 * v + self.e2 * v * v + self.e3 / (v * v)

    def derivative(self, v):
        return self.e1 + 2.0 * self.e2 * v - 2.0 * self.e3 / (v * v * v)


DEFAULT_CURVE = EmissionCurve()


@dataclass(frozen=True)
class Vehicle:
    capacity: float = float("inf")
    setup_cost: float = 100.0
    curve: EmissionCurve = DEFAULT_CURVE


def fleet_of(fleet: Sequence[Vehicle], count: int) -> list[Vehicle]:
    """The first ``count`` vehicles; the last listed type repeats as needed."""
    if not fleet:
        raise ValueError("fleet must list at least one vehicle")
    return [fleet[min(q, len(fleet) - 1)] for q in range(count)]


def emission_rate(curve: EmissionCurve, v: float) -> float:
    if not v > 0:
        raise ValueError(f"speed must be positive, got {v}")
    return float(curve(v))


def edge_time(d: float, traversals: int, v: float) -> float:
    if not v > 0:
        raise ValueError(f"speed must be positive, got {v}")
    return traversals * d / v


def edge_emissions(d: float, traversals: int, v: float, curve: EmissionCurve = DEFAULT_CURVE) -> float:
    return traversals * d * emission_rate(curve, v)


@dataclass(frozen=True)
class ObjectiveVector:
    TGE: float  # g CO2
    TSC: float  # currency
    TDT: float  # h
    MDD: float  # km
    LAC: float  # currency
    MAT: float  # h

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_array(cls, values) -> "ObjectiveVector":
        return cls(*(float(x) for x in values))


def _check_weights(values, name: str, strict: bool) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != (6,):
        raise ValueError(f"{name} needs 6 entries, got {arr.shape}")
    if strict and not np.all(arr > 0):
        raise ValueError(f"{name} entries must be positive")
    if not strict and (np.any(arr < 0) or not np.any(arr > 0)):
        raise ValueError(f"{name} entries must be non-negative and not all zero")
    return arr


@dataclass(frozen=True)
class WeightVector:
    """Non-negative weights on (TGE, TSC, TDT, MDD, LAC, MAT)."""

    values: tuple[float, ...]

    def __post_init__(self):
        arr = _check_weights(self.values, "alpha", strict=False)
        object.__setattr__(self, "values", tuple(float(x) for x in arr))

    def normalized(self) -> "WeightVector":
        s = sum(self.values)
        return WeightVector(tuple(x / s for x in self.values))

    def __getitem__(self, i: int) -> float:
        return self.values[i]

    def as_array(self) -> np.ndarray:
        return np.array(self.values)


@dataclass(frozen=True)
class NormalizationWeights:
    values: tuple[float, ...]

    def __post_init__(self):
        arr = _check_weights(self.values, "normalization", strict=True)
        object.__setattr__(self, "values", tuple(float(x) for x in arr))

    @classmethod
    def from_terms(cls, ov: ObjectiveVector) -> "NormalizationWeights":
        # a term that is zero at the reference point would divide by zero
        return cls(tuple(x if x > 0 else 1.0 for x in astuple(ov)))

    def __getitem__(self, i: int) -> float:
        return self.values[i]

    def as_array(self) -> np.ndarray:
        return np.array(self.values)


UNIT_NORMALIZATION = NormalizationWeights((1.0,) * 6)


def objective_terms(solution: "NCSolution", net: RoadNetwork, fleet: Sequence[Vehicle]) -> ObjectiveVector:
    """Evaluate the six terms of a road-network solution.

    Lateness and the maximum arrival only look at the first arrival of each
    customer's assigned vehicle.
    """
    vehicles = fleet_of(fleet, len(solution.routes))
    lengths = {e.key: e.length for e in net.edges}
    tge = tsc = tdt = lac = 0.0
    mdd = mat = 0.0
    for seq in solution.routes:
        if not seq.edges:
            continue
        q = seq.vehicle
        veh = vehicles[q]
        tsc += veh.setup_cost
        dist = 0.0
        speeds = {}
        for e, cnt in seq.counts.items():
            v = solution.speeds[(q, e)]
            speeds[e] = v
            d = lengths[e]
            tge += edge_emissions(d, cnt, v, veh.curve)
            tdt += edge_time(d, cnt, v)
            dist += cnt * d
        mdd = max(mdd, dist)
        _, first = arrival_schedule(seq, speeds, lengths)
        for node, owner in solution.assignment.items():
            if owner != q:
                continue
            if node not in first:
                raise ValueError(f"customer {node} assigned to vehicle {q} but never reached")
            cust = net.customer(node)
            lac += max(first[node] - cust.window_upper, 0.0) * cust.late_penalty
            mat = max(mat, first[node])
    return ObjectiveVector(tge, tsc, tdt, mdd, lac, mat)


def scalarize(
    ov: ObjectiveVector, alpha: WeightVector, w: NormalizationWeights, speed_only: bool = False
) -> float:
    terms = ov.as_array() / w.as_array()
    a = alpha.as_array()
    if speed_only:
        a = np.array([a[i] if i in SPEED_TERMS else 0.0 for i in range(6)])
    return float(a @ terms)


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def pareto_filter(points: Iterable[ObjectiveVector]) -> list[ObjectiveVector]:
    """Non-dominated points, duplicates collapsed, in lexicographic order."""
    unique = sorted(set(points), key=astuple)
    kept: list[ObjectiveVector] = []
    # after a lexicographic sort a point can only be dominated by an earlier one
    for p in unique:
        tp = astuple(p)
        if not any(dominates(astuple(k), tp) for k in kept):
            kept.append(p)
    return kept


def pareto_mask(values: np.ndarray) -> np.ndarray:
    """Boolean mask of the non-dominated rows of ``values`` (minimization)."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        if not keep[i]:
            continue
        le = np.all(values <= values[i], axis=1)
        lt = np.any(values < values[i], axis=1)
        if np.any(le & lt):
            keep[i] = False
    return keep

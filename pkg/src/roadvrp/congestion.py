"""Background traffic, the congestion-coupled speed upper bound and edge loads."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.stats import poisson

from .network import Edge, EdgeKey, RoadNetwork, RouteSequence

VEHICLE_LENGTH_M = 4.5
BACKGROUND_MODES = ("explicit", "fraction", "poisson")


@dataclass(frozen=True)
class CongestionParams:
    gamma: float = 1.0
    eta: float = 2.0

    def __post_init__(self):
        if not (self.gamma > 0 and self.eta > 0):
            raise ValueError(f"gamma and eta must be positive, got {self.gamma}, {self.eta}")


@dataclass(frozen=True)
class BackgroundTraffic:
    """How many foreign vehicles sit on each edge.

    ``fraction`` is a deterministic share of each edge capacity. In
    ``poisson`` mode a Poisson(beta * kcap) count is added on top of that
    share, then the total is clamped at kcap.
    """

    mode: str = "fraction"
    fraction: float = 0.0
    beta: float = 0.0
    counts: Mapping[EdgeKey, int] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in BACKGROUND_MODES:
            raise ValueError(f"unknown background mode {self.mode!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"fraction must lie in [0, 1], got {self.fraction}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")

    def with_seed(self, seed: int) -> "BackgroundTraffic":
        return BackgroundTraffic(self.mode, self.fraction, self.beta, self.counts, seed)


def estimate_kcap(length_km: float) -> int:
    """Vehicles that fit on an edge bumper to bumper, at least one."""
    # round first so 0.009 km gives exactly 2, not 1.9999...
    return max(1, math.floor(round(length_km * 1000.0 / VEHICLE_LENGTH_M, 9)))


def clamped_poisson(lam: np.ndarray, caps: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Inverse-CDF draws: one uniform per edge, so counts are monotone in lam
    # for a fixed seed.
    u = rng.random(len(lam))
    draws = poisson.ppf(u, np.asarray(lam, dtype=float))
    draws = np.nan_to_num(draws, nan=0.0, posinf=np.inf)
    return np.minimum(draws, caps).astype(int)


def realize_background(net: RoadNetwork, spec: BackgroundTraffic) -> dict[EdgeKey, int]:
    caps = np.array([e.kcap for e in net.edges], dtype=float)
    if spec.mode == "explicit":
        out = {}
        for e in net.edges:
            k = int(spec.counts.get(e.key, 0))
            if not 0 <= k <= e.kcap:
                raise ValueError(f"background count {k} on {e.key} outside [0, {e.kcap}]")
            out[e.key] = k
        return out
    base = np.floor(spec.fraction * caps + 1e-9)
    if spec.mode == "poisson" and spec.beta > 0:
        rng = np.random.default_rng(spec.seed)
        base = np.minimum(base + clamped_poisson(spec.beta * caps, caps, rng), caps)
    return {e.key: int(k) for e, k in zip(net.edges, base)}


def speed_upper_bound(edge: Edge, k: float, params: CongestionParams) -> float:
    if k < 0 or k > edge.kcap:
        raise ValueError(f"count {k} on {edge.key} outside [0, {edge.kcap}]")
    slowed = edge.vmax / (1.0 + params.gamma * (k / edge.kcap) ** params.eta)
    return max(slowed, edge.vmin)


def effective_bounds(
    edges: Iterable[Edge], counts: Mapping[EdgeKey, int], params: CongestionParams
) -> dict[EdgeKey, tuple[float, float]]:
    return {e.key: (e.vmin, speed_upper_bound(e, counts.get(e.key, 0), params)) for e in edges}


@dataclass(frozen=True)
class CapacityViolation:
    edge: EdgeKey
    load: int
    cap: int
    vehicles: tuple[int, ...]  # vehicles asked to leave the edge


def capacity_violations(
    routes: Iterable[RouteSequence], counts: Mapping[EdgeKey, int], caps: Mapping[EdgeKey, int]
) -> list[CapacityViolation]:
    """Edges whose own-fleet users plus background exceed capacity.

    A vehicle counts once per edge however often it traverses it. The
    offending vehicles are the highest-indexed users, as many as the
    overload (all users when background alone fills the edge).
    """
    users: dict[EdgeKey, set[int]] = defaultdict(set)
    for seq in routes:
        for e in seq.edges:
            users[e].add(seq.vehicle)
    out = []
    for e in sorted(users):
        vs = sorted(users[e])
        load = len(vs) + int(counts.get(e, 0))
        cap = int(caps[e])
        if load > cap:
            excess = min(load - cap, len(vs))
            out.append(CapacityViolation(e, load, cap, tuple(vs[-excess:])))
    return out

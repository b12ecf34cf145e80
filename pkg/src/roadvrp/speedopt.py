"""Speed optimization on fixed road routes.

One speed per (vehicle, road edge); the objective is the weighted,
normalized sum of emissions, driving time, lateness and maximum arrival.
All four terms are convex in the speeds for curves with non-negative
quadratic and inverse-square coefficients, so a projected gradient method
with backtracking is adequate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .metrics import SPEED_TERMS, NormalizationWeights, Vehicle, WeightVector, fleet_of
from .network import EdgeKey, RoadNetwork, RouteSequence

ARMIJO = 1e-4
PG_TOL = 1e-4
F_TOL = 1e-8
F_WINDOW = 5
MAX_ITER = 5000
GRID_GUARD = 10**8


@dataclass
class SpeedProblem:
    keys: list[tuple[int, EdgeKey]]
    vehicle: np.ndarray  # (n,) owner of each variable
    length: np.ndarray  # (n,) km
    count: np.ndarray  # (n,) traversals
    coeffs: np.ndarray  # (n, 4) emission curve per variable
    lo: np.ndarray
    hi: np.ndarray
    rows: np.ndarray  # (C, n) traversals before the first arrival at each customer
    window: np.ndarray  # (C,)
    penalty: np.ndarray  # (C,)
    cust_nodes: list[int]
    cust_vehicle: np.ndarray  # (C,)
    weights: np.ndarray  # alpha/w for TGE, TDT, LAC, MAT
    max_iter: int = MAX_ITER
    pg_tol: float = PG_TOL
    f_tol: float = F_TOL

    def __post_init__(self):
        if np.any(self.lo <= 0) or np.any(self.lo > self.hi):
            raise ValueError("speed bounds must satisfy 0 < lo <= hi")

    @property
    def size(self) -> int:
        return len(self.keys)

    def subproblem(self, idx: np.ndarray) -> "SpeedProblem":
        idx = np.asarray(idx)
        owners = set(self.vehicle[idx].tolist())
        crow = np.array([i for i, q in enumerate(self.cust_vehicle) if q in owners], dtype=int)
        return SpeedProblem(
            keys=[self.keys[i] for i in idx],
            vehicle=self.vehicle[idx],
            length=self.length[idx],
            count=self.count[idx],
            coeffs=self.coeffs[idx],
            lo=self.lo[idx],
            hi=self.hi[idx],
            rows=self.rows[np.ix_(crow, idx)] if len(crow) else np.zeros((0, len(idx))),
            window=self.window[crow] if len(crow) else np.zeros(0),
            penalty=self.penalty[crow] if len(crow) else np.zeros(0),
            cust_nodes=[self.cust_nodes[i] for i in crow],
            cust_vehicle=self.cust_vehicle[crow] if len(crow) else np.zeros(0, dtype=int),
            weights=self.weights,
            max_iter=self.max_iter,
            pg_tol=self.pg_tol,
            f_tol=self.f_tol,
        )

    # -- evaluation ---------------------------------------------------------

    def terms(self, V: np.ndarray) -> np.ndarray:
        """Raw (TGE, TDT, LAC, MAT) for a batch of speed vectors, shape (B, 4)."""
        V = np.atleast_2d(np.asarray(V, dtype=float))
        e = self.coeffs
        f = e[:, 0] + e[:, 1] * V + e[:, 2] * V * V + e[:, 3] / (V * V)
        cd = self.count * self.length
        tge = (cd * f).sum(axis=1)
        tau = self.length / V
        tdt = (self.count * tau).sum(axis=1)
        if len(self.window):
            arr = tau @ self.rows.T
            lac = (np.clip(arr - self.window, 0.0, None) * self.penalty).sum(axis=1)
            mat = arr.max(axis=1)
        else:
            lac = np.zeros(len(V))
            mat = np.zeros(len(V))
        return np.stack([tge, tdt, lac, mat], axis=1)

    def objective(self, V: np.ndarray) -> np.ndarray:
        out = self.terms(V) @ self.weights
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite speed objective; check emission coefficients")
        return out

    def value(self, v: np.ndarray) -> float:
        return float(self.objective(v)[0])

    def smooth_gradient(self, v: np.ndarray) -> np.ndarray:
        """Gradient of the emission and driving-time part only."""
        e = self.coeffs
        df = e[:, 1] + 2.0 * e[:, 2] * v - 2.0 * e[:, 3] / (v * v * v)
        cd = self.count * self.length
        w = self.weights
        return w[0] * cd * df - w[1] * cd / (v * v)

    def smooth_value(self, v: np.ndarray) -> float:
        t = self.terms(v)[0]
        return float(self.weights[0] * t[0] + self.weights[1] * t[1])

    def gradient(self, v: np.ndarray) -> np.ndarray:
        """A subgradient: hinge terms count only when strictly late, MAT uses the first maximizer."""
        g = self.smooth_gradient(v)
        if len(self.window):
            dtau = -self.length / (v * v)
            arr = self.rows @ (self.length / v)
            late = arr > self.window
            w = self.weights
            if w[2] and late.any():
                g = g + w[2] * (self.penalty[late] @ self.rows[late]) * dtau
            if w[3]:
                g = g + w[3] * self.rows[int(np.argmax(arr))] * dtau
        return g


def build_speed_problem(
    routes: Sequence[RouteSequence],
    assignment: Mapping[int, int],
    net: RoadNetwork,
    fleet: Sequence[Vehicle],
    bounds: Mapping[EdgeKey, tuple[float, float]],
    alpha: WeightVector,
    w: NormalizationWeights,
) -> SpeedProblem:
    a = alpha.as_array() / w.as_array()
    if not np.any(a[list(SPEED_TERMS)] > 0):
        raise ValueError("alpha puts no weight on a speed-dependent term")
    vehicles = fleet_of(fleet, max(len(routes), 1))
    keys: list[tuple[int, EdgeKey]] = []
    pos: dict[tuple[int, EdgeKey], int] = {}
    for seq in routes:
        for e in seq.edges:
            k = (seq.vehicle, e)
            if k not in pos:
                pos[k] = len(keys)
                keys.append(k)
    n = len(keys)
    counts = np.zeros(n)
    for seq in routes:
        for e in seq.edges:
            counts[pos[(seq.vehicle, e)]] += 1
    rows, window, penalty, cust_nodes, cust_vehicle = [], [], [], [], []
    by_vehicle = {seq.vehicle: seq for seq in routes}
    for node in sorted(assignment):
        q = assignment[node]
        seq = by_vehicle[q]
        row = np.zeros(n)
        for e in seq.edges:
            row[pos[(q, e)]] += 1
            if e[1] == node:
                break
        else:
            raise ValueError(f"vehicle {q} never reaches customer {node}")
        cust = net.customer(node)
        rows.append(row)
        window.append(cust.window_upper)
        penalty.append(cust.late_penalty)
        cust_nodes.append(node)
        cust_vehicle.append(q)
    curves = [vehicles[q].curve for q, _ in keys]
    return SpeedProblem(
        keys=keys,
        vehicle=np.array([q for q, _ in keys], dtype=int),
        length=np.array([net.edge(e).length for _, e in keys]),
        count=counts,
        coeffs=np.array([[c.e0, c.e1, c.e2, c.e3] for c in curves]).reshape(n, 4),
        lo=np.array([bounds[e][0] for _, e in keys]),
        hi=np.array([bounds[e][1] for _, e in keys]),
        rows=np.array(rows).reshape(len(rows), n),
        window=np.array(window),
        penalty=np.array(penalty),
        cust_nodes=cust_nodes,
        cust_vehicle=np.array(cust_vehicle, dtype=int),
        weights=np.array([a[0], a[2], a[4], a[5]]),
    )


@dataclass
class SpeedSolution:
    speeds: dict[tuple[int, EdgeKey], float]
    objective: float
    terms: dict[str, float]
    iterations: int = 0
    pg_norm: float = 0.0
    status: str = "converged"
    blocks: list[dict] = field(default_factory=list)

    def report(self) -> dict:
        return {
            "iterations": self.iterations,
            "pg_norm": self.pg_norm,
            "status": self.status,
            "objective": self.objective,
        }


def _projected_gradient(prob: SpeedProblem) -> tuple[np.ndarray, dict]:
    lo, hi = prob.lo, prob.hi
    v = 0.5 * (lo + hi)
    L = prob.value(v)
    g = prob.gradient(v)
    pg0 = float(np.linalg.norm(np.clip(v - g, lo, hi) - v))
    if pg0 == 0.0:
        return v, {"iterations": 0, "pg_norm": 0.0, "status": "converged"}
    width = float(np.max(hi - lo))
    step = width / max(float(np.max(np.abs(g))), 1e-300)
    history = [L]
    status = "max-iter"
    it = 0
    pg = pg0
    for it in range(1, prob.max_iter + 1):
        s = step
        while True:
            v_new = np.clip(v - s * g, lo, hi)
            dv = v_new - v
            if not np.any(dv):
                L_new = L
                break
            L_new = prob.value(v_new)
            if L_new <= L + ARMIJO * float(g @ dv):
                break
            s *= 0.5
            if s < 1e-30 * step:
                dv = np.zeros_like(v)
                L_new = L
                break
        if not np.any(dv):
            status = "stalled"
            break
        g_new = prob.gradient(v_new)
        dg = g_new - g
        curv = float(dv @ dg)
        # Barzilai-Borwein trial step for the next iteration
        step = float(dv @ dv) / curv if curv > 0 else 2.0 * s
        step = min(max(step, 1e-12), 1e12)
        v, g, L = v_new, g_new, L_new
        history.append(L)
        pg = float(np.linalg.norm(np.clip(v - g, lo, hi) - v))
        if pg <= prob.pg_tol * pg0:
            status = "converged"
            break
        if len(history) > F_WINDOW:
            ref = history[-1 - F_WINDOW]
            if abs(ref - L) <= prob.f_tol * max(abs(ref), 1e-300):
                status = "converged"
                break
    return v, {"iterations": it, "pg_norm": pg, "status": status}


def _blocks(prob: SpeedProblem) -> list[np.ndarray]:
    if prob.weights[3] > 0:
        # the maximum arrival couples every vehicle
        return [np.arange(prob.size)]
    return [np.flatnonzero(prob.vehicle == q) for q in sorted(set(prob.vehicle.tolist()))]


def _package(prob: SpeedProblem, v: np.ndarray, reports: list[dict]) -> SpeedSolution:
    t = prob.terms(v)[0]
    statuses = {r["status"] for r in reports}
    status = "converged" if statuses <= {"converged"} else ",".join(sorted(statuses - {"converged"}))
    return SpeedSolution(
        speeds={k: float(x) for k, x in zip(prob.keys, v)},
        objective=float(t @ prob.weights),
        terms={"TGE": float(t[0]), "TDT": float(t[1]), "LAC": float(t[2]), "MAT": float(t[3])},
        iterations=sum(r["iterations"] for r in reports),
        pg_norm=float(math.sqrt(sum(r["pg_norm"] ** 2 for r in reports))),
        status=status,
        blocks=reports,
    )


def solve_speeds(prob: SpeedProblem) -> SpeedSolution:
    """Projected gradient descent, split per vehicle when the problem separates."""
    if prob.size == 0:
        return _package(prob, np.zeros(0), [])
    v = np.empty(prob.size)
    reports = []
    for idx in _blocks(prob):
        sub = prob.subproblem(idx)
        x, rep = _projected_gradient(sub)
        v[idx] = x
        reports.append(rep)
    return _package(prob, v, reports)


def _axis(lo: float, hi: float, h: float) -> np.ndarray:
    k = int(math.floor((hi - lo) / h + 1e-9))
    pts = lo + h * np.arange(k + 1)
    if pts[-1] < hi - 1e-12:
        pts = np.append(pts, hi)
    return pts


def _grid_min(prob: SpeedProblem, axes: list[np.ndarray], chunk: int = 200_000) -> tuple[float, np.ndarray]:
    shape = [len(a) for a in axes]
    total = int(np.prod(shape))
    best_val, best_v = math.inf, None
    for start in range(0, total, chunk):
        flat = np.arange(start, min(total, start + chunk))
        idx = np.unravel_index(flat, shape)
        V = np.stack([a[i] for a, i in zip(axes, idx)], axis=1)
        vals = prob.objective(V)
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val, best_v = float(vals[j]), V[j].copy()
    return best_val, best_v


def brute_force_speeds(prob: SpeedProblem, resolution: float = 0.01, budget: int = 200_000) -> SpeedSolution:
    """Grid minimization at ``resolution`` km/h; coarse-to-fine when the full grid is too big.

    Meant as a test oracle. Refinement keeps a window of two coarse steps
    around the incumbent, which is safe for the convex objectives built here.
    """
    n = prob.size
    if n == 0:
        return _package(prob, np.zeros(0), [])
    lo, hi = prob.lo, prob.hi
    full = [_axis(a, b, resolution) for a, b in zip(lo, hi)]
    evaluated = 0
    if math.prod(len(a) for a in full) <= budget:
        _, v = _grid_min(prob, full)
        evaluated = math.prod(len(a) for a in full)
    else:
        per_dim = max(3, int(budget ** (1.0 / n)))
        h = max(float(np.max(hi - lo)) / (per_dim - 1), resolution)
        # snap coarse steps to powers of ten times the target resolution
        h = resolution * 10 ** math.ceil(math.log10(h / resolution))
        v = None
        wlo, whi = lo.copy(), hi.copy()
        while True:
            axes = [_axis(a, b, h) for a, b in zip(wlo, whi)]
            size = math.prod(len(a) for a in axes)
            evaluated += size
            if evaluated > GRID_GUARD:
                raise ValueError("grid oracle exceeds its state budget")
            _, v = _grid_min(prob, axes)
            if h <= resolution * (1 + 1e-9):
                break
            wlo = np.maximum(lo, v - 2 * h)
            whi = np.minimum(hi, v + 2 * h)
            # keep the fine grid aligned with the global lattice lo + k*resolution
            h /= 10.0
            wlo = lo + np.floor((wlo - lo) / h + 1e-9) * h
    return _package(prob, v, [{"iterations": evaluated, "pg_norm": float("nan"), "status": "grid"}])

"""Instance JSON format, parsing with diagnostics, and the seeded grid generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .congestion import BackgroundTraffic, CongestionParams, estimate_kcap
from .metrics import DEFAULT_CURVE, EmissionCurve, Vehicle
from .network import (
    CompleteProjection,
    Customer,
    Edge,
    RoadNetwork,
    _reachable,
    shortest_paths,
    validate_network,
)

MPH_25 = 40.23
MPH_10 = 16.09
MPH_5 = 8.05


class InstanceError(ValueError):
    def __init__(self, diagnostics: list[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


@dataclass(frozen=True)
class Instance:
    network: RoadNetwork
    fleet: tuple[Vehicle, ...] = (Vehicle(),)
    congestion: CongestionParams = CongestionParams()
    background: BackgroundTraffic = BackgroundTraffic()
    name: str = field(default="", compare=False)

    @cached_property
    def projection(self) -> CompleteProjection:
        return shortest_paths(self.network)

    @property
    def n_customers(self) -> int:
        return len(self.network.customers)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("roadvrp") / "data" / name))


def resolve_path(path: str | Path) -> Path:
    p = Path(path)
    if not p.exists():
        alt = bundled_path(p.name)
        if alt.exists():
            return alt
    return p


# ------------------------------------------------------------------ parsing


def _num(obj: dict, key: str, where: str, diags: list[str], default: Any = ...) -> Any:
    if key not in obj or obj[key] is None:
        if default is ...:
            diags.append(f"{where}: field '{key}' required")
            return None
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        diags.append(f"{where}: field '{key}' must be a number, got {val!r}")
        return None
    return val


def _background_from(doc: dict | None, diags: list[str]) -> BackgroundTraffic:
    if not doc:
        return BackgroundTraffic()
    mode = doc.get("mode", "none")
    seed = int(doc.get("seed", 0))
    try:
        if mode in ("none", "fraction"):
            return BackgroundTraffic("fraction", fraction=float(doc.get("value", 0.0)), seed=seed)
        if mode == "poisson":
            return BackgroundTraffic(
                "poisson", fraction=float(doc.get("fraction", 0.0)), beta=float(doc.get("beta", 0.0)), seed=seed
            )
        if mode == "explicit":
            counts = {(int(c["tail"]), int(c["head"])): int(c["k"]) for c in doc.get("counts", [])}
            return BackgroundTraffic("explicit", counts=counts, seed=seed)
    except (TypeError, ValueError, KeyError) as exc:
        diags.append(f"background: {exc}")
        return BackgroundTraffic()
    diags.append(f"background: unknown mode {mode!r}")
    return BackgroundTraffic()


def instance_from_dict(doc: dict, name: str = "", check: bool = True) -> Instance:
    """Build an instance; ``check=False`` skips the road-network invariants."""
    diags: list[str] = []
    if not isinstance(doc, dict):
        raise InstanceError(["top level must be a JSON object"])
    if "depot" not in doc:
        diags.append("depot required")
    for key in ("nodes", "edges", "customers"):
        if not isinstance(doc.get(key), list):
            diags.append(f"'{key}' list required")
    if diags:
        raise InstanceError(diags)

    nodes, coords = [], {}
    for i, nd in enumerate(doc["nodes"]):
        if not isinstance(nd, dict) or "id" not in nd:
            diags.append(f"nodes[{i}]: field 'id' required")
            continue
        nodes.append(nd["id"])
        if "x" in nd and "y" in nd:
            coords[nd["id"]] = (float(nd["x"]), float(nd["y"]))

    edges = []
    for i, ed in enumerate(doc["edges"]):
        where = f"edges[{i}]"
        if not isinstance(ed, dict):
            diags.append(f"{where}: must be an object")
            continue
        tail = _num(ed, "tail", where, diags)
        head = _num(ed, "head", where, diags)
        d = _num(ed, "d_km", where, diags)
        vmin = _num(ed, "vmin_kmh", where, diags, MPH_5)
        vmax = _num(ed, "vmax_kmh", where, diags, MPH_25)
        kcap = _num(ed, "kcap", where, diags, None)
        if None in (tail, head, d, vmin, vmax):
            continue
        if kcap is None:
            kcap = estimate_kcap(d) if d > 0 else 1
        edges.append(Edge(int(tail), int(head), float(d), float(vmin), float(vmax), int(kcap)))

    customers = []
    for i, c in enumerate(doc["customers"]):
        where = f"customers[{i}]"
        if not isinstance(c, dict):
            diags.append(f"{where}: must be an object")
            continue
        node = _num(c, "node", where, diags)
        demand = _num(c, "demand", where, diags, 0.0)
        b = _num(c, "b_hours", where, diags, math.inf)
        a = _num(c, "a_hours", where, diags, 0.0)
        pen = _num(c, "penalty", where, diags, 0.0)
        if None in (node, demand, b, a, pen):
            continue
        customers.append(Customer(int(node), float(demand), float(b), float(a), float(pen)))

    fleet = []
    for i, v in enumerate(doc.get("fleet") or [{}]):
        where = f"fleet[{i}]"
        cap = _num(v, "capacity", where, diags, math.inf)
        sc = _num(v, "setup_cost", where, diags, 100.0)
        coeffs = v.get("emission_coeffs")
        curve = DEFAULT_CURVE
        if coeffs is not None:
            if not (isinstance(coeffs, list) and len(coeffs) == 4):
                diags.append(f"{where}: emission_coeffs must list 4 numbers")
            else:
                curve = EmissionCurve(*(float(x) for x in coeffs))
        if cap is not None and sc is not None:
            fleet.append(Vehicle(float(cap), float(sc), curve))

    cong = doc.get("congestion") or {}
    try:
        params = CongestionParams(float(cong.get("gamma", 1.0)), float(cong.get("eta", 2.0)))
    except ValueError as exc:
        diags.append(f"congestion: {exc}")
        params = CongestionParams()
    background = _background_from(doc.get("background"), diags)
    if diags:
        raise InstanceError(diags)

    net = RoadNetwork(nodes, edges, doc["depot"], customers, coords or None)
    problems = validate_network(net) if check else []
    if problems:
        raise InstanceError([str(p) for p in problems])
    return Instance(net, tuple(fleet), params, background, name)


def parse_instance(path: str | Path, check: bool = True) -> Instance:
    path = resolve_path(path)
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InstanceError([f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from exc
    return instance_from_dict(doc, name=Path(path).stem, check=check)


def _finite(x: float):
    return None if math.isinf(x) else x


def instance_to_dict(inst: Instance) -> dict:
    net = inst.network
    nodes = []
    for n in net.nodes:
        entry: dict[str, Any] = {"id": n}
        if net.coords and n in net.coords:
            entry["x"], entry["y"] = net.coords[n]
        nodes.append(entry)
    bg = inst.background
    if bg.mode == "fraction":
        background = {"mode": "fraction", "value": bg.fraction, "seed": bg.seed}
    elif bg.mode == "poisson":
        background = {"mode": "poisson", "fraction": bg.fraction, "beta": bg.beta, "seed": bg.seed}
    else:
        background = {
            "mode": "explicit",
            "counts": [{"tail": t, "head": h, "k": k} for (t, h), k in sorted(bg.counts.items())],
            "seed": bg.seed,
        }
    return {
        "nodes": nodes,
        "edges": [
            {"tail": e.tail, "head": e.head, "d_km": e.length, "vmin_kmh": e.vmin, "vmax_kmh": e.vmax, "kcap": e.kcap}
            for e in net.edges
        ],
        "depot": net.depot,
        "customers": [
            {
                "node": c.node,
                "demand": c.demand,
                "b_hours": _finite(c.window_upper),
                "a_hours": c.window_lower,
                "penalty": c.late_penalty,
            }
            for c in net.customers
        ],
        "fleet": [
            {
                "capacity": _finite(v.capacity),
                "setup_cost": v.setup_cost,
                "emission_coeffs": [v.curve.e0, v.curve.e1, v.curve.e2, v.curve.e3],
            }
            for v in inst.fleet
        ],
        "congestion": {"gamma": inst.congestion.gamma, "eta": inst.congestion.eta},
        "background": background,
    }


def dumps_instance(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), indent=1) + "\n"


def write_instance(inst: Instance, path: str | Path) -> None:
    Path(path).write_text(dumps_instance(inst), encoding="utf-8")


# ---------------------------------------------------------------- generator


@dataclass(frozen=True)
class GeneratorSpec:
    rows: int = 8
    cols: int = 8
    customers: int = 10
    seed: int = 42
    drop_prob: float = 0.15
    spacing_km: float = 0.2
    jitter: float = 0.3
    tau: float = 2.0 / 3.0
    vmax: float = MPH_25
    vmin: float = MPH_5
    setup_cost: float = 100.0
    penalty: float = 100.0

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("grid needs at least 2 x 2 nodes")
        if not 1 <= self.customers < self.rows * self.cols:
            raise ValueError("customer count must be between 1 and the number of non-depot nodes")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must lie in [0, 1)")
        if not 0.0 <= self.jitter < 1.0:
            raise ValueError("jitter must lie in [0, 1)")


def _strongly_connected(nodes: list[int], arcs: set[tuple[int, int]]) -> bool:
    fwd: dict[int, list[int]] = {}
    bwd: dict[int, list[int]] = {}
    for a, b in arcs:
        fwd.setdefault(a, []).append(b)
        bwd.setdefault(b, []).append(a)
    root = nodes[0]
    return len(_reachable(root, fwd)) == len(nodes) and len(_reachable(root, bwd)) == len(nodes)


def generate_instance(spec: GeneratorSpec) -> Instance:
    """Jittered grid road network with some one-way streets and random customers."""
    rng = np.random.default_rng(spec.seed)
    R, C, h = spec.rows, spec.cols, spec.spacing_km
    nodes = list(range(R * C))
    shift = rng.uniform(-0.5, 0.5, size=(R * C, 2)) * spec.jitter * h
    coords = {}
    for r in range(R):
        for c in range(C):
            i = r * C + c
            coords[i] = (round(c * h + shift[i, 0], 6), round(r * h + shift[i, 1], 6))

    arcs = set()
    for r in range(R):
        for c in range(C):
            i = r * C + c
            if c + 1 < C:
                arcs |= {(i, i + 1), (i + 1, i)}
            if r + 1 < R:
                arcs |= {(i, i + C), (i + C, i)}
    order = sorted(arcs)
    for k in rng.permutation(len(order)):
        arc = order[int(k)]
        if rng.random() < spec.drop_prob:
            trial = arcs - {arc}
            if _strongly_connected(nodes, trial):
                arcs = trial

    edges = []
    for a, b in sorted(arcs):
        (xa, ya), (xb, yb) = coords[a], coords[b]
        d = round(math.hypot(xa - xb, ya - yb), 6)
        edges.append(Edge(a, b, d, spec.vmin, spec.vmax, estimate_kcap(d)))

    cx, cy = (C - 1) * h / 2, (R - 1) * h / 2
    depot = min(nodes, key=lambda i: (math.hypot(coords[i][0] - cx, coords[i][1] - cy), i))
    pool = [i for i in nodes if i != depot]
    chosen = sorted(int(x) for x in rng.choice(pool, size=spec.customers, replace=False))

    draft = RoadNetwork(nodes, edges, depot, [Customer(n) for n in chosen], coords)
    proj = shortest_paths(draft)
    n_sub = len(chosen)
    customers = [
        Customer(
            node=n,
            demand=0.0,
            window_upper=spec.tau * n_sub * proj.d_sp[(depot, n)] / MPH_10,
            window_lower=0.0,
            late_penalty=spec.penalty,
        )
        for n in chosen
    ]
    net = RoadNetwork(nodes, edges, depot, customers, coords)
    fleet = (Vehicle(math.inf, spec.setup_cost, DEFAULT_CURVE),)
    return Instance(net, fleet, CongestionParams(), BackgroundTraffic(), name=f"grid{R}x{C}-s{spec.seed}")

"""Command-line entry point: validate, sp-table, solve, sweep, replicate, generate."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .congestion import BackgroundTraffic
from .instance import GeneratorSpec, InstanceError, dumps_instance, generate_instance, parse_instance
from .metrics import WeightVector
from .network import validate_network
from .orchestrator import (
    OverallInfeasibleError,
    SolveConfig,
    front_csv,
    record_to_dict,
    replication_csv,
    replication_to_dict,
    run_algorithm1,
    stochastic_replications,
    sweep_to_dict,
    sweep_weights,
)

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT = 0, 1, 2


class UsageError(ValueError):
    pass


def parse_alpha(text: str) -> WeightVector:
    parts = text.split(",")
    if len(parts) != 6:
        raise UsageError(f"--alpha needs 6 comma-separated numbers, got {len(parts)}")
    try:
        return WeightVector(tuple(float(p) for p in parts))
    except ValueError as exc:
        raise UsageError(f"--alpha: {exc}") from exc


def parse_background(text: str, seed: int) -> BackgroundTraffic:
    """``none``, ``frac:PHI``, ``poisson:BETA`` or ``frac:PHI+poisson:BETA``."""
    if text == "none":
        return BackgroundTraffic("fraction", 0.0, seed=seed)
    frac, beta, poisson = 0.0, 0.0, False
    try:
        for part in text.split("+"):
            kind, _, val = part.partition(":")
            if kind == "frac":
                frac = float(val)
            elif kind == "poisson":
                beta, poisson = float(val), True
            else:
                raise UsageError(f"--background: unknown kind {kind!r}")
        return BackgroundTraffic("poisson" if poisson else "fraction", frac, beta, seed=seed)
    except ValueError as exc:
        raise UsageError(f"--background: {exc}") from exc


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _json(doc) -> str:
    return json.dumps(doc, indent=1) + "\n"


def _config(args, inst) -> SolveConfig:
    kw = {}
    if getattr(args, "alpha", None):
        kw["alpha"] = parse_alpha(args.alpha)
    if args.background is not None:
        base_seed = args.seed if args.seed is not None else inst.background.seed
        kw["background"] = parse_background(args.background, base_seed)
    elif args.seed is not None:
        kw["seed"] = args.seed
    return SolveConfig(
        k_max_outer=args.kmax,
        j_max_inner=args.jmax,
        exact_threshold=args.exact_threshold,
        workers=args.workers,
        **kw,
    )


def cmd_validate(args) -> int:
    inst = parse_instance(args.instance, check=False)
    problems = validate_network(inst.network)
    for p in problems:
        print(p)
    if problems:
        return EXIT_INPUT
    net = inst.network
    print(f"ok: {len(net.nodes)} nodes, {len(net.edges)} edges, {len(net.customers)} customers")
    return EXIT_OK


def cmd_sp_table(args) -> int:
    inst = parse_instance(args.instance)
    proj = inst.projection
    rows = [
        {"pair": list(pair), "path": [list(e) for e in proj.sp_edges[pair]], "length_km": proj.d_sp[pair]}
        for pair in proj.pairs
    ]
    if args.format == "json":
        _emit(_json(rows), args.out)
        return EXIT_OK
    lines = ["from,to,length_km,path"]
    for r in rows:
        path = " ".join(f"({a},{b})" for a, b in r["path"])
        lines.append(f"{r['pair'][0]},{r['pair'][1]},{r['length_km']:.6g},{path}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_solve(args) -> int:
    inst = parse_instance(args.instance)
    cfg = _config(args, inst)
    rec = run_algorithm1(inst, cfg)
    _emit(_json(record_to_dict(rec, inst)), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    inst = parse_instance(args.instance)
    cfg = _config(args, inst)
    res = sweep_weights(inst, cfg)
    _emit(front_csv(res) if args.format == "csv" else _json(sweep_to_dict(res, inst)), args.out)
    return EXIT_OK


def cmd_replicate(args) -> int:
    inst = parse_instance(args.instance)
    cfg = _config(args, inst)
    if cfg.background_for(inst).mode != "poisson":
        raise UsageError("replicate needs a poisson background, e.g. --background poisson:0.1")
    res = stochastic_replications(inst, cfg, args.reps)
    _emit(replication_csv(res) if args.format == "csv" else _json(replication_to_dict(res)), args.out)
    return EXIT_OK


def cmd_generate(args) -> int:
    spec = GeneratorSpec(
        rows=args.rows,
        cols=args.cols,
        customers=args.customers,
        seed=args.seed if args.seed is not None else 42,
        drop_prob=args.drop,
        tau=args.tau,
    )
    _emit(dumps_instance(generate_instance(spec)), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="roadvrp", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def with_instance(p):
        p.add_argument("--instance", required=True, help="instance JSON (bundled names such as fig3.json also work)")
        p.add_argument("--out", help="output file (default: stdout)")
        return p

    def with_solver(p):
        p.add_argument("--seed", type=int, help="background traffic seed")
        p.add_argument("--jmax", type=int, default=5, help="inner iterations per fleet size")
        p.add_argument("--kmax", type=int, default=10, help="fleet sizes to try")
        p.add_argument("--exact-threshold", type=int, default=8, help="largest customer count solved exactly")
        p.add_argument("--background", help="none | frac:PHI | poisson:BETA | frac:PHI+poisson:BETA")
        p.add_argument("--workers", type=int, default=1, help="processes for sweeps")
        return p

    p = with_instance(sub.add_parser("validate", help="check an instance"))
    p.set_defaults(func=cmd_validate)
    p = with_instance(sub.add_parser("sp-table", help="list complete-graph shortest paths"))
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_sp_table)
    p = with_solver(with_instance(sub.add_parser("solve", help="run the alternating algorithm for one alpha")))
    p.add_argument("--alpha", default="1,0,0,0,0,0", help="six weights for TGE,TSC,TDT,MDD,LAC,MAT")
    p.set_defaults(func=cmd_solve)
    p = with_solver(with_instance(sub.add_parser("sweep", help="weight sweep and Pareto front")))
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_sweep)
    p = with_solver(with_instance(sub.add_parser("replicate", help="Poisson background replications")))
    p.add_argument("--reps", type=int, default=30)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_replicate)
    p = sub.add_parser("generate", help="write a seeded grid instance")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--rows", type=int, default=8)
    p.add_argument("--cols", type=int, default=8)
    p.add_argument("--customers", type=int, default=10)
    p.add_argument("--drop", type=float, default=0.15, help="edge drop probability")
    p.add_argument("--tau", type=float, default=2.0 / 3.0, help="time-window tightness")
    p.set_defaults(func=cmd_generate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InstanceError as exc:
        for d in exc.diagnostics:
            print(f"error: {d}", file=sys.stderr)
        return EXIT_INPUT
    except (UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OverallInfeasibleError as exc:
        doc = {"status": "infeasible", "reason": str(exc), "fleet_status": {str(k): v for k, v in exc.statuses.items()}}
        _emit(_json(doc), getattr(args, "out", None))
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())

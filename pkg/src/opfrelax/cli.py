"""Command-line front end: solve, bench, obbt, pf, check.

Exit codes: 0 success, 1 user error, 2 solver failure, 3 infeasible model.
All machine output is JSON (or CSV for bench tables); nondeterministic
fields such as wall time and timestamps live in a separate "meta" object so
the payload of identical runs is bit-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from opfrelax import acval, ipm, obbt as obbt_mod
from opfrelax.netmodel import (
    MatpowerParseError,
    Network,
    NetworkError,
    network_to_json,
    parse_matpower_file,
)
from opfrelax.relax import build

EXIT_OK = 0
EXIT_USER = 1
EXIT_SOLVER = 2
EXIT_INFEASIBLE = 3


@dataclass
class RunRecord:
    """One relaxation solve, as reported by ``solve`` and ``bench``."""

    case: str
    formulation: str
    cuts: str
    obbt: bool
    objective: str
    status: str
    objective_bound: float | None
    ac_objective: float | None
    gap_percent: float | None
    iterations: int


def _load_case(path: str) -> Network:
    return parse_matpower_file(path)


def _point_objective(net: Network, pt: acval.AcPoint, objective: str) -> float:
    if objective == "maxgen":
        return float(sum(pt.p_g))
    total = 0.0
    for g, p in zip(net.generators, pt.p_g):
        for k, coef in enumerate(g.cost):
            total += coef * p**k
    return total


def heuristic_lower_bound(
    net: Network, values: dict[str, float], objective: str
) -> tuple[float, acval.AcPoint] | None:
    """Round a relaxation solution onto an AC point via a power-flow solve.

    Takes the relaxed dispatch and voltage magnitudes as power-flow targets;
    the result counts only if the converged point passes the feasibility
    check, so the returned value is a genuine feasible-point objective.
    """
    disp = acval.Dispatch.from_network(net)
    for k in range(len(net.generators)):
        disp.p[k] = values.get(f"pg[{k}]", disp.p[k])
    for b in net.buses:
        if b.bus_type in ("PV", "slack") and f"w[{b.id}]" in values:
            w = max(values[f"w[{b.id}]"], 0.0)
            disp.v_set[b.id] = min(max(w**0.5, b.v_lo), b.v_hi)
    try:
        pt = acval.newton_power_flow(net, disp)
    except (acval.PowerFlowError, NetworkError):
        return None
    if not acval.check_feasible(net, pt).feasible:
        return None
    return _point_objective(net, pt, objective), pt


def _solve_one(
    net: Network,
    form: str,
    cuts: str,
    objective: str,
    tol: float,
    max_iter: int,
) -> tuple[ipm.SolveResult, float]:
    prog = build(net, form, objective=objective, cuts=cuts)
    t0 = time.perf_counter()
    res = ipm.solve(prog.compile(), ipm.SolverOptions(tol=tol, max_iter=max_iter))
    return res, time.perf_counter() - t0


def cmd_solve(args: argparse.Namespace) -> int:
    net = _load_case(args.case)
    used_obbt = False
    if args.bounds:
        bs = obbt_mod.BoundsSet.from_json(Path(args.bounds).read_text())
        net = bs.apply(net)
        used_obbt = True
    res, wall = _solve_one(net, args.form, args.cuts, args.objective,
                           args.solver_tol, args.max_iter)

    lb = args.ac_obj
    if lb is None and res.status == "optimal":
        found = heuristic_lower_bound(net, res.values, args.objective)
        if found is not None:
            lb = found[0]
    gap_pct = None
    if lb is not None and res.status == "optimal":
        gap_pct = acval.gap(res.objective, lb)

    record = RunRecord(
        case=net.name or args.case,
        formulation=args.form,
        cuts=args.cuts,
        obbt=used_obbt,
        objective=args.objective,
        status=res.status,
        objective_bound=res.objective,
        ac_objective=lb,
        gap_percent=gap_pct,
        iterations=res.iterations,
    )
    doc = {"record": asdict(record), "meta": {"wall_time_s": wall, "timestamp": time.time()}}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2))
    bound = "-" if res.objective is None else f"{res.objective:.6f}"
    gtxt = "-" if gap_pct is None else f"{gap_pct:.2f}%"
    print(f"{record.case}: {args.form}+{args.cuts} status={res.status} "
          f"bound={bound} gap={gtxt} iters={res.iterations} time={wall:.3f}s")
    if res.status == "infeasible":
        return EXIT_INFEASIBLE
    if res.status in ("numerical_failure", "iteration_limit"):
        return EXIT_SOLVER
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    forms = [f.strip() for f in args.forms.split(",") if f.strip()]
    cut_settings = {"none": ["none"], "lnc": ["lnc"], "both": ["none", "lnc"]}[args.cuts]
    case_paths = sorted(Path(args.cases).glob("*.m"))
    ac_objs: dict[str, float] = {}
    if args.ac_obj_file:
        ac_objs = json.loads(Path(args.ac_obj_file).read_text())

    headers = ["case"]
    for form in forms:
        for cut in cut_settings:
            suffix = f"{form}" + ("_lnc" if cut == "lnc" else "")
            headers.append(f"gap_{suffix}")
    for form in forms:
        for cut in cut_settings:
            suffix = f"{form}" + ("_lnc" if cut == "lnc" else "")
            headers.append(f"time_{suffix}")
    headers.append("status")

    rows = []
    for path in case_paths:
        name = path.stem
        gaps: list[str] = []
        times: list[str] = []
        status = "ok"
        try:
            net = _load_case(str(path))
            if args.obbt:
                bs = obbt_mod.tighten(
                    net, obbt_mod.ObbtOptions(rounds=args.obbt_rounds, tol=args.obbt_tol)
                )
                net = bs.apply(net)
            lb = ac_objs.get(name)
            if lb is None:
                try:
                    pt = acval.newton_power_flow(net)
                    if acval.check_feasible(net, pt).feasible:
                        lb = _point_objective(net, pt, args.objective)
                except (acval.PowerFlowError, NetworkError):
                    lb = None
            for form in forms:
                for cut in cut_settings:
                    res, wall = _solve_one(net, form, cut, args.objective,
                                           args.solver_tol, args.max_iter)
                    if res.status == "optimal" and lb is not None:
                        gaps.append(f"{acval.gap(res.objective, lb):.4f}")
                    elif res.status == "optimal":
                        gaps.append("")
                    else:
                        gaps.append("")
                        status = f"{form}+{cut}:{res.status}"
                    times.append(f"{wall:.4f}")
        except (MatpowerParseError, NetworkError, OSError, ValueError) as exc:
            status = f"error: {exc}"
            gaps = [""] * (len(forms) * len(cut_settings))
            times = [""] * (len(forms) * len(cut_settings))
        rows.append([name, *gaps, *times, status])

    with open(args.table, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        writer.writerows(rows)
    print(f"wrote {len(rows)} case rows to {args.table}")
    return EXIT_OK


def cmd_obbt(args: argparse.Namespace) -> int:
    net = _load_case(args.case)
    bs = obbt_mod.tighten(
        net,
        obbt_mod.ObbtOptions(
            rounds=args.rounds, tol=args.tol, workers=args.workers,
            solver_tol=args.solver_tol, solver_max_iter=args.max_iter,
        ),
    )
    text = bs.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    print(
        f"{net.name}: {bs.rounds} rounds, {bs.solves} subproblem solves, "
        f"{bs.wall_time:.2f}s",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_pf(args: argparse.Namespace) -> int:
    net = _load_case(args.case)
    try:
        pt = acval.newton_power_flow(net, tol=args.tol)
    except acval.PowerFlowError as exc:
        print(json.dumps({"error": str(exc), "mismatch": exc.mismatch}), file=sys.stderr)
        return EXIT_SOLVER
    text = pt.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    net = _load_case(args.case)
    pt = acval.AcPoint.from_json(Path(args.point).read_text())
    report = acval.check_feasible(net, pt, tol=args.tol)
    print(report.to_json())
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    net = _load_case(args.case)
    text = network_to_json(net)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="opfrelax",
        description="Convex relaxations of AC optimal power flow with lifted nonlinear cuts",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def add_solver_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--solver-tol", type=float, default=1e-8)
        p.add_argument("--max-iter", type=int, default=200)

    p = sub.add_parser("solve", help="build and solve one relaxation")
    p.add_argument("--case", required=True)
    p.add_argument("--form", choices=["soc", "cdf", "nf"], required=True)
    p.add_argument("--cuts", choices=["none", "lnc"], default="none")
    p.add_argument("--bounds", help="BoundsSet JSON from the obbt command")
    p.add_argument("--objective", choices=["maxgen", "mincost"], default="maxgen")
    p.add_argument("--ac-obj", type=float, help="AC-feasible objective for gap reporting")
    p.add_argument("--out", help="write the run record JSON here")
    add_solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="gap/runtime table over a case directory")
    p.add_argument("--cases", required=True)
    p.add_argument("--forms", default="soc,cdf,nf")
    p.add_argument("--cuts", choices=["none", "lnc", "both"], default="both")
    p.add_argument("--obbt", action="store_true")
    p.add_argument("--obbt-rounds", type=int, default=2)
    p.add_argument("--obbt-tol", type=float, default=1e-3)
    p.add_argument("--objective", choices=["maxgen", "mincost"], default="maxgen")
    p.add_argument("--table", required=True)
    p.add_argument("--ac-obj-file", help="JSON {case name: AC objective}")
    add_solver_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("obbt", help="tighten voltage/angle bounds")
    p.add_argument("--case", required=True)
    p.add_argument("--rounds", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    add_solver_flags(p)
    p.set_defaults(func=cmd_obbt)

    p = sub.add_parser("pf", help="Newton power flow at the case dispatch")
    p.add_argument("--case", required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pf)

    p = sub.add_parser("check", help="AC-feasibility report for a point")
    p.add_argument("--case", required=True)
    p.add_argument("--point", required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("export", help="canonical network JSON for a case")
    p.add_argument("--case", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)

    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (MatpowerParseError, NetworkError, FileNotFoundError, ValueError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())

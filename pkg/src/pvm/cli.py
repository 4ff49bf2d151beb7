"""Command-line driver.

    pvm solve PROBLEM.json [--t0 T] [--trace out.csv] [--json]
    pvm bench warmstart|recover|infeasible [--csv out.csv] [--seed N]
    pvm emit mpc OUT.json | pvm emit infeasible-family --emit-dir DIR

Exit codes: 0 Optimal or SuboptimalFeasible, 1 input/file error,
2 Infeasible, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__, bench
from .mpc import MpcSpec, benchmark_scale, build_infeasible_family, build_mpc
from .problem import ProblemFormatError, SolverSettings, load_problem, save_problem
from .solver import OuterRecord, SolveReport, Solver, Status

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_FAILURE = 3


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _settings_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    g = parent.add_argument_group("solver settings")
    g.add_argument("--eps-opt", type=float, help="optimality tolerance (default 1e-4)")
    g.add_argument("--eps-con", type=float, help="feasibility tolerance on r (default 1e-8)")
    g.add_argument("--sigma0", type=float, help="initial proximal weight (default 1e4)")
    g.add_argument("--delta0", type=float, help="initial inner tolerance (default 1e-2)")
    g.add_argument("--max-outer", type=int, help="outer iteration cap (default 50)")
    g.add_argument("-v", "--verbose", action="store_true", help="log one line per outer iteration")
    return parent


def settings_from_args(args: argparse.Namespace) -> SolverSettings:
    overrides = {
        "eps_opt": args.eps_opt,
        "eps_con": args.eps_con,
        "sigma0": args.sigma0,
        "delta0": args.delta0,
        "max_outer": args.max_outer,
        "t0": getattr(args, "t0", None),
    }
    kw = {k: v for k, v in overrides.items() if v is not None}
    if args.verbose:
        kw["verbose"] = True
    return SolverSettings(**kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pvm", description="Proximal Value Method QP/LP solver")
    parser.add_argument("--version", action="version", version=f"pvm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    parent = _settings_parent()

    p = sub.add_parser("solve", parents=[parent], help="solve a problem file")
    p.add_argument("problem", type=Path)
    p.add_argument("--t0", type=float, help="lower bound on the optimal cost (starting level)")
    p.add_argument("--trace", type=Path, help="write per-outer-iteration records as CSV")
    p.add_argument("--json", action="store_true", help="print the full report as JSON")
    p.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run a benchmark experiment")
    bsub = b.add_subparsers(dest="experiment", required=True)

    w = bsub.add_parser("warmstart", parents=[parent], help="warm-start grid over (t0, epsilon)")
    w.add_argument("--t0-values", type=_floats, default=list(bench.ExperimentGrid.t0_values))
    w.add_argument("--eps-values", type=_floats, default=list(bench.ExperimentGrid.epsilon_values))
    w.add_argument("--trials", type=int, default=bench.ExperimentGrid.trials_per_cell)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--csv", type=Path)
    w.set_defaults(func=cmd_bench_warmstart)

    r = bsub.add_parser("recover", parents=[parent], help="feasibility recovery at levels t > t*")
    r.add_argument("--t-values", type=_floats, help="levels (default: t* * 1.02^(i+1), i < 20)")
    r.add_argument("--eps-values", type=_floats, default=[1e-1, 1e-2, 1e-3])
    r.add_argument("--trials", type=int, default=11)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--csv", type=Path)
    r.set_defaults(func=cmd_bench_recover)

    i = bsub.add_parser("infeasible", parents=[parent], help="infeasibility detection on 72 instances")
    i.add_argument("--seed", type=int, default=0, help="recorded only; cold starts are deterministic")
    i.add_argument("--csv", type=Path)
    i.set_defaults(func=cmd_bench_infeasible)

    e = sub.add_parser("emit", help="write benchmark problems as JSON files")
    esub = e.add_subparsers(dest="what", required=True)
    m = esub.add_parser("mpc", help="the MPC instance")
    m.add_argument("output", type=Path)
    m.add_argument("--horizon", type=int, default=MpcSpec.horizon)
    m.add_argument("--benchmark-scale", action="store_true",
                   help="scale the objective so the optimal value is the benchmark one")
    m.set_defaults(func=cmd_emit_mpc)
    f = esub.add_parser("infeasible-family", help="all 72 infeasible instances")
    f.add_argument("--emit-dir", type=Path, required=True)
    f.set_defaults(func=cmd_emit_family)
    return parser


# --- solve -------------------------------------------------------------------


def exit_code(status: Status) -> int:
    if status in (Status.OPTIMAL, Status.SUBOPTIMAL_FEASIBLE):
        return EXIT_OK
    if status is Status.INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_FAILURE


def summary_line(rep: SolveReport) -> str:
    if rep.status is Status.INFEASIBLE:
        return f"Infeasible M={rep.M_estimate:.6g}"
    return f"{rep.status.value} t={rep.t_final:.4f}"


def write_trace(rep: SolveReport, path: Path) -> None:
    fields = [f.name for f in dataclasses.fields(OuterRecord)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(fields)
        for rec in rep.trace:
            out.writerow([bench.format_value(getattr(rec, name)) for name in fields])


def cmd_solve(args: argparse.Namespace) -> int:
    try:
        prob = load_problem(args.problem)
    except (OSError, ProblemFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        settings = settings_from_args(args)
        rep = Solver(prob, settings).solve()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.trace is not None:
        write_trace(rep, args.trace)
    if args.json:
        print(json.dumps(rep.to_dict(), indent=2))
    else:
        print(summary_line(rep))
        print(f"newton={rep.cumulative_newton} outer={rep.outer_iterations}")
    return exit_code(rep.status)


# --- bench -------------------------------------------------------------------


def _emit_table(table: bench.BenchTable, path: Path | None) -> None:
    if path is not None:
        bench.write_csv(table, path)
    else:
        sys.stdout.write(bench.render_csv(table))


def cmd_bench_warmstart(args: argparse.Namespace) -> int:
    grid = bench.ExperimentGrid(tuple(args.t0_values), tuple(args.eps_values), args.trials, args.seed)
    table = bench.warmstart(grid, settings_from_args(args))
    _emit_table(table, args.csv)
    reported = ", ".join(f"{k} {v}" for k, v in bench.REPORTED_COLD_START.items())
    print(f"# t* = {table.meta['t_star']:.10g}; reported interior-point iterations: {reported}",
          file=sys.stderr)
    return EXIT_OK if sum(table.column("failures")) == 0 else EXIT_FAILURE


def cmd_bench_recover(args: argparse.Namespace) -> int:
    table = bench.recover(args.eps_values, args.t_values, args.trials, args.seed, settings=settings_from_args(args))
    _emit_table(table, args.csv)
    return EXIT_OK if sum(table.column("failures")) == 0 else EXIT_FAILURE


def cmd_bench_infeasible(args: argparse.Namespace) -> int:
    table = bench.infeasible(settings_from_args(args))
    table.seed = args.seed
    if args.csv is not None:
        bench.write_csv(table, args.csv)
    counts = table.column("newton")
    statuses = table.column("status")
    wrong = sum(s != Status.INFEASIBLE.value for s in statuses)
    lo, hi, med = bench.summary_counts(counts)
    print(f"{'Solver':<18}{'Min':>6}{'Max':>6}{'Median':>8}")
    for name, (a, b, c) in bench.REPORTED_INFEASIBLE.items():
        print(f"{name:<18}{a:>6.1f}{b:>6.1f}{c:>8.1f}")
    print(f"{'PVM (this run)':<18}{lo:>6.1f}{hi:>6.1f}{med:>8.1f}")
    print(f"classified Infeasible: {len(statuses) - wrong}/{len(statuses)}")
    return EXIT_OK if wrong == 0 else EXIT_FAILURE


# --- emit --------------------------------------------------------------------


def cmd_emit_mpc(args: argparse.Namespace) -> int:
    scale = benchmark_scale() if args.benchmark_scale else 1.0
    prob = build_mpc(MpcSpec(horizon=args.horizon, objective_scale=scale), name="mpc")
    save_problem(prob, args.output)
    print(f"wrote {args.output} (n={prob.n}, m={prob.m})")
    return EXIT_OK


def cmd_emit_family(args: argparse.Namespace) -> int:
    args.emit_dir.mkdir(parents=True, exist_ok=True)
    family = build_infeasible_family()
    for prob in family:
        save_problem(prob, args.emit_dir / f"{prob.name}.json")
    print(f"wrote {len(family)} problems to {args.emit_dir}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

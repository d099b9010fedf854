"""Command-line front end.

Subcommands: ``design-rhythm``, ``solve-milpo``, ``bilevel``, ``simulate``
and ``plot``. A scenario argument is either a scenario JSON file or one of
the bundled names ``toy`` and ``grid``. Outputs go to ``--out`` or, when
omitted, to ``$RHYTHMIC_OUTPUT_DIR`` (default ``rhythmic-out``).

Exit codes: 0 success, 2 parse error, 3 validation error, 4 solver
failure, 5 file IO failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import __version__
from .bilevel import VnsParams, bus_only_plan, run_bilevel
from .design import (PlanError, build_milp_o, complete_realization, evaluate_objective,
                     extract_plan, load_plan, save_plan, start_vector)
from .network import (ScenarioError, ScenarioParseError, conflict_pairs, grid_scenario,
                      load_scenario, toy_scenario)
from .plot import PlotError, plan_diagram, resolve_path, trajectory_diagram, write_svg
from .rhythm import (RhythmInfeasible, design_background_rhythm, rhythm_from_dict,
                     rhythm_from_times, rhythm_to_dict)
from .sim import (ControlScheme, VehicleRecord, demand_sweep, run_simulation, write_report_csv,
                  write_trajectory_csv)
from .solver import SolverError

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4, 5
OUTPUT_ENV = "RHYTHMIC_OUTPUT_DIR"
DEFAULT_OUTPUT = "rhythmic-out"
CONTROLS = ("rch", "tsc15", "tsc15-dbl", "tsc30", "tsc30-dbl")


class SolverFailure(RuntimeError):
    """A solve ended without a usable solution."""


# ----------------------------------------------------------------------
# shared helpers
# ----------------------------------------------------------------------
def _out_dir(args) -> Path:
    d = Path(args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _scenario(args, level=None):
    """Load the scenario, applying ``--omega`` and a demand level if given."""
    from .grid import set_demand_level

    name = args.scenario
    if name == "toy":
        s = toy_scenario(0.5 if level is None else level)
    elif name == "grid":
        s = grid_scenario(0.5 if level is None else level)
    else:
        s = load_scenario(name)
        if level is not None:
            s = set_demand_level(s, level)
    omega = getattr(args, "omega", None)
    if omega is not None:
        if not 0.0 <= omega <= 1.0:
            raise ScenarioError(f"omega must lie in [0, 1], got {omega}")
        s = s.with_params(omega=omega)
    return s


def _rhythm(s, args):
    path = getattr(args, "rhythm", None)
    if path:
        return rhythm_from_dict(s, json.loads(Path(path).read_text()))
    if conflict_pairs(s):
        return design_background_rhythm(s, backend=getattr(args, "backend", "highs"))
    return rhythm_from_times(s)


def _fmt_row(row: dict) -> str:
    cols = ["O_a_m", "O_a_opt", "dO_a", "O_b_m", "O_b_opt", "dO_b", "O_m", "O_opt", "dO"]
    head = " ".join(f"{c:>10}" for c in cols)
    vals = " ".join(f"{row[c]:>9.2%} " if c.startswith("d") else f"{row[c]:>10.2f}" for c in cols)
    return head + "\n" + vals


def _control(name: str, plan, rh) -> ControlScheme:
    if name == "rch":
        return ControlScheme.rch(plan, rh)
    phase = float(name[3:5])
    return ControlScheme.tsc(phase, dbl=name.endswith("-dbl"))


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------
def cmd_design_rhythm(args) -> int:
    s = _scenario(args)
    rh = _rhythm(s, args)
    out = _out_dir(args) / "rhythm.json"
    out.write_text(json.dumps(rhythm_to_dict(s, rh), indent=2, sort_keys=True) + "\n")
    print(f"rhythm objective {rh.objective:.2f}; {len(conflict_pairs(s))} conflict pairs")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_solve_milpo(args) -> int:
    s = _scenario(args, args.demand_level)
    rh = _rhythm(s, args)
    dm = build_milp_o(s, rh)
    x0 = None
    if args.warm_start > 0 and args.backend == "highs" and s.bus_lines:
        heur = run_bilevel(s, rh, VnsParams(max_iter=args.warm_start, backend=args.backend))
        x0 = start_vector(dm, heur.plan)
    sol = dm.solve(backend=args.backend, time_limit=args.time_limit, x0=x0)
    if sol.x.size == 0 or sol.status not in ("optimal", "iteration-limit"):
        raise SolverFailure(f"MILP-O ended with status {sol.status}")
    plan = extract_plan(dm, sol)
    bd = evaluate_objective(s, rh, plan, dm.omega)
    if sol.status != "optimal":
        print(f"warning: solver stopped with status {sol.status} (gap {sol.gap:.4g})",
              file=sys.stderr)
    out = _out_dir(args) / "plan.json"
    save_plan(plan, out, bd)
    print(_fmt_row(bd.table_row()))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_bilevel(args) -> int:
    s = _scenario(args, args.demand_level)
    rh = _rhythm(s, args)
    params = VnsParams(max_iter=args.iterations, seed=args.seed, backend=args.backend,
                       milp_time_limit=args.time_limit)
    res = run_bilevel(s, rh, params)
    d = _out_dir(args)
    save_plan(res.plan, d / "plan.json", res.breakdown)
    res.write_log(d / "iterations.csv")
    print(_fmt_row(res.breakdown.table_row()))
    print(f"LP-L {res.lp_objective:.2f}  MILP-L {res.milp_objective:.2f}  "
          f"iterations {len(res.log)}")
    print(f"wrote {d / 'plan.json'} and {d / 'iterations.csv'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    s = _scenario(args)
    rh = _rhythm(s, args)
    controls = []
    for name in args.controls.split(","):
        if name not in CONTROLS:
            raise ScenarioError(f"unknown control {name!r}; choose from {', '.join(CONTROLS)}")
        controls.append(name)
    plan = None
    if "rch" in controls:
        plan = load_plan(args.plan) if args.plan else bus_only_plan(s, rh)
        plan = complete_realization(s, rh, plan)
    schemes = [_control(c, plan, rh) for c in controls]
    d = _out_dir(args)
    if args.trajectories:
        reports = [run_simulation(s, c, lv, args.duration, args.seed, args.repetitions,
                                  keep_trajectories=True)
                   for c in schemes for lv in args.levels]
        for r in reports:
            write_trajectory_csv(r.trajectories, d / f"trajectories-{r.control}-{r.demand_level:g}.csv")
    else:
        reports = demand_sweep(s, schemes, args.levels, args.duration, args.seed, args.repetitions)
    write_report_csv(reports, d / "report.csv")
    for r in reports:
        print(f"{r.control:>18} level {r.demand_level:<5g} car {r.mean_car_time:8.1f} s  "
              f"bus {r.mean_bus_time:8.1f} s  throughput {r.throughput:8.0f} veh/h")
    print(f"wrote {d / 'report.csv'}")
    return EXIT_OK


def _read_trajectories(path) -> list[VehicleRecord]:
    out = []
    with Path(path).open() as fh:
        for row in csv.DictReader(fh):
            out.append(VehicleRecord(
                int(row["vehicle"]), row["kind"], int(row["group"]),
                tuple(int(x) for x in row["path"].split()), float(row["appear"]),
                [float(x) for x in row["node_times"].split()], [],
                float(row["exit"]) if row["exit"] else None))
    return out


def cmd_plot(args) -> int:
    s = _scenario(args)
    d = _out_dir(args)
    src = Path(args.input)
    if src.suffix == ".csv":
        records = _read_trajectories(src)
        rh = None
    else:
        plan = load_plan(src)
        rh = _rhythm(s, args)
    written = []
    for sel in args.path:
        path = resolve_path(s, sel)
        title = f"{s.name} {sel}"
        if rh is None:
            svg = trajectory_diagram(s, records, path, title=title)
        else:
            svg = plan_diagram(s, rh, plan, path, cycles=args.cycles, title=title)
        written.append(write_svg(svg, d / f"{src.stem}-{sel.replace(':', '_')}.svg"))
    for w in written:
        print(f"wrote {w}")
    return EXIT_OK


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rhythmic", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, omega=True):
        p.add_argument("scenario", help="scenario JSON file, or 'toy' / 'grid'")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or {DEFAULT_OUTPUT})")
        p.add_argument("--rhythm", help="rhythm JSON from design-rhythm (designed when omitted)")
        p.add_argument("--backend", choices=("highs", "bnb"), default="highs")
        if omega:
            p.add_argument("--omega", type=float, help="bus weight in [0, 1]")

    p = sub.add_parser("design-rhythm", help="design the background rhythm")
    common(p, omega=False)
    p.set_defaults(func=cmd_design_rhythm)

    p = sub.add_parser("solve-milpo", help="solve the joint design model exactly")
    common(p)
    p.add_argument("--demand-level", type=float, help="demand as a fraction of admissible traffic")
    p.add_argument("--time-limit", type=float, help="solver time limit in seconds")
    p.add_argument("--warm-start", type=int, default=2000, metavar="K",
                   help="bilevel iterations for the initial incumbent (0 disables)")
    p.set_defaults(func=cmd_solve_milpo)

    p = sub.add_parser("bilevel", help="run the bilevel bus-itinerary heuristic")
    common(p)
    p.add_argument("--demand-level", type=float, help="demand as a fraction of admissible traffic")
    p.add_argument("--iterations", type=int, default=2000, help="local-search iterations K")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-limit", type=float, help="time limit of the final exact solve")
    p.set_defaults(func=cmd_bilevel)

    p = sub.add_parser("simulate", help="simulate control schemes over demand levels")
    common(p, omega=False)
    p.add_argument("--plan", help="plan JSON for rch (bus-only plan when omitted)")
    p.add_argument("--controls", default="rch,tsc15,tsc15-dbl,tsc30,tsc30-dbl",
                   help=f"comma-separated subset of {', '.join(CONTROLS)}")
    p.add_argument("--levels", type=_floats, default=[0.1, 0.4, 0.9],
                   help="comma-separated demand levels")
    p.add_argument("--duration", type=float, default=3600.0, help="simulated seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--trajectories", action="store_true", help="also write trajectory logs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plot", help="time-space diagram of a plan or trajectory log")
    common(p, omega=False)
    p.add_argument("input", help="plan JSON or trajectory CSV")
    p.add_argument("--path", action="append", required=True,
                   help="'w:r' (demand w, candidate path r) or 'bus:<line>'; repeatable")
    p.add_argument("--cycles", type=int, default=2, help="RC-H cycles shown for plans")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioParseError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: cannot parse input: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (SolverError, SolverFailure, RhythmInfeasible) as exc:
        print(f"error: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ScenarioError, PlanError, PlotError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

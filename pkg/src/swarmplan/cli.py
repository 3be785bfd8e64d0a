"""Command-line front end.

Subcommands: ``plan`` (run a planner on a scenario and write artifacts),
``check`` (independently verify a trajectory CSV against a scenario),
``compare`` (run both planners and report the fuel gap), and ``bench``
(emit a generated benchmark scenario as JSON).

Exit codes: 0 for success and feasible outcomes, 2 for well-formed runs
with an infeasible or unconverged outcome, 1 for usage, input, or solver
errors.

The PLANNER_THREADS environment variable caps worker parallelism. The
planners themselves are single-threaded, so any value >= 1 is honored
trivially; the value is also forwarded to the common BLAS thread-count
variables for the benefit of freshly spawned interpreters.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dca import DcaConfig, PlanStatus, plan_dca, write_iteration_log
from .dynamics import TrajectoryFormatError, read_trajectory_csv, write_trajectory_csv
from .micp import EnumerationGuardError, branch_and_bound, build_cubic_micp
from .scenario import (GeometryError, Scenario, ScenarioError, VehicleSpec,
                       dumps_scenario, generate_benchmark, load_scenario)
from .socp import VariableMap
from .solver import SolverStatus
from .verify import check_feasibility, evaluate_objective, write_distance_csv

__all__ = ["main"]

_BINARY_GUARD_DEFAULT = 400


def _apply_thread_env() -> None:
    raw = os.environ.get("PLANNER_THREADS")
    if raw is None:
        return
    try:
        threads = int(raw)
        if threads < 1:
            raise ValueError
    except ValueError:
        print(f"warning: ignoring invalid PLANNER_THREADS={raw!r}", file=sys.stderr)
        return
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))


def _json_safe(value):
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, np.floating):
        return _json_safe(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value


def _load_scenario_path(path: str) -> Scenario:
    with open(path) as fh:
        return load_scenario(fh)


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _svg_chart(path, title: str, series: List[Tuple[str, Sequence[float], Sequence[float]]],
               x_label: str, y_label: str, hline: Optional[float] = None) -> None:
    """Tiny dependency-free SVG line chart, enough for run diagnostics."""
    width, height = 640, 360
    left, right, top, bottom = 60, 20, 36, 44
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys if math.isfinite(y)]
    if hline is not None:
        ys_all.append(hline)
    if not xs_all or not ys_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    pad = 0.05 * (y_hi - y_lo) or max(1e-9, 0.1 * abs(y_hi) or 1.0)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x):
        return left + (x - x_lo) / (x_hi - x_lo) * (width - left - right)

    def sy(y):
        return height - bottom - (y - y_lo) / (y_hi - y_lo) * (height - top - bottom)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-size="13">{title}</text>']
    for tick in range(5):
        fx = x_lo + tick * (x_hi - x_lo) / 4
        fy = y_lo + tick * (y_hi - y_lo) / 4
        parts.append(f'<line x1="{sx(fx):.1f}" y1="{height - bottom}" x2="{sx(fx):.1f}" '
                     f'y2="{height - bottom + 4}" stroke="black"/>')
        parts.append(f'<text x="{sx(fx):.1f}" y="{height - bottom + 16}" '
                     f'text-anchor="middle">{fx:g}</text>')
        parts.append(f'<line x1="{left - 4}" y1="{sy(fy):.1f}" x2="{left}" '
                     f'y2="{sy(fy):.1f}" stroke="black"/>')
        parts.append(f'<text x="{left - 8}" y="{sy(fy) + 4:.1f}" text-anchor="end">{fy:.4g}</text>')
    parts.append(f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" '
                 f'y2="{height - bottom}" stroke="black"/>')
    parts.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>')
    parts.append(f'<text x="{(width + left - right) / 2:.0f}" y="{height - 8}" '
                 f'text-anchor="middle">{x_label}</text>')
    parts.append(f'<text x="16" y="{(height + top - bottom) / 2:.0f}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {(height + top - bottom) / 2:.0f})">{y_label}</text>')
    if hline is not None:
        parts.append(f'<line x1="{left}" y1="{sy(hline):.1f}" x2="{width - right}" '
                     f'y2="{sy(hline):.1f}" stroke="#888" stroke-dasharray="5,4"/>')
    for pos, (label, xs, ys) in enumerate(series):
        color = _PALETTE[pos % len(_PALETTE)]
        points = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys)
                          if math.isfinite(y))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{points}"/>')
        parts.append(f'<text x="{width - right - 6}" y="{top + 14 + 14 * pos}" '
                     f'text-anchor="end" fill="{color}">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


def _min_distance_series(trajectory) -> Tuple[List[float], List[float]]:
    pos = trajectory.states[:, :, :3]
    n = trajectory.n_vehicles
    xs, ys = [], []
    for k in range(trajectory.horizon):
        best = min(float(np.linalg.norm(pos[i, k] - pos[j, k]))
                   for i in range(n) for j in range(i + 1, n))
        xs.append(float(k + 1))
        ys.append(best)
    return xs, ys


def _dca_config_from_args(args) -> DcaConfig:
    kwargs = {}
    for attr, name in (("tau0", "tau0"), ("mu", "mu"), ("tau_max", "tau_max"),
                       ("epsilon", "epsilon"), ("max_iters", "max_iters"),
                       ("slack_tol", "slack_tol"), ("anchor_policy", "anchor_policy"),
                       ("keep_last", "keep_last"), ("init_policy", "init_policy")):
        value = getattr(args, attr, None)
        if value is not None:
            kwargs[name] = value
    return DcaConfig(**kwargs)


def _write_common_outputs(out: Path, scenario: Scenario, trajectory, svg: bool) -> dict:
    write_trajectory_csv(trajectory, out / "trajectory.csv")
    if scenario.n_vehicles >= 2:
        write_distance_csv(trajectory, out / "distances.csv")
        if svg:
            xs, ys = _min_distance_series(trajectory)
            _svg_chart(out / "distances.svg", "Minimum pairwise distance",
                       [("min distance", xs, ys)], "step", "distance",
                       hline=scenario.safety_distance)
    report = check_feasibility(scenario, trajectory)
    (out / "feasibility.json").write_text(report.to_json() + "\n")
    return {"feasible_check": json.loads(report.to_json()),
            "objective": evaluate_objective(scenario, trajectory)}


def _cmd_plan(args) -> int:
    try:
        scenario = _load_scenario_path(args.scenario)
    except (OSError, ScenarioError) as exc:
        print(f"error: cannot load scenario: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.method == "dca":
        try:
            config = _dca_config_from_args(args)
        except ValueError as exc:
            print(f"error: bad planner configuration: {exc}", file=sys.stderr)
            return 1
        started = time.perf_counter()
        result = plan_dca(scenario, config)
        wall = time.perf_counter() - started
        write_iteration_log(result.log, out / "iterations.csv")
        if args.svg and result.log:
            xs = [float(r.m) for r in result.log]
            _svg_chart(out / "convergence.svg", "Penalized objective",
                       [("f0 + tau*slacks", xs,
                         [r.objective_f0 + r.penalty_term for r in result.log])],
                       "iteration", "objective")
            _svg_chart(out / "slack.svg", "Worst collision slack",
                       [("max slack", xs, [r.max_slack for r in result.log])],
                       "iteration", "slack")
        summary = {
            "method": "dca",
            "status": result.status.value,
            "iterations": result.iterations,
            "wall_time_s": wall,
            "min_separation": result.min_separation,
        }
        if result.log:
            final = result.log[-1]
            summary["final"] = {"tau": final.tau, "delta": final.delta,
                                "max_slack": final.max_slack,
                                "objective_f0": final.objective_f0}
        summary.update(_write_common_outputs(out, scenario, result.trajectory, args.svg))
        (out / "summary.json").write_text(json.dumps(_json_safe(summary), indent=2) + "\n")
        print(f"dca: {result.status.value} after {result.iterations} iterations "
              f"({wall:.1f}s), outputs in {out}")
        if result.status is PlanStatus.CONVERGED_FEASIBLE:
            return 0
        if result.status is PlanStatus.SUBPROBLEM_FAILURE:
            print("error: a conic subproblem failed; see iterations.csv", file=sys.stderr)
            return 1
        print(f"plan did not reach a feasible solution: {result.status.value}",
              file=sys.stderr)
        return 2

    # MICP path; refuse instances beyond the binary budget before building.
    n_binaries = scenario.pair_count * scenario.horizon * 6
    if n_binaries > args.max_binaries:
        print(f"error: instance needs {n_binaries} binaries, above the guard "
              f"of {args.max_binaries}; raise --max-binaries only for small fleets",
              file=sys.stderr)
        return 1
    program, disjunctions, _ = build_cubic_micp(scenario)
    started = time.perf_counter()
    bnb = branch_and_bound(program, disjunctions, node_limit=args.node_limit)
    wall = time.perf_counter() - started
    with open(out / "nodes.csv", "w") as fh:
        fh.write("node,bound,depth,status\n")
        for entry in bnb.node_log:
            bound = "" if entry["bound"] is None else repr(entry["bound"])
            fh.write(f"{entry['node']},{bound},{entry['depth']},{entry['status']}\n")
    summary = {
        "method": "micp",
        "status": bnb.solution.status.value,
        "nodes": bnb.nodes,
        "bound": bnb.bound,
        "wall_time_s": wall,
    }
    if bnb.solution.primal is not None:
        vmap = VariableMap(n_vehicles=scenario.n_vehicles, horizon=scenario.horizon,
                           safety_distance=scenario.safety_distance)
        trajectory = vmap.decode(bnb.solution.primal)
        summary.update(_write_common_outputs(out, scenario, trajectory, args.svg))
    (out / "summary.json").write_text(json.dumps(_json_safe(summary), indent=2) + "\n")
    print(f"micp: {bnb.solution.status.value} after {bnb.nodes} nodes "
          f"({wall:.1f}s), outputs in {out}")
    if bnb.solution.status is SolverStatus.OPTIMAL:
        return 0
    if bnb.solution.status in (SolverStatus.INFEASIBLE, SolverStatus.ITERATION_LIMIT):
        print(f"micp search ended without a proven solution: "
              f"{bnb.solution.status.value}", file=sys.stderr)
        return 2
    print(f"error: micp search failed: {bnb.solution.message}", file=sys.stderr)
    return 1


def _cmd_check(args) -> int:
    try:
        scenario = _load_scenario_path(args.scenario)
    except (OSError, ScenarioError) as exc:
        print(f"error: cannot load scenario: {exc}", file=sys.stderr)
        return 1
    try:
        trajectory = read_trajectory_csv(args.trajectory)
        report = check_feasibility(scenario, trajectory, tol=args.tol)
    except (OSError, TrajectoryFormatError) as exc:
        print(f"error: cannot check trajectory: {exc}", file=sys.stderr)
        return 1
    print(report.to_json())
    return 0 if report.feasible else 2


def _cmd_compare(args) -> int:
    try:
        scenario = _load_scenario_path(args.scenario)
    except (OSError, ScenarioError) as exc:
        print(f"error: cannot load scenario: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    dca_args = argparse.Namespace(**{**vars(args), "method": "dca",
                                     "out": str(out / "dca"), "svg": args.svg})
    code_dca = _cmd_plan(dca_args)
    micp_args = argparse.Namespace(**{**vars(args), "method": "micp",
                                      "out": str(out / "micp"), "svg": args.svg})
    code_micp = _cmd_plan(micp_args)

    summary = {"dca_exit": code_dca, "micp_exit": code_micp}
    for name in ("dca", "micp"):
        path = out / name / "summary.json"
        if path.exists():
            doc = json.loads(path.read_text())
            summary[name] = {"status": doc.get("status"),
                             "objective": doc.get("objective")}
    dca_fuel = (summary.get("dca", {}).get("objective") or {}).get("fuel")
    micp_fuel = (summary.get("micp", {}).get("objective") or {}).get("fuel")
    if dca_fuel is not None and micp_fuel is not None:
        summary["fuel_gap_micp_minus_dca"] = micp_fuel - dca_fuel
    (out / "compare.json").write_text(json.dumps(_json_safe(summary), indent=2) + "\n")
    print(f"comparison written to {out / 'compare.json'}")
    if code_dca == 0 and code_micp == 0:
        return 0
    return max(code_dca, code_micp)


def _cmd_bench(args) -> int:
    template = VehicleSpec(
        mass=args.mass, start_position=(0, 0, 0), start_velocity=(0, 0, 0),
        goal_position=(0, 0, 0), goal_velocity=(0, 0, 0), goal_force=(0, 0, 0),
        v_max=args.v_max, f_max=args.f_max)
    try:
        base = Scenario(vehicles=(template,), horizon=args.horizon, dt=args.dt,
                        safety_distance=args.safety_distance,
                        force_weight=args.force_weight,
                        goal_weight_slope=args.goal_weight_slope)
        scenario = generate_benchmark(args.vehicles, pattern=args.pattern,
                                      seed=args.seed, base=base, radius=args.radius)
    except (ScenarioError, GeometryError) as exc:
        print(f"error: cannot generate benchmark: {exc}", file=sys.stderr)
        return 1
    text = dumps_scenario(scenario)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"scenario written to {args.out}")
    else:
        print(text)
    return 0


def _add_dca_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tau0", type=float, default=None, help="initial penalty weight")
    parser.add_argument("--mu", type=float, default=None, help="penalty escalation factor (> 1)")
    parser.add_argument("--tau-max", dest="tau_max", type=float, default=None,
                        help="penalty ceiling")
    parser.add_argument("--epsilon", type=float, default=None,
                        help="stopping threshold on the penalized objective change")
    parser.add_argument("--max-iters", dest="max_iters", type=int, default=None,
                        help="outer iteration budget")
    parser.add_argument("--slack-tol", dest="slack_tol", type=float, default=None,
                        help="slack magnitude accepted as collision-free")
    parser.add_argument("--anchor-policy", dest="anchor_policy",
                        choices=["accumulate_all", "keep_last_m"], default=None)
    parser.add_argument("--keep-last", dest="keep_last", type=int, default=None,
                        help="anchor window for keep_last_m")
    parser.add_argument("--init-policy", dest="init_policy",
                        choices=["straight_line", "hover_then_jump"], default=None)


def _add_micp_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--max-binaries", dest="max_binaries", type=int,
                        default=_BINARY_GUARD_DEFAULT,
                        help="refuse micp instances with more binary columns than this")
    parser.add_argument("--node-limit", dest="node_limit", type=int, default=50_000)


def main(argv: Optional[Sequence[str]] = None) -> int:
    _apply_thread_env()
    parser = argparse.ArgumentParser(
        prog="swarmplan",
        description="Plan and check collision-free trajectories for vehicle fleets.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="run a planner on a scenario JSON")
    p_plan.add_argument("scenario", help="scenario JSON path")
    p_plan.add_argument("--method", choices=["dca", "micp"], default="dca")
    p_plan.add_argument("--out", required=True, help="output directory")
    p_plan.add_argument("--svg", action="store_true", help="also write SVG diagnostics")
    _add_dca_flags(p_plan)
    _add_micp_flags(p_plan)
    p_plan.set_defaults(func=_cmd_plan)

    p_check = sub.add_parser("check", help="verify a trajectory CSV against a scenario")
    p_check.add_argument("scenario")
    p_check.add_argument("trajectory", help="trajectory CSV path")
    p_check.add_argument("--tol", type=float, default=1e-4)
    p_check.set_defaults(func=_cmd_check)

    p_cmp = sub.add_parser("compare", help="run both planners and report the fuel gap")
    p_cmp.add_argument("scenario")
    p_cmp.add_argument("--out", required=True)
    p_cmp.add_argument("--svg", action="store_true")
    _add_dca_flags(p_cmp)
    _add_micp_flags(p_cmp)
    p_cmp.set_defaults(func=_cmd_compare)

    p_bench = sub.add_parser("bench", help="generate a benchmark scenario JSON")
    p_bench.add_argument("--vehicles", type=int, required=True)
    p_bench.add_argument("--pattern", choices=["circle_swap", "random_box"],
                         default="circle_swap")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--radius", type=float, default=None)
    p_bench.add_argument("--out", default=None, help="output path (default stdout)")
    p_bench.add_argument("--horizon", type=int, default=30)
    p_bench.add_argument("--dt", type=float, default=1.0)
    p_bench.add_argument("--safety-distance", dest="safety_distance", type=float, default=5.0)
    p_bench.add_argument("--force-weight", dest="force_weight", type=float, default=1.0)
    p_bench.add_argument("--goal-weight-slope", dest="goal_weight_slope", type=float,
                         default=0.05)
    p_bench.add_argument("--mass", type=float, default=1.0)
    p_bench.add_argument("--v-max", dest="v_max", type=float, default=10.0)
    p_bench.add_argument("--f-max", dest="f_max", type=float, default=10.0)
    p_bench.set_defaults(func=_cmd_bench)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EnumerationGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

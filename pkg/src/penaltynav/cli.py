"""Command-line entry point: ``penaltynav {solve,simulate,plot,grid} ...``.

Exit codes: 0 success, 1 solver or mission failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

import numpy as np

from .expr import EvaluationError
from .kernels import BACKEND
from .mission import astar, extract_waypoints, rasterize, run_mission
from .objective import max_obstacle_violation, psi_matrix, trajectory
from .penalty import penalty_solve
from .plot import emit_plot
from .scenario import ScenarioError, bundled_scenarios, load_scenario
from .trajlog import TrajectoryFormatError, TrajectoryRow, read_trajectory, write_trajectory

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse already exits with status 2 on usage errors; keep that, but make it explicit
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--tol", type=float, metavar="TAU", help="final inner tolerance tau*")
    p.add_argument("--eta", type=float, metavar="ETA", help="obstacle cost tolerance eta*")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="penaltynav", description="Penalty-method NMPC for obstacle avoidance.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="one open-loop penalty solve from the start state")
    p.add_argument("scenario")
    p.add_argument("--out", help="write the predicted trajectory as CSV")
    _common(p)

    p = sub.add_parser("simulate", help="run the closed-loop mission")
    p.add_argument("scenario")
    p.add_argument("--out", help="write the trajectory log as CSV")
    p.add_argument("--max-steps", type=int, metavar="N", help="MPC step budget")
    _common(p)

    p = sub.add_parser("plot", help="render a scenario and trajectory log to SVG")
    p.add_argument("scenario")
    p.add_argument("log")
    p.add_argument("svg")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("grid", help="print the occupancy grid and the start-to-goal grid path")
    p.add_argument("scenario")
    p.add_argument("--quiet", action="store_true")

    sub.add_parser("list", help="list bundled scenarios")
    return parser


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "tol", None) is not None:
        out["tau_star"] = args.tol
    if getattr(args, "eta", None) is not None:
        out["eta_star"] = args.eta
    return out


def _say(args, *msg):
    if not getattr(args, "quiet", False):
        print(*msg)


def _cmd_solve(args) -> int:
    sc = load_scenario(args.scenario)
    cfg = sc.penalty_config(**_overrides(args))
    spec = sc.problem()
    out = penalty_solve(spec, None, np.zeros(spec.n_vars), cfg)
    last = out.reports[-1]
    states = trajectory(spec, out.controls)
    per_stage, _ = max_obstacle_violation(spec, out.controls)
    _say(args, f"scenario {sc.name} ({BACKEND} kernels)")
    _say(args, f"status {out.status}: violation {out.violation:.3e}, residual {out.residual:.3e}")
    _say(args, f"outer iterations {out.outer_iterations}, inner iterations {out.inner_iterations}, "
               f"{1e3 * out.wall_time:.1f} ms")
    _say(args, f"last inner solve: {last.status}, {last.iterations} iterations, gamma {last.gamma:.3e}")
    if args.out:
        U = out.controls.reshape(-1, 2)
        psi_t = psi_matrix(sc.obstacles, states[:, 0], states[:, 1]) if sc.obstacles else np.zeros((1, len(states)))
        psi_e = np.concatenate([[0.0], per_stage]) if sc.obstacles else np.zeros(len(states))
        rows = []
        for k, q in enumerate(states):
            u = U[k] if k < len(U) else (0.0, 0.0)
            rows.append(TrajectoryRow(k, k * sc.ts, *map(float, q), float(u[0]), float(u[1]),
                                      float(psi_t[:, k].max()), float(psi_e[k]), 0, 0, 0.0, False, -1,
                                      sc.goal.x, sc.goal.y))
        rows[0] = rows[0]._replace(inner_iterations=out.inner_iterations, outer_iterations=out.outer_iterations,
                                   solve_ms=1e3 * out.wall_time)
        write_trajectory(rows, args.out)
        _say(args, f"wrote {args.out}")
    return EXIT_OK if out.feasible else EXIT_FAILURE


def _cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    mo = {}
    if args.max_steps is not None:
        if args.max_steps < 1:
            print("penaltynav: error: --max-steps must be positive", file=sys.stderr)
            return EXIT_USAGE
        mo["max_mpc_steps"] = args.max_steps
    cfg = sc.penalty_config(**_overrides(args))

    def progress(rec):
        if rec.step % 25 == 0:
            print(f"  step {rec.step:4d}  x={rec.state.x:7.3f} y={rec.state.y:7.3f}  "
                  f"inner={rec.inner_iterations:4d}  {rec.solve_ms:7.2f} ms", flush=True)

    res = run_mission(sc.problem(), sc.obstacles, sc.mission_config(**mo), cfg,
                      on_step=None if args.quiet else progress)
    log = res.log
    peak = max(r.psi_true for r in log.records)
    _say(args, f"{sc.name}: {res.status} after {len(log) - 1} steps, distance to goal {res.distance_to_goal:.3f} m")
    _say(args, f"closed-loop cost {res.cost:.4f}, emergency stops {log.stops}, waypoints {len(log.waypoints)}, "
               f"peak true obstacle value {peak:.3g}")
    if args.out:
        write_trajectory(log, args.out)
        _say(args, f"wrote {args.out}")
    return EXIT_OK if res.reached and peak == 0.0 else EXIT_FAILURE


def _cmd_plot(args) -> int:
    sc = load_scenario(args.scenario)
    rows = read_trajectory(args.log)
    emit_plot(sc, rows, args.svg)
    _say(args, f"wrote {args.svg}")
    return EXIT_OK


def _cmd_grid(args) -> int:
    sc = load_scenario(args.scenario)
    m = sc.mission
    grid = rasterize(sc.enlarged_obstacles, m.workspace, m.grid_resolution)
    s = grid.nearest_free(grid.cell_of(sc.start.x, sc.start.y))
    g = grid.nearest_free(grid.cell_of(sc.goal.x, sc.goal.y))
    path = astar(grid, s, g) if s is not None and g is not None else None
    print(grid.to_text(path or ()))
    if path is None:
        print("no path")
        return EXIT_FAILURE
    print(f"path length {len(path) - 1} cells")
    for p in extract_waypoints(path, grid):
        print(f"waypoint {p.x:.3f} {p.y:.3f}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "list":
        for name in bundled_scenarios():
            print(name)
        return EXIT_OK
    handler = {"solve": _cmd_solve, "simulate": _cmd_simulate, "plot": _cmd_plot, "grid": _cmd_grid}[args.command]
    try:
        return handler(args)
    except (FileNotFoundError, IsADirectoryError, ScenarioError, TrajectoryFormatError) as exc:
        print(f"penaltynav: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EvaluationError, FloatingPointError) as exc:
        print(f"penaltynav: solver failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

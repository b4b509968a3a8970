"""Closed-loop MPC driver with emergency stops, stuck detection and grid-search waypoints."""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import VehicleState, rk4_step
from .objective import ProblemSpec, max_obstacle_violation, psi_matrix
from .obstacles import ObstacleSpec, Position
from .penalty import PenaltyConfig, PenaltyOutcome, penalty_solve, shift_warm_start

__all__ = [
    "Workspace",
    "MissionConfig",
    "OccupancyGrid",
    "StepRecord",
    "MissionLog",
    "MissionResult",
    "mpc_step",
    "emergency_stop_check",
    "stop_input",
    "stuck_detector",
    "rasterize",
    "astar",
    "path_length",
    "extract_waypoints",
    "run_mission",
    "closed_loop_cost",
    "REACHED",
    "MAX_STEPS",
    "NO_PATH",
]

REACHED = "reached"
MAX_STEPS = "max_steps"
NO_PATH = "no_path"

Cell = tuple[int, int]


@dataclass(frozen=True)
class Workspace:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        vals = (self.xmin, self.xmax, self.ymin, self.ymax)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("workspace bounds must be finite")
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(f"degenerate workspace {vals}")

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax


@dataclass(frozen=True)
class MissionConfig:
    goal: VehicleState
    workspace: Workspace
    goal_tolerance: float = 0.2
    max_mpc_steps: int = 500
    lookahead_stages: int = 3
    stuck_epsilon: float = 5e-3
    stuck_steps: int = 2
    grid_resolution: float = 0.1
    emergency_stop: bool = True
    graph_search: bool = True

    def __post_init__(self):
        object.__setattr__(self, "goal", VehicleState(*map(float, self.goal)))
        if not (self.goal_tolerance > 0 and self.stuck_epsilon > 0 and self.grid_resolution > 0):
            raise ValueError("tolerances and grid resolution must be positive")
        if self.max_mpc_steps < 1 or self.lookahead_stages < 1 or self.stuck_steps < 1:
            raise ValueError("step counts must be positive")
        if not self.workspace.contains(self.goal.x, self.goal.y):
            raise ValueError("goal lies outside the workspace")


# --------------------------------------------------------------------------
# single MPC step and the stop heuristic


def mpc_step(spec: ProblemSpec, mu, u_warm, config: PenaltyConfig | None = None):
    """Solve from ``spec.q0`` and apply the first input to the model.

    Returns ``(u_applied, q_next, outcome, (u_next, mu_next))`` where the last
    pair are the shifted warm starts for the following step.
    """
    outcome = penalty_solve(spec, mu, u_warm, config)
    u0 = outcome.controls[:2].copy()
    q_next = rk4_step(spec.model, spec.q0, u0, spec.ts)
    return u0, q_next, outcome, shift_warm_start(outcome.controls, outcome.mu)


def emergency_stop_check(outcome: PenaltyOutcome, spec: ProblemSpec, eta_star: float, lookahead: int = 3) -> bool:
    """True when some obstacle function exceeds ``eta_star`` at predicted stages 1..lookahead."""
    if spec.n_obstacles == 0:
        return False
    per_stage, _ = max_obstacle_violation(spec, outcome.controls)
    return bool(np.max(per_stage[:lookahead]) > eta_star)


def stop_input(spec: ProblemSpec, previous_input) -> np.ndarray:
    """Zero velocity; the bicycle keeps its steering angle."""
    if spec.model.kind == "bicycle":
        return np.array([0.0, float(previous_input[1])])
    return np.zeros(2)


def stuck_detector(positions: Sequence, eps: float, steps: int = 2) -> bool:
    """True iff each of the last ``steps`` displacements is shorter than ``eps``."""
    if len(positions) < steps + 1:
        return False
    p = np.asarray([tuple(q)[:2] for q in positions[-(steps + 1):]], dtype=float)
    d = np.hypot(*np.diff(p, axis=0).T)
    return bool(np.all(d < eps))


# --------------------------------------------------------------------------
# occupancy grid and graph search


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """``occupied[i, j]`` covers the cell with center ``origin + (i + 1/2, j + 1/2) * cell``."""

    origin: tuple[float, float]
    cell: float
    occupied: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupied.shape

    def center(self, c: Cell) -> Position:
        return Position(self.origin[0] + (c[0] + 0.5) * self.cell, self.origin[1] + (c[1] + 0.5) * self.cell)

    def cell_of(self, x: float, y: float) -> Cell:
        i = int(math.floor((x - self.origin[0]) / self.cell))
        j = int(math.floor((y - self.origin[1]) / self.cell))
        nx, ny = self.shape
        return min(max(i, 0), nx - 1), min(max(j, 0), ny - 1)

    def free(self, c: Cell) -> bool:
        nx, ny = self.shape
        return 0 <= c[0] < nx and 0 <= c[1] < ny and not self.occupied[c]

    def nearest_free(self, c: Cell) -> Cell | None:
        if self.free(c):
            return c
        free = np.argwhere(~self.occupied)
        if free.size == 0:
            return None
        d = (free[:, 0] - c[0]) ** 2 + (free[:, 1] - c[1]) ** 2
        return tuple(int(v) for v in free[int(np.argmin(d))])

    def to_text(self, path: Sequence[Cell] = ()) -> str:
        """Rows from top (largest y) to bottom; ``#`` occupied, ``*`` path."""
        marks = set(map(tuple, path))
        nx, ny = self.shape
        rows = []
        for j in range(ny - 1, -1, -1):
            rows.append("".join("*" if (i, j) in marks else ("#" if self.occupied[i, j] else ".") for i in range(nx)))
        return "\n".join(rows)


def rasterize(obstacles: Sequence[ObstacleSpec], workspace: Workspace, resolution: float) -> OccupancyGrid:
    """Mark each cell whose center lies strictly inside some obstacle."""
    if not resolution > 0:
        raise ValueError("grid resolution must be positive")
    nx = max(1, int(math.ceil((workspace.xmax - workspace.xmin) / resolution - 1e-9)))
    ny = max(1, int(math.ceil((workspace.ymax - workspace.ymin) / resolution - 1e-9)))
    xs = workspace.xmin + (np.arange(nx) + 0.5) * resolution
    ys = workspace.ymin + (np.arange(ny) + 0.5) * resolution
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    occ = np.zeros((nx, ny), dtype=bool)
    if obstacles:
        psi = psi_matrix(obstacles, X.ravel(), Y.ravel())
        occ = (psi > 0.0).any(axis=0).reshape(nx, ny)
    return OccupancyGrid((workspace.xmin, workspace.ymin), float(resolution), occ)


_MOVES = ((1, 0), (-1, 0), (0, 1), (0, -1))


def astar(grid: OccupancyGrid, start: Cell, goal: Cell) -> list[Cell] | None:
    """Shortest 4-connected path with unit edge costs, or ``None``.

    The Euclidean distance heuristic is consistent on this graph, so the
    first time the goal is popped its length is optimal.  Among shortest
    paths the one with fewest direction changes is returned, which keeps
    the extracted waypoint list short.
    """
    start, goal = tuple(start), tuple(goal)
    if not (grid.free(start) and grid.free(goal)):
        raise ValueError("start and goal cells must be free")
    if start == goal:
        return [start]

    def h(c):
        return math.hypot(c[0] - goal[0], c[1] - goal[1])

    # state = (cell, incoming move index); cost = (length, turns), compared lexicographically
    best: dict[tuple[Cell, int], tuple[int, int]] = {(start, -1): (0, 0)}
    parent: dict[tuple[Cell, int], tuple[Cell, int] | None] = {(start, -1): None}
    heap = [(h(start), 0, 0, start, -1)]
    closed = set()
    while heap:
        _, g, turns, cell, move = heapq.heappop(heap)
        state = (cell, move)
        if state in closed:
            continue
        closed.add(state)
        if cell == goal:
            path = []
            s = state
            while s is not None:
                path.append(s[0])
                s = parent[s]
            return path[::-1]
        for m, (dx, dy) in enumerate(_MOVES):
            nxt = (cell[0] + dx, cell[1] + dy)
            if not grid.free(nxt):
                continue
            cost = (g + 1, turns + (move != -1 and m != move))
            ns = (nxt, m)
            if ns in closed or best.get(ns, (math.inf, math.inf)) <= cost:
                continue
            best[ns] = cost
            parent[ns] = state
            heapq.heappush(heap, (cost[0] + h(nxt), cost[0], cost[1], nxt, m))
    return None


def path_length(path: Sequence[Cell] | None) -> int | None:
    return None if path is None else len(path) - 1


def extract_waypoints(path: Sequence[Cell], grid: OccupancyGrid | None = None) -> list[Position]:
    """Cells where the path switches between horizontal and vertical motion.

    Positions are cell centers when ``grid`` is given, cell indices otherwise.
    Start and goal are never included.
    """
    out = []
    for k in range(1, len(path) - 1):
        d0 = (path[k][0] - path[k - 1][0], path[k][1] - path[k - 1][1])
        d1 = (path[k + 1][0] - path[k][0], path[k + 1][1] - path[k][1])
        if d0 != d1:
            c = path[k]
            out.append(grid.center(c) if grid is not None else Position(float(c[0]), float(c[1])))
    return out


# --------------------------------------------------------------------------
# mission loop


@dataclass(frozen=True)
class StepRecord:
    step: int
    state: VehicleState
    control: tuple[float, float]
    psi_true: float
    psi_enlarged: float
    inner_iterations: int
    outer_iterations: int
    solve_ms: float
    solver_status: str
    stop: bool
    waypoint: int
    target: tuple[float, float]


@dataclass
class MissionLog:
    """Append-only record of a mission; one entry per executed step plus the final state."""

    ts: float
    records: list[StepRecord] = field(default_factory=list)
    waypoints: list[Position] = field(default_factory=list)
    searches: int = 0

    def append(self, rec: StepRecord):
        if self.records and rec.step != self.records[-1].step + 1:
            raise ValueError("records must be appended in step order")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def states(self) -> np.ndarray:
        return np.array([r.state for r in self.records], dtype=float).reshape(-1, 3)

    def controls(self) -> np.ndarray:
        return np.array([r.control for r in self.records], dtype=float).reshape(-1, 2)

    @property
    def stops(self) -> int:
        return sum(r.stop for r in self.records)


@dataclass
class MissionResult:
    status: str
    log: MissionLog
    distance_to_goal: float
    cost: float

    @property
    def reached(self) -> bool:
        return self.status == REACHED


def _max_psi(obstacles: Sequence[ObstacleSpec], x: float, y: float) -> float:
    if not obstacles:
        return 0.0
    return float(psi_matrix(obstacles, np.array([x]), np.array([y])).max())


def closed_loop_cost(spec: ProblemSpec, goal, states, controls) -> float:
    """``ts * sum_k lk(q_k - goal, u_k - u_ref)`` over the executed steps."""
    w = spec.weights
    e = np.asarray(states, dtype=float) - np.asarray(goal, dtype=float)
    du = np.asarray(controls, dtype=float) - np.asarray(w.u_ref)
    stage = np.einsum("ki,ij,kj->k", e, w.Q, e) + du**2 @ w.R
    return float(spec.ts * stage.sum())


def run_mission(spec: ProblemSpec, true_obstacles: Sequence[ObstacleSpec], mission: MissionConfig,
                penalty: PenaltyConfig | None = None,
                on_step: Callable[[StepRecord], None] | None = None) -> MissionResult:
    """Drive the model from ``spec.q0`` to ``mission.goal`` in closed loop.

    ``spec.obstacles`` are the enlarged sets the solver sees and
    ``true_obstacles`` the real ones, used only for reporting.
    """
    cfg = penalty or PenaltyConfig()
    goal = mission.goal
    log = MissionLog(spec.ts)
    q = np.array(spec.q0, dtype=float)
    u_warm = np.zeros(spec.n_vars)
    mu = None
    waypoints: list[Position] = []
    wp_index = -1
    prev_input = np.zeros(2)
    positions = [tuple(q)]
    grid = None
    status = MAX_STEPS
    tol = mission.goal_tolerance

    def target() -> tuple[float, float]:
        if 0 <= wp_index < len(waypoints):
            return waypoints[wp_index]
        return goal.x, goal.y

    def record(step, control, solve=None, ms=0.0, stop=False):
        rec = StepRecord(
            step=step,
            state=VehicleState(*map(float, q)),
            control=(float(control[0]), float(control[1])),
            psi_true=_max_psi(true_obstacles, q[0], q[1]),
            psi_enlarged=_max_psi(spec.obstacles, q[0], q[1]),
            inner_iterations=solve.inner_iterations if solve else 0,
            outer_iterations=solve.outer_iterations if solve else 0,
            solve_ms=ms,
            solver_status=solve.status if solve else "",
            stop=stop,
            waypoint=wp_index if 0 <= wp_index < len(waypoints) else -1,
            target=tuple(map(float, target())),
        )
        log.append(rec)
        if on_step is not None:
            on_step(rec)

    step = 0
    for step in range(mission.max_mpc_steps):
        if math.hypot(q[0] - goal.x, q[1] - goal.y) <= tol:
            status = REACHED
            break
        tx, ty = target()
        sp = spec.at_state(q).with_reference((tx, ty, goal.theta))
        t0 = time.perf_counter()
        outcome = penalty_solve(sp, mu, u_warm, cfg)
        ms = 1e3 * (time.perf_counter() - t0)
        stop = mission.emergency_stop and emergency_stop_check(outcome, sp, cfg.eta_star, mission.lookahead_stages)
        if stop:
            u0 = stop_input(sp, prev_input)
            # the plan was for this very state, so keep it unshifted
            u_warm, mu = outcome.controls, outcome.mu
        else:
            u0 = outcome.controls[:2].copy()
            u_warm, mu = shift_warm_start(outcome.controls, outcome.mu)
        record(step, u0, outcome, ms, stop)
        q = rk4_step(sp.model, q, u0, sp.ts)
        prev_input = u0
        positions.append(tuple(q))

        if 0 <= wp_index < len(waypoints):
            wx, wy = waypoints[wp_index]
            if math.hypot(q[0] - wx, q[1] - wy) <= tol:
                wp_index += 1
        elif (mission.graph_search and stuck_detector(positions, mission.stuck_epsilon, mission.stuck_steps)):
            if grid is None:
                grid = rasterize(spec.obstacles, mission.workspace, mission.grid_resolution)
            s = grid.nearest_free(grid.cell_of(q[0], q[1]))
            g = grid.nearest_free(grid.cell_of(goal.x, goal.y))
            path = astar(grid, s, g) if s is not None and g is not None else None
            log.searches += 1
            if path is None:
                status = NO_PATH
                step += 1
                break
            waypoints = extract_waypoints(path, grid)
            log.waypoints.extend(waypoints)
            wp_index = 0
            mu = None
    else:
        step = mission.max_mpc_steps
    if status == MAX_STEPS and math.hypot(q[0] - goal.x, q[1] - goal.y) <= tol:
        status = REACHED
    record(step, (0.0, 0.0))
    states = log.states()
    controls = log.controls()
    cost = closed_loop_cost(spec, goal, states[:-1], controls[:-1])
    return MissionResult(status, log, float(math.hypot(q[0] - goal.x, q[1] - goal.y)), cost)

"""Scenario files: TOML documents describing one vehicle, its obstacles and solver settings.

Numeric fields accept TOML numbers or constant expressions in strings, such
as ``"pi"`` or ``"-pi/3"``.  A minimal file::

    ts = 0.03
    N = 50

    [vehicle]
    kind = "trailer"
    L = 0.5

    [inputs]
    lower = [-4, -4]
    upper = [4, 4]

    [start]
    x = 0
    y = 0.3
    theta = "pi"

    [goal]
    x = 1
    y = 4
    theta = "pi"

    [[obstacles]]
    label = "disc"
    constraints = ["1 - x^2 - y^2"]

Obstacles list the true inequalities; ``enlarged`` may give the inflated
set explicitly, otherwise it is derived with the ``enlargement`` margin.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import VehicleModel, VehicleState
from .expr import ExpressionSyntaxError, parse_expr
from .mission import MissionConfig, Workspace
from .objective import CostWeights, InputBox, ProblemSpec
from .obstacles import (
    DEFAULT_ENLARGEMENT,
    ObstacleSpec,
    UnsupportedEnlargement,
    apply_enlargement,
    obstacle_from_text,
)
from .panoc import PanocConfig
from .penalty import PenaltyConfig

__all__ = [
    "Scenario",
    "SolverSettings",
    "MissionSettings",
    "ScenarioError",
    "MissingFieldError",
    "ScenarioParseError",
    "ScenarioValueError",
    "load_scenario",
    "loads_scenario",
    "bundled_scenarios",
    "resolve_scenario_path",
]


class ScenarioError(ValueError):
    """Base class of scenario diagnostics."""


class MissingFieldError(ScenarioError):
    def __init__(self, name: str, source: str = ""):
        self.field = name
        where = f"{source}: " if source else ""
        super().__init__(f"{where}missing required field '{name}'")


class ScenarioParseError(ScenarioError):
    def __init__(self, message: str, line: int | None, source: str = ""):
        self.line = line
        where = f"{source}:" if source else ""
        at = f"{line}: " if line is not None else " "
        super().__init__(f"{where}{at}{message}")


class ScenarioValueError(ScenarioError):
    def __init__(self, name: str, message: str, source: str = ""):
        self.field = name
        where = f"{source}: " if source else ""
        super().__init__(f"{where}invalid value for '{name}': {message}")


@dataclass(frozen=True)
class SolverSettings:
    tau_star: float = 1e-3
    eta_star: float = 1e-2
    omega: float = 10.0
    mu_cap: float = 1e4
    mu0: float = 1.0
    lbfgs_memory: int = 10
    max_iterations: int = 500
    max_outer_iterations: int = 20


@dataclass(frozen=True)
class MissionSettings:
    workspace: Workspace
    goal_tolerance: float = 0.2
    max_mpc_steps: int = 500
    lookahead: int = 3
    stuck_epsilon: float = 5e-3
    stuck_steps: int = 2
    grid_resolution: float = 0.1
    emergency_stop: bool = True
    graph_search: bool = True


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    model: VehicleModel
    ts: float
    N: int
    input_box: InputBox
    weights: CostWeights
    start: VehicleState
    goal: VehicleState
    obstacles: tuple[ObstacleSpec, ...]
    solver: SolverSettings
    mission: MissionSettings
    seed: int = 0
    source: str = ""
    # dotted names of fields that were filled in with defaults
    defaults: tuple[str, ...] = field(default=())

    @property
    def enlarged_obstacles(self) -> tuple[ObstacleSpec, ...]:
        return tuple(apply_enlargement(o) for o in self.obstacles)

    def problem(self, q0=None) -> ProblemSpec:
        """Open-loop problem from ``q0`` (default: the start) towards the goal."""
        return ProblemSpec(
            model=self.model,
            ts=self.ts,
            N=self.N,
            weights=replace(self.weights, q_ref=self.goal),
            obstacles=self.enlarged_obstacles,
            input_box=self.input_box,
            q0=self.start if q0 is None else q0,
        )

    def penalty_config(self, **overrides) -> PenaltyConfig:
        s = replace(self.solver, **{k: v for k, v in overrides.items() if k in SolverSettings.__dataclass_fields__})
        check = overrides.get("check_descent")
        panoc = PanocConfig(
            tolerance=s.tau_star,
            max_iterations=s.max_iterations,
            lbfgs_memory=s.lbfgs_memory,
            **({} if check is None else {"check_descent": check}),
        )
        return PenaltyConfig(
            mu0=s.mu0,
            omega=s.omega,
            eta_star=s.eta_star,
            tau_star=s.tau_star,
            mu_cap=s.mu_cap,
            max_outer_iterations=s.max_outer_iterations,
            panoc=panoc,
        )

    def mission_config(self, **overrides) -> MissionConfig:
        m = replace(self.mission, **overrides)
        return MissionConfig(
            goal=self.goal,
            workspace=m.workspace,
            goal_tolerance=m.goal_tolerance,
            max_mpc_steps=m.max_mpc_steps,
            lookahead_stages=m.lookahead,
            stuck_epsilon=m.stuck_epsilon,
            stuck_steps=m.stuck_steps,
            grid_resolution=m.grid_resolution,
            emergency_stop=m.emergency_stop,
            graph_search=m.graph_search,
        )


# --------------------------------------------------------------------------
# loading


def bundled_scenarios() -> list[str]:
    root = resources.files("penaltynav") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".scn"))


def resolve_scenario_path(name: str | Path) -> Path:
    """A path as given if it exists, otherwise a bundled scenario by name."""
    p = Path(name)
    if p.exists():
        return p
    stem = p.name[:-4] if p.name.endswith(".scn") else p.name
    bundled = resources.files("penaltynav") / "scenarios" / f"{stem}.scn"
    if p.parent == Path(".") and bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"scenario not found: {name}")


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario file; bundled names such as ``"crescent"`` also work."""
    p = resolve_scenario_path(path)
    return loads_scenario(p.read_text(encoding="utf-8"), source=str(p), name=p.stem)


def loads_scenario(text: str, source: str = "", name: str = "") -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        msg = str(exc)
        line = getattr(exc, "lineno", None)
        raise ScenarioParseError(msg, line, source) from None
    return _Builder(doc, text, source).build(name)


class _Builder:
    def __init__(self, doc: dict, text: str, source: str):
        self.doc = doc
        self.text = text
        self.source = source
        self.defaults: list[str] = []

    # ---- primitives

    def _line_of(self, needle: str) -> int | None:
        for i, line in enumerate(self.text.splitlines(), 1):
            if needle in line:
                return i
        return None

    def section(self, key: str, required: bool = True) -> dict:
        if key not in self.doc:
            if required:
                raise MissingFieldError(key, self.source)
            self.defaults.append(key)
            return {}
        sec = self.doc[key]
        if not isinstance(sec, dict):
            raise ScenarioValueError(key, "expected a table", self.source)
        return sec

    def get(self, table: dict, prefix: str, key: str, default: Any = ...):
        name = f"{prefix}.{key}" if prefix else key
        if key not in table:
            if default is ...:
                raise MissingFieldError(name, self.source)
            self.defaults.append(name)
            return default
        return table[key]

    def number(self, value, name: str) -> float:
        if isinstance(value, bool):
            raise ScenarioValueError(name, "expected a number", self.source)
        if isinstance(value, (int, float)):
            v = float(value)
        elif isinstance(value, str):
            try:
                e = parse_expr(value)
            except ExpressionSyntaxError as exc:
                raise ScenarioParseError(f"{name}: {exc}", self._line_of(value), self.source) from None
            if not e.is_constant:
                raise ScenarioValueError(name, f"{value!r} is not a constant", self.source)
            v = float(e.evaluate(0.0, 0.0))
        else:
            raise ScenarioValueError(name, "expected a number", self.source)
        if not math.isfinite(v):
            raise ScenarioValueError(name, "must be finite", self.source)
        return v

    def num(self, table: dict, prefix: str, key: str, default: Any = ...) -> float:
        v = self.get(table, prefix, key, default)
        return float(v) if v is default else self.number(v, f"{prefix}.{key}" if prefix else key)

    def integer(self, table: dict, prefix: str, key: str, default: Any = ...) -> int:
        name = f"{prefix}.{key}" if prefix else key
        v = self.get(table, prefix, key, default)
        if v is default:
            return v
        if isinstance(v, bool) or not isinstance(v, int):
            raise ScenarioValueError(name, "expected an integer", self.source)
        return v

    def vector(self, value, name: str, length: int | None = None) -> list[float]:
        if not isinstance(value, list):
            raise ScenarioValueError(name, "expected an array", self.source)
        out = [self.number(v, f"{name}[{i}]") for i, v in enumerate(value)]
        if length is not None and len(out) != length:
            raise ScenarioValueError(name, f"expected {length} entries, got {len(out)}", self.source)
        return out

    def matrix3(self, value, name: str) -> np.ndarray:
        if isinstance(value, list) and value and all(isinstance(r, list) for r in value):
            rows = [self.vector(r, f"{name}[{i}]", 3) for i, r in enumerate(value)]
            if len(rows) != 3:
                raise ScenarioValueError(name, "expected 3 rows", self.source)
            return np.array(rows)
        return np.diag(self.vector(value, name, 3))

    def state(self, key: str) -> VehicleState:
        sec = self.section(key)
        return VehicleState(self.num(sec, key, "x"), self.num(sec, key, "y"), self.num(sec, key, "theta", 0.0))

    def guard(self, name: str, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioValueError(name, str(exc), self.source) from None

    # ---- sections

    def build(self, name: str) -> Scenario:
        doc = self.doc
        name = str(doc.get("name", name))
        veh = self.section("vehicle")
        kind = self.get(veh, "vehicle", "kind")
        L = self.num(veh, "vehicle", "L")
        model = self.guard("vehicle", VehicleModel, kind, L)

        ts = self.num(doc, "", "ts")
        N = self.integer(doc, "", "N")
        if not ts > 0:
            raise ScenarioValueError("ts", "sampling time must be positive", self.source)
        if N < 1:
            raise ScenarioValueError("N", "horizon must be at least 1", self.source)
        seed = self.integer(doc, "", "seed", 0)

        inp = self.section("inputs")
        lo = self.vector(self.get(inp, "inputs", "lower"), "inputs.lower", 2)
        hi = self.vector(self.get(inp, "inputs", "upper"), "inputs.upper", 2)
        box = self.guard("inputs", InputBox, tuple(lo), tuple(hi))

        w = self.section("weights", required=False)
        Q = self.matrix3(self.get(w, "weights", "Q", [1.0, 1.0, 0.1]), "weights.Q")
        R = self.vector(self.get(w, "weights", "R", [0.1, 0.1]), "weights.R", 2)
        QN_raw = self.get(w, "weights", "QN", None)
        QN = None if QN_raw is None else self.matrix3(QN_raw, "weights.QN")
        u_ref = self.vector(self.get(w, "weights", "u_ref", [0.0, 0.0]), "weights.u_ref", 2)
        weights = self.guard("weights", CostWeights, Q=Q, R=np.array(R), QN=QN, u_ref=tuple(u_ref))

        start = self.state("start")
        goal = self.state("goal")

        obstacles = self.obstacles()
        solver = self.solver()
        mission = self.mission(start, goal)
        return Scenario(
            name=name,
            model=model,
            ts=ts,
            N=N,
            input_box=box,
            weights=weights,
            start=start,
            goal=goal,
            obstacles=obstacles,
            solver=solver,
            mission=mission,
            seed=seed,
            source=self.source,
            defaults=tuple(self.defaults),
        )

    def obstacles(self) -> tuple[ObstacleSpec, ...]:
        raw = self.doc.get("obstacles", [])
        if "obstacles" not in self.doc:
            self.defaults.append("obstacles")
        if not isinstance(raw, list):
            raise ScenarioValueError("obstacles", "expected an array of tables", self.source)
        out = []
        for i, ob in enumerate(raw):
            pre = f"obstacles[{i}]"
            if not isinstance(ob, dict):
                raise ScenarioValueError(pre, "expected a table", self.source)
            cons = self.get(ob, pre, "constraints")
            enlarged = self.get(ob, pre, "enlarged", None)
            margin = self.num(ob, pre, "enlargement", DEFAULT_ENLARGEMENT)
            label = str(self.get(ob, pre, "label", f"obstacle {i}"))
            for key, lst in (("constraints", cons), ("enlarged", enlarged)):
                if lst is None:
                    continue
                if not isinstance(lst, list) or not lst or not all(isinstance(t, str) for t in lst):
                    raise ScenarioValueError(f"{pre}.{key}", "expected a nonempty array of strings", self.source)
            if margin < 0:
                raise ScenarioValueError(f"{pre}.enlargement", "must be nonnegative", self.source)
            try:
                spec = obstacle_from_text(cons, margin, label, enlarged)
            except ExpressionSyntaxError as exc:
                raise ScenarioParseError(f"{pre}: {exc}", self._line_of(exc.text), self.source) from None
            try:
                apply_enlargement(spec)
            except UnsupportedEnlargement as exc:
                raise ScenarioValueError(f"{pre}.enlarged", f"needed but not given ({exc})", self.source) from None
            out.append(spec)
        return tuple(out)

    def solver(self) -> SolverSettings:
        sec = self.section("solver", required=False)
        d = SolverSettings()
        s = SolverSettings(
            tau_star=self.num(sec, "solver", "tau_star", d.tau_star),
            eta_star=self.num(sec, "solver", "eta_star", d.eta_star),
            omega=self.num(sec, "solver", "omega", d.omega),
            mu_cap=self.num(sec, "solver", "mu_cap", d.mu_cap),
            mu0=self.num(sec, "solver", "mu0", d.mu0),
            lbfgs_memory=self.integer(sec, "solver", "lbfgs_memory", d.lbfgs_memory),
            max_iterations=self.integer(sec, "solver", "max_iterations", d.max_iterations),
            max_outer_iterations=self.integer(sec, "solver", "max_outer_iterations", d.max_outer_iterations),
        )
        # run the same checks the solver configs do, reported against the file
        self.guard("solver", PenaltyConfig, mu0=s.mu0, omega=s.omega, eta_star=s.eta_star, tau_star=s.tau_star,
                   mu_cap=s.mu_cap, max_outer_iterations=s.max_outer_iterations)
        self.guard("solver", PanocConfig, tolerance=s.tau_star, max_iterations=s.max_iterations,
                   lbfgs_memory=s.lbfgs_memory)
        return s

    def mission(self, start: VehicleState, goal: VehicleState) -> MissionSettings:
        sec = self.section("mission", required=False)
        ws_raw = self.get(sec, "mission", "workspace", None)
        if ws_raw is None:
            ws = Workspace(min(start.x, goal.x) - 2, max(start.x, goal.x) + 2,
                           min(start.y, goal.y) - 2, max(start.y, goal.y) + 2)
        else:
            ws = self.guard("mission.workspace", Workspace, *self.vector(ws_raw, "mission.workspace", 4))
        for label, q in (("start", start), ("goal", goal)):
            if not ws.contains(q.x, q.y):
                raise ScenarioValueError(label, "lies outside the workspace", self.source)
        d = MissionSettings(ws)
        flags = {}
        for key in ("emergency_stop", "graph_search"):
            v = self.get(sec, "mission", key, getattr(d, key))
            if not isinstance(v, bool):
                raise ScenarioValueError(f"mission.{key}", "expected true or false", self.source)
            flags[key] = v
        m = MissionSettings(
            workspace=ws,
            goal_tolerance=self.num(sec, "mission", "goal_tolerance", d.goal_tolerance),
            max_mpc_steps=self.integer(sec, "mission", "max_mpc_steps", d.max_mpc_steps),
            lookahead=self.integer(sec, "mission", "lookahead", d.lookahead),
            stuck_epsilon=self.num(sec, "mission", "stuck_epsilon", d.stuck_epsilon),
            stuck_steps=self.integer(sec, "mission", "stuck_steps", d.stuck_steps),
            grid_resolution=self.num(sec, "mission", "grid_resolution", d.grid_resolution),
            **flags,
        )
        self.guard("mission", MissionConfig, goal=goal, workspace=ws, goal_tolerance=m.goal_tolerance,
                   max_mpc_steps=m.max_mpc_steps, lookahead_stages=m.lookahead, stuck_epsilon=m.stuck_epsilon,
                   stuck_steps=m.stuck_steps, grid_resolution=m.grid_resolution)
        return m

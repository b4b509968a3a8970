import math
import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from penaltynav.cli import main
from penaltynav.mission import MissionLog, StepRecord
from penaltynav.dynamics import VehicleState
from penaltynav.plot import render_svg
from penaltynav.mission import Workspace
from penaltynav.scenario import (
    MissingFieldError,
    ScenarioParseError,
    ScenarioValueError,
    bundled_scenarios,
    load_scenario,
    loads_scenario,
)
from penaltynav.trajlog import (
    COLUMNS,
    TrajectoryFormatError,
    TrajectoryRow,
    format_trajectory,
    read_trajectory,
    rows_from_log,
    write_trajectory,
)

MINIMAL = """\
ts = 0.05
N = 20

[vehicle]
kind = "bicycle"
L = 0.5

[inputs]
lower = [-0.1, "-pi/3"]
upper = [4, "pi/3"]

[start]
x = 0
y = 0

[goal]
x = 2
y = 0
"""

ALL_SCENARIOS = ["bicycle_corridors", "crescent", "cross", "half_disc", "labyrinth", "rack",
                 "two_circles_one_rectangle"]


def test_bundled_corpus_loads():
    assert bundled_scenarios() == ALL_SCENARIOS
    for name in ALL_SCENARIOS:
        sc = load_scenario(name)
        assert sc.name == name
        assert len(sc.obstacles) >= 1
        assert all(o.constraints for o in sc.obstacles)
        assert len(sc.enlarged_obstacles) == len(sc.obstacles)


def test_crescent_fields():
    sc = load_scenario("crescent.scn")
    assert sc.model.kind == "trailer"
    assert sc.ts == 0.03 and sc.N == 50
    assert sc.input_box.lower == (-4, -4) and sc.input_box.upper == (4, 4)
    assert sc.start == VehicleState(0.0, 0.3, math.pi)
    s = sc.solver
    assert (s.tau_star, s.eta_star, s.omega, s.mu_cap) == (1e-3, 1e-2, 10.0, 1e4)


def test_corridor_fields():
    sc = load_scenario("bicycle_corridors")
    assert sc.model.kind == "bicycle" and sc.ts == 0.05
    assert sc.input_box.lower == pytest.approx((-0.1, -math.pi / 3), abs=1e-15)
    assert sc.input_box.upper == pytest.approx((4.0, math.pi / 3), abs=1e-15)


def test_minimal_scenario_defaults():
    sc = loads_scenario(MINIMAL, name="tiny")
    assert sc.obstacles == ()
    assert np.array_equal(sc.weights.QN, 10 * sc.weights.Q)
    assert "weights" in sc.defaults and "obstacles" in sc.defaults and "solver" in sc.defaults
    assert sc.mission.workspace == Workspace(-2, 4, -2, 2)
    assert sc.start.theta == 0.0
    spec = sc.problem()
    assert spec.weights.q_ref == sc.goal
    cfg = sc.penalty_config(check_descent=True)
    assert cfg.panoc.check_descent and cfg.tau_star == 1e-3


def test_missing_vehicle():
    text = MINIMAL.replace('[vehicle]\nkind = "bicycle"\nL = 0.5\n', "")
    with pytest.raises(MissingFieldError) as err:
        loads_scenario(text)
    assert err.value.field == "vehicle"
    assert "vehicle" in str(err.value)


def test_missing_nested_field():
    with pytest.raises(MissingFieldError) as err:
        loads_scenario(MINIMAL.replace("L = 0.5\n", ""))
    assert err.value.field == "vehicle.L"


def test_toml_syntax_error_reports_line():
    text = MINIMAL.replace("N = 20", "N = = 20")
    with pytest.raises(ScenarioParseError) as err:
        loads_scenario(text)
    assert err.value.line == 2


def test_bad_constraint_reports_line():
    text = MINIMAL + '\n[[obstacles]]\nconstraints = ["1 - x^^2"]\n'
    with pytest.raises(ScenarioParseError) as err:
        loads_scenario(text)
    assert err.value.line == text.splitlines().index('constraints = ["1 - x^^2"]') + 1


def test_bad_number_expression():
    with pytest.raises(ScenarioParseError):
        loads_scenario(MINIMAL.replace('"-pi/3"', '"-pi/"'))
    with pytest.raises(ScenarioValueError):
        loads_scenario(MINIMAL.replace('"-pi/3"', '"x"'))


@pytest.mark.parametrize("old,new,field", [
    ("ts = 0.05", "ts = -0.05", "ts"),
    ("N = 20", "N = 0", "N"),
    ("N = 20", "N = 2.5", "N"),
    ('kind = "bicycle"', 'kind = "boat"', "vehicle"),
    ("upper = [4,", "upper = [-4,", "inputs"),
    ("lower = [-0.1, \"-pi/3\"]", "lower = [-0.1]", "inputs.lower"),
])
def test_invariant_violations(old, new, field):
    with pytest.raises(ScenarioValueError) as err:
        loads_scenario(MINIMAL.replace(old, new))
    assert err.value.field == field


def test_goal_outside_workspace():
    with pytest.raises(ScenarioValueError) as err:
        loads_scenario(MINIMAL + "\n[mission]\nworkspace = [-1, 1.5, -1, 1]\n")
    assert err.value.field == "goal"


def test_nonconvex_obstacle_needs_enlarged_set():
    with pytest.raises(ScenarioValueError) as err:
        loads_scenario(MINIMAL + '\n[[obstacles]]\nconstraints = ["y - x^2", "1 - y"]\n')
    assert err.value.field == "obstacles[0].enlarged"
    sc = loads_scenario(MINIMAL + '\n[[obstacles]]\nconstraints = ["y - x^2", "1 - y"]\n'
                                   'enlarged = ["y + 0.1 - x^2", "1.1 - y"]\n')
    assert sc.enlarged_obstacles[0].constraints[1].value(0, 1.0) == pytest.approx(0.1)


def test_empty_constraint_list_rejected():
    with pytest.raises(ScenarioValueError):
        loads_scenario(MINIMAL + "\n[[obstacles]]\nconstraints = []\n")


def test_unknown_scenario():
    with pytest.raises(FileNotFoundError):
        load_scenario("no_such_place")


# trajectory logs

def _rows(n):
    rng = np.random.default_rng(n)
    return [TrajectoryRow(k, 0.05 * k, *rng.normal(size=3), *rng.normal(size=2), 0.0, float(rng.random()) * 1e-3,
                          int(rng.integers(0, 100)), int(rng.integers(1, 5)), float(rng.random()), bool(k % 2), k - 1,
                          *rng.normal(size=2))
            for k in range(n)]


def test_empty_log_is_header_only(tmp_path):
    p = tmp_path / "t.csv"
    write_trajectory([], p)
    assert p.read_text() == ",".join(COLUMNS) + "\n"
    assert read_trajectory(p) == []


def test_round_trip(tmp_path):
    rows = _rows(3)
    p = tmp_path / "t.csv"
    write_trajectory(rows, p)
    back = read_trajectory(p)
    assert back == rows


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=4))
def test_round_trip_floats_exact(tmp_path_factory, vals):
    rows = [TrajectoryRow(k, k * 0.1, v, -v, v / 3, v, 0.0, 0.0, 0.0, 1, 1, v, False, -1, v, v)
            for k, v in enumerate(vals)]
    p = tmp_path_factory.mktemp("rt") / "t.csv"
    write_trajectory(rows, p)
    assert read_trajectory(p) == rows


def test_shuffled_header_rejected(tmp_path):
    p = tmp_path / "t.csv"
    cols = list(COLUMNS)
    cols[2], cols[3] = cols[3], cols[2]
    p.write_text(",".join(cols) + "\n")
    with pytest.raises(TrajectoryFormatError, match="header"):
        read_trajectory(p)


@pytest.mark.parametrize("mutate", [
    lambda lines: lines[:1] + [lines[1] + ",1"],
    lambda lines: lines[:1] + ["abc" + lines[1][1:]],
    lambda lines: lines[:1] + [lines[1].replace(",0,", ",7,", 1)],
    lambda lines: [lines[0], lines[2], lines[1]],
    lambda lines: [],
])
def test_malformed_logs_rejected(tmp_path, mutate):
    p = tmp_path / "t.csv"
    write_trajectory(_rows(3), p)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(mutate(lines)) + "\n")
    with pytest.raises(TrajectoryFormatError):
        read_trajectory(p)


def test_rows_from_mission_log():
    log = MissionLog(0.1)
    log.append(StepRecord(0, VehicleState(1, 2, 3), (0.5, 0.6), 0.0, 0.001, 4, 2, 1.5, "feasible", False, -1, (9, 9)))
    log.append(StepRecord(1, VehicleState(1.1, 2, 3), (0, 0), 0.0, 0.0, 0, 0, 0.0, "", True, 0, (3, 4)))
    rows = rows_from_log(log)
    assert rows[1].time == pytest.approx(0.1)
    assert rows[1].stop and rows[1].waypoint == 0 and (rows[1].target_x, rows[1].target_y) == (3, 4)
    assert format_trajectory(log) == format_trajectory(rows)


# SVG

def test_svg_polyline_has_one_point_per_row():
    sc = load_scenario("crescent")
    rows = _rows(7)
    svg = render_svg(sc, rows)
    lines = re.findall(r'<polyline points="([^"]*)"', svg)
    assert len(lines) == 1
    assert len(lines[0].split()) == 7
    assert 'class="start"' in svg and 'class="goal"' in svg
    assert svg.count('class="waypoint"') == 6  # distinct targets of rows with waypoint >= 0


def test_svg_is_deterministic():
    sc = load_scenario("rack")
    assert render_svg(sc, _rows(4)) == render_svg(sc, _rows(4))


def test_svg_rejects_empty_inputs():
    sc = load_scenario("crescent")
    with pytest.raises(ValueError):
        render_svg(sc, [])

    class Flat:
        xmin = xmax = 0.0
        ymin, ymax = 0.0, 1.0

    with pytest.raises(ValueError):
        render_svg(sc, _rows(2), workspace=Flat())


# command line

def test_cli_list(capsys):
    assert main(["list"]) == 0
    assert capsys.readouterr().out.split() == ALL_SCENARIOS


def test_cli_simulate_plot_pipeline(tmp_path):
    log = tmp_path / "t.csv"
    svg = tmp_path / "out.svg"
    assert main(["simulate", "crescent.scn", "--out", str(log), "--quiet"]) == 0
    rows = read_trajectory(log)
    assert rows[0].x == 0.0 and rows[0].y == 0.3
    assert math.hypot(rows[-1].x - 1, rows[-1].y - 4) <= 0.2
    assert main(["plot", "crescent.scn", str(log), str(svg), "--quiet"]) == 0
    assert svg.read_text().startswith("<?xml")


def test_cli_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["simulate", "bicycle_corridors", "--out", str(p), "--quiet"]) == 0
    strip = lambda rows: [r._replace(solve_ms=0.0) for r in rows]
    assert strip(read_trajectory(a)) == strip(read_trajectory(b))


def test_cli_solve(tmp_path, capsys):
    out = tmp_path / "plan.csv"
    assert main(["solve", "crescent", "--out", str(out)]) == 0
    assert "feasible" in capsys.readouterr().out
    rows = read_trajectory(out)
    assert len(rows) == 51
    assert max(r.psi_true for r in rows) == 0.0


def test_cli_failure_exit_codes(tmp_path, capsys):
    # solver failure: a step budget too small to reach the goal
    assert main(["simulate", "crescent", "--max-steps", "3", "--quiet"]) == 1
    # solver failure: penalty loop gives up
    assert main(["solve", "half_disc", "--eta", "1e-12", "--quiet"]) == 1
    # grid with no path
    walled = tmp_path / "walled.scn"
    walled.write_text(MINIMAL + '\n[[obstacles]]\nconstraints = ["x - 0.8", "1.2 - x"]\n')
    assert main(["grid", str(walled)]) == 1


def test_cli_usage_exit_codes(tmp_path, capsys):
    assert main(["solve", "missing.scn"]) == 2
    assert "not found" in capsys.readouterr().err
    bad = tmp_path / "bad.scn"
    bad.write_text("ts = [")
    assert main(["solve", str(bad)]) == 2
    log = tmp_path / "bad.csv"
    log.write_text("nonsense\n")
    assert main(["plot", "crescent", str(log), str(tmp_path / "x.svg")]) == 2
    assert main(["simulate", "crescent", "--max-steps", "0"]) == 2
    for argv in (["frobnicate"], ["solve"], ["solve", "crescent", "--bogus"], []):
        with pytest.raises(SystemExit) as err:
            main(argv)
        assert err.value.code == 2


def test_cli_grid_prints_path(capsys):
    assert main(["grid", "cross"]) == 0
    out = capsys.readouterr().out
    assert "*" in out and "#" in out
    assert out.count("waypoint") == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "penaltynav", "list"], capture_output=True, text=True, check=True)
    assert "crescent" in r.stdout.split()

import json
import math
from pathlib import Path

import numpy as np
import pytest

from edmdmpc.errors import GridMismatchError, ScenarioError, UsageError
from edmdmpc.harness import (CSV_COLUMNS, compare, export, load_scenario,
                             load_scenario_file, read_trace, run_scenario,
                             simulate_scenario)
from edmdmpc.mpc import MpcTrace

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def short(doc=None, T=7):
    return load_scenario({"T": T, **(doc or {})})


def fake_trace(output, wall=1.0, mode="x", times=None):
    output = np.asarray(output, float)
    n = len(output) - 1
    return MpcTrace(mode=mode, dt=0.5,
                    times=0.5 * np.arange(n + 1) if times is None else np.asarray(times),
                    output=output, doses=np.zeros(n), errors=np.zeros(n),
                    update_fired=np.zeros(n, bool), solve_wall=np.full(n, wall / n),
                    update_wall=np.zeros(n), converged=np.ones(n, bool))


# -- scenarios ----------------------------------------------------------------

def test_empty_document_is_default_scenario():
    sc = load_scenario({})
    assert sc.T == 21 and sc.total_steps == 42
    np.testing.assert_array_equal(sc.template.times, [1, 3, 5, 8, 10, 12, 15, 17, 19])
    assert sc.template.u_max == 0.05 and sc.skip_windows == ()
    assert sc.config.mode == "edmd-c" and sc.config.tau_upd == 1e-3
    assert sc.params.n == 16 and sc.weights.target == 2.5


def test_shipped_scenarios():
    a = load_scenario_file(SCENARIOS / "default_21d.json")
    assert a.document == load_scenario({}).document
    b = load_scenario_file(SCENARIOS / "skip_week_49d.json")
    assert b.T == 49 and b.total_steps == 98 and b.skip_windows == ((21.0, 28.0),)
    assert b.template.times[-1] == 47.0


@pytest.mark.parametrize("doc, key", [
    ({"Tt": 21}, "Tt"),
    ({"mpc": {"tau_upd2": 0.1}}, "mpc.tau_upd2"),
    ({"plant": {"kapa0": 0.1}}, "plant.kapa0"),
    ({"weights": {"target": "high"}}, "weights.target"),
    ({"mpc": {"mode": "edmd-x"}}, "mpc.mode"),
    ({"T": -1}, "T"),
])
def test_schema_errors_name_the_key(doc, key):
    with pytest.raises(ScenarioError, match=key.replace(".", r"\.")):
        load_scenario(doc)


@pytest.mark.parametrize("doc", [
    {"T": 4, "injection_days": [1, 5]},       # injection day beyond T
    {"injection_days": [8]},                  # not inside the week
    {"injection_days": [1, 1]},
    {"skip_windows": [[10, 30]]},
    {"skip_windows": [[5, 5]]},
    {"T": 21.25},                             # not a multiple of dt
    {"fixed_dose": 1.0},
    {"plant": {"x_lo": 1.0, "x_hi": 0.0}},
    {"plant": {"k_a": 0.4}},
    {"weights": {"dose_weight": 0, "track_weight": 0, "term_weight": 0}},
])
def test_range_errors(doc):
    with pytest.raises(ScenarioError):
        load_scenario(doc)


def test_non_object_and_bad_json(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario([1, 2])
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ScenarioError):
        load_scenario_file(p)
    with pytest.raises(OSError, match="missing.json"):
        load_scenario_file(tmp_path / "missing.json")


def test_overrides_reach_objects():
    sc = load_scenario({"plant": {"n": 8, "pk": "michaelis-menten"}, "seed": 4,
                        "mpc": {"mode": "nonlinear", "horizon": 10}, "u_max": 0.1})
    assert sc.params.n == 8 and sc.params.pk == "michaelis-menten"
    assert sc.config.seed == 4 and sc.config.horizon == 10 and sc.template.u_max == 0.1
    assert sc.with_mode("edmd-d", 9).config.mode == "edmd-d"


# -- compare ------------------------------------------------------------------

def test_compare_examples():
    P = np.linspace(1, 2, 11)
    r = compare(fake_trace(P, wall=0.5), fake_trace(P, wall=2.0))
    assert r.rel_error == 0.0 and r.speed_up == pytest.approx(4.0)
    r = compare(fake_trace(1.01 * P), fake_trace(P))
    assert r.rel_error == pytest.approx(0.01, rel=1e-12)
    np.testing.assert_allclose(r.step_errors, 0.01)
    with pytest.raises(GridMismatchError):
        compare(fake_trace(P[:5]), fake_trace(P))
    with pytest.raises(GridMismatchError):
        compare(fake_trace(P, times=np.arange(11.0)), fake_trace(P))


def test_compare_zero_wall_and_full_state():
    P = np.ones(5)
    r = compare(fake_trace(P, wall=0.0), fake_trace(P, wall=1.0))
    assert r.speed_up == math.inf
    with pytest.raises(UsageError):
        compare(fake_trace(P), fake_trace(P), full_state=True)


# -- export / import ----------------------------------------------------------

@pytest.fixture(scope="module")
def trace():
    return run_scenario(short())


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_round_trip(trace, tmp_path, fmt):
    path = tmp_path / f"t.{fmt}"
    export(trace, path)
    back = read_trace(path, mode=trace.mode)
    for name in ("times", "output", "doses", "errors", "update_fired", "solve_wall"):
        np.testing.assert_array_equal(getattr(back, name), getattr(trace, name))
    assert back.mode == trace.mode
    if fmt == "json":
        np.testing.assert_array_equal(back.states, trace.states)
        np.testing.assert_array_equal(back.update_wall, trace.update_wall)
        assert back.config == json.loads(json.dumps(trace.config))


def test_csv_layout(trace, tmp_path):
    export(trace, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == trace.total_steps + 2
    last = lines[-1].split(",")
    assert last[0] == str(trace.total_steps) and last[2] == last[4] == last[6] == ""


def test_empty_trace_header_only(tmp_path):
    z = np.zeros(0)
    empty = MpcTrace(mode="x", dt=0.5, times=z, output=z, doses=z, errors=z,
                     update_fired=z.astype(bool), solve_wall=z, update_wall=z,
                     converged=z.astype(bool))
    export(empty, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == ",".join(CSV_COLUMNS) + "\n"
    assert read_trace(tmp_path / "e.csv").total_steps == 0


def test_unknown_format(trace, tmp_path):
    with pytest.raises(UsageError):
        export(trace, tmp_path / "t.xlsx")
    with pytest.raises(UsageError):
        export(trace, tmp_path / "t.csv", format="parquet")
    with pytest.raises(UsageError):
        export(object(), tmp_path / "t.csv")


def test_io_error_names_path(trace, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="file"):
        export(trace, blocker / "sub" / "t.csv")


def test_malformed_trace_files(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(UsageError):
        read_trace(p)
    q = tmp_path / "x.json"
    q.write_text(json.dumps({"format": "other"}))
    with pytest.raises(UsageError):
        read_trace(q)


def test_report_export(tmp_path):
    P = np.linspace(1, 2, 5)
    r = compare(fake_trace(P), fake_trace(1.1 * P))
    export(r, tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["format"] == "edmdmpc-comparison"
    assert doc["rel_error"] == pytest.approx(r.rel_error)
    export(r, tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().startswith("step,t_days,relative_error")


def test_rerun_csv_byte_identical(tmp_path):
    sc = short()
    for name in ("a", "b"):
        export(run_scenario(sc), tmp_path / f"{name}.csv", timings=False)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_simulate_scenario():
    sc = short({"fixed_dose": 0.05, "skip_windows": [[2, 4]]})
    tr = simulate_scenario(sc)
    assert tr.total_steps == 14
    assert tr.doses[2] == 0.05 and tr.doses[6] == 0.0 and tr.doses[10] == 0.05
    assert tr.output[-1] > tr.output[0]

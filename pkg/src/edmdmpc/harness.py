"""Scenarios, comparison metrics and trace export.

A scenario document is strict JSON (see ``scenarios/README.md``); every key
is optional and unknown keys are rejected.  Traces round-trip through CSV
(one row per time point) and JSON (same columns plus the config echo).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .edmd import EDMD_C, EDMD_D
from .errors import GridMismatchError, ScenarioError, UsageError
from .mpc import NONLINEAR, MpcConfig, MpcTrace, OcpWeights, run_mpc
from .plant import DoseSchedule, PlantParams, simulate, steady_state
from .spectral import build_grid

__all__ = [
    "CSV_COLUMNS",
    "ComparisonReport",
    "Scenario",
    "compare",
    "export",
    "load_scenario",
    "load_scenario_file",
    "read_trace",
    "run_scenario",
    "simulate_scenario",
]

SCENARIO_VERSION = 1
TRACE_FORMAT = "edmdmpc-trace"
REPORT_FORMAT = "edmdmpc-comparison"
CSV_COLUMNS = ("step", "t_days", "dose_applied", "hemoglobin", "surrogate_error",
               "update_fired", "solve_wall_seconds")
FORMATS = ("csv", "json")


# -- schema -------------------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PlantDoc(_Strict):
    n: int = Field(16, ge=2)
    x_lo: float = 0.0
    x_hi: float = 1.0
    n_pop: int = Field(2, ge=1)
    kappa0: float = 0.2
    kappa1: float = 1.0
    v0: float = Field(0.15, gt=0)
    v1: float = Field(0.5, ge=0)
    K_m: float = Field(1.0, gt=0)
    g0: float = 1.0
    alpha: float = 1.0
    k_a: float = Field(2.0, gt=0)
    k_e: float = Field(0.4, gt=0)
    V_d: float = Field(1.0, gt=0)
    E_base: float = Field(0.1, ge=0)
    dt: float = Field(0.5, gt=0)
    omega5: float = Field(1.0, gt=0)
    pk: Literal["linear", "michaelis-menten"] = "linear"
    pk_km: float = Field(1.0, gt=0)


class MpcDoc(_Strict):
    mode: Literal["edmd-c", "edmd-d", "nonlinear"] = EDMD_C
    horizon: int = Field(28, ge=1)
    tau_upd: float = Field(1e-3, ge=0)
    M_EDMD: int = Field(30, ge=1)
    n_snapshots: int = Field(120, ge=1)
    n_legendre: Optional[int] = Field(None, ge=1)
    svd_tol: float = Field(1e-10, gt=0)
    refit_append: bool = True
    warm_start: bool = True
    solver_tol: float = Field(1e-8, gt=0)
    nonlinear_tol: float = Field(1e-6, gt=0)
    max_iter: int = Field(200, ge=1)
    fd_step: float = Field(1e-8, gt=0)
    dither_scale: float = Field(1.0, ge=0)


class WeightsDoc(_Strict):
    dose_weight: float = Field(1.0, ge=0)
    track_weight: float = Field(1.0, ge=0)
    term_weight: float = Field(1.0, ge=0)
    target: float = 2.5


class ScenarioDoc(_Strict):
    version: Literal[1] = SCENARIO_VERSION
    name: str = "default-21d"
    T: float = Field(21.0, gt=0)
    week: float = Field(7.0, gt=0)
    injection_days: list[float] = Field(default_factory=lambda: [1.0, 3.0, 5.0])
    u_max: float = Field(0.05, ge=0)
    fixed_dose: float = Field(0.0, ge=0)
    skip_windows: list[tuple[float, float]] = Field(default_factory=list)
    seed: int = 0
    plant: PlantDoc = Field(default_factory=PlantDoc)
    mpc: MpcDoc = Field(default_factory=MpcDoc)
    weights: WeightsDoc = Field(default_factory=WeightsDoc)


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    T: float
    params: PlantParams
    template: DoseSchedule  # injection times, zero doses, u_max
    skip_windows: tuple
    config: MpcConfig
    weights: OcpWeights
    fixed_dose: float = 0.0
    document: dict = field(default_factory=dict, repr=False)

    @property
    def total_steps(self):
        return self.config.total_steps

    @property
    def seed(self):
        return self.config.seed

    def with_mode(self, mode=None, seed=None):
        changes = {}
        if mode is not None:
            changes["mode"] = mode
        if seed is not None:
            changes["seed"] = seed
        if not changes:
            return self
        return Scenario(self.name, self.T, self.params, self.template, self.skip_windows,
                        MpcConfig(**{**asdict(self.config), **changes}), self.weights,
                        self.fixed_dose, self.document)


def _schema_error(exc):
    parts = []
    for err in exc.errors():
        key = ".".join(str(p) for p in err["loc"]) or "<document>"
        kind = "unknown key" if err["type"] == "extra_forbidden" else err["msg"]
        parts.append(f"{key}: {kind}")
    return ScenarioError("invalid scenario: " + "; ".join(parts))


def load_scenario(document=None):
    """Validate a scenario mapping and resolve it into runnable objects."""
    document = {} if document is None else document
    if not isinstance(document, dict):
        raise ScenarioError("scenario document must be a JSON object")
    try:
        doc = ScenarioDoc.model_validate(document)
    except ValidationError as exc:
        raise _schema_error(exc) from None

    days = np.asarray(doc.injection_days, dtype=float)
    if np.any(days < 0) or np.any(days >= doc.week):
        raise ScenarioError(f"injection_days must lie in [0, week={doc.week})")
    if np.any(days > doc.T):
        raise ScenarioError(f"injection day {days.max():g} is beyond T = {doc.T:g}")
    if len(np.unique(days)) != len(days):
        raise ScenarioError("injection_days must be distinct")
    for lo, hi in doc.skip_windows:
        if not (0 <= lo < hi <= doc.T):
            raise ScenarioError(f"skip window [{lo:g}, {hi:g}] must satisfy 0 <= start < end <= T")
    if doc.fixed_dose > doc.u_max:
        raise ScenarioError("fixed_dose exceeds u_max")

    pd = doc.plant.model_dump()
    n, x_lo, x_hi = pd.pop("n"), pd.pop("x_lo"), pd.pop("x_hi")
    if not x_hi > x_lo:
        raise ScenarioError("plant.x_hi must exceed plant.x_lo")
    try:
        params = PlantParams(grid=build_grid(n, x_lo, x_hi), **pd)
    except ValueError as exc:
        raise ScenarioError(f"plant: {exc}") from None

    steps = doc.T / params.dt
    if abs(steps - round(steps)) > 1e-9:
        raise ScenarioError(f"T = {doc.T:g} is not a multiple of plant.dt = {params.dt:g}")
    weeks = np.arange(int(math.ceil(doc.T / doc.week)) + 1)
    times = np.sort((doc.week * weeks[:, None] + np.sort(days)[None, :]).ravel())
    times = times[times <= doc.T + 1e-9]
    template = DoseSchedule(times, np.zeros(times.size), doc.u_max)

    config = MpcConfig(total_steps=int(round(steps)), seed=doc.seed,
                       dither_period=doc.week, **doc.mpc.model_dump())
    weights = OcpWeights(**doc.weights.model_dump())
    if not (weights.dose_weight > 0 or weights.track_weight > 0 or weights.term_weight > 0):
        raise ScenarioError("weights: at least one weight must be positive")
    windows = tuple((float(lo), float(hi)) for lo, hi in doc.skip_windows)
    return Scenario(doc.name, float(doc.T), params, template, windows, config, weights,
                    doc.fixed_dose, doc.model_dump(mode="json"))


def load_scenario_file(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(exc.errno, exc.strerror, str(path)) from None
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from None
    return load_scenario(document)


# -- running ------------------------------------------------------------------

def run_scenario(scenario, mode=None, seed=None):
    sc = scenario.with_mode(mode, seed)
    return run_mpc(sc.params, sc.template, sc.config, sc.weights, sc.skip_windows)


def simulate_scenario(scenario):
    """Open-loop run: ``fixed_dose`` at every injection outside skip windows."""
    p = scenario.params
    times = scenario.template.times
    doses = np.array([0.0 if any(lo <= t < hi for lo, hi in scenario.skip_windows)
                      else scenario.fixed_dose for t in times])
    sched = DoseSchedule(times, doses)
    traj = simulate(p, steady_state(p), sched, scenario.total_steps)
    N = scenario.total_steps
    k = np.floor(times / p.dt + 1e-9).astype(int)
    applied = np.zeros(N)
    keep = k < N
    np.add.at(applied, k[keep], doses[keep])
    nan = np.full(N, np.nan)
    return MpcTrace(mode="open-loop", dt=p.dt, times=traj.times, output=traj.output,
                    doses=applied, errors=nan, update_fired=np.zeros(N, bool),
                    solve_wall=np.zeros(N), update_wall=np.zeros(N),
                    converged=np.ones(N, bool), states=traj.states,
                    config={"fixed_dose": scenario.fixed_dose})


# -- comparison ---------------------------------------------------------------

@dataclass
class ComparisonReport:
    """``a`` is the candidate, ``b`` the reference (nonlinear MPC)."""

    rel_error: float
    wall_a: float
    wall_b: float
    speed_up: float
    inclusive_a: float
    inclusive_b: float
    speed_up_inclusive: float
    times: np.ndarray
    step_errors: np.ndarray  # |P_a - P_b| / |P_b| per time point
    mode_a: str = ""
    mode_b: str = ""
    updates_a: int = 0
    state_rel_error: Optional[float] = None

    def to_dict(self):
        d = asdict(self)
        d["times"] = self.times.tolist()
        d["step_errors"] = self.step_errors.tolist()
        return {"format": REPORT_FORMAT, "version": 1, "package_version": __version__,
                **{k: _json_float(v) for k, v in d.items()}}


def _ratio(num, den):
    if den > 0:
        return num / den
    return math.inf if num > 0 else 1.0


def compare(trace_a, trace_b, full_state=False):
    """Relative output error of ``trace_a`` against ``trace_b`` and the speed-up."""
    ta, tb = np.asarray(trace_a.times, float), np.asarray(trace_b.times, float)
    if ta.shape != tb.shape or not np.allclose(ta, tb, rtol=0, atol=1e-9):
        raise GridMismatchError(
            f"time grids differ ({ta.size} vs {tb.size} points)")
    Pa, Pb = np.asarray(trace_a.output, float), np.asarray(trace_b.output, float)
    scale = float(np.linalg.norm(Pb))
    diff = float(np.linalg.norm(Pa - Pb))
    rel = diff / scale if scale > 0 else diff
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(np.abs(Pb) > 0, np.abs(Pa - Pb) / np.abs(Pb), np.abs(Pa - Pb))
    state_err = None
    if full_state:
        if trace_a.states is None or trace_b.states is None:
            raise UsageError("full-state comparison needs traces with states (JSON export)")
        Sa, Sb = np.asarray(trace_a.states), np.asarray(trace_b.states)
        state_err = float(np.linalg.norm(Sa - Sb) / np.linalg.norm(Sb))
    wa, wb = trace_a.solver_seconds, trace_b.solver_seconds
    ia, ib = trace_a.inclusive_seconds, trace_b.inclusive_seconds
    return ComparisonReport(rel, wa, wb, _ratio(wb, wa), ia, ib, _ratio(ib, ia), ta, step,
                            trace_a.mode, trace_b.mode, trace_a.n_updates, state_err)


# -- export / import ----------------------------------------------------------

def _json_float(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _resolve_format(path, fmt):
    fmt = fmt or Path(path).suffix.lstrip(".").lower()
    if fmt not in FORMATS:
        raise UsageError(f"unknown export format {fmt!r}; expected one of {FORMATS}")
    return fmt


def _trace_rows(trace, timings):
    N = trace.total_steps
    for k in range(len(trace.times)):
        inner = k < N
        err = trace.errors[k] if inner else None
        yield [str(k), _fmt(trace.times[k]), _fmt(trace.doses[k]) if inner else "",
               _fmt(trace.output[k]), _fmt(err),
               ("1" if trace.update_fired[k] else "0") if inner else "",
               _fmt(trace.solve_wall[k]) if inner and timings else ""]


def _trace_to_dict(trace, timings):
    blank = lambda a: [_json_float(float(x)) for x in a] if timings else None
    return {
        "format": TRACE_FORMAT, "version": 1, "package_version": __version__,
        "mode": trace.mode, "dt": trace.dt,
        "times": [float(x) for x in trace.times],
        "output": [float(x) for x in trace.output],
        "doses": [float(x) for x in trace.doses],
        "errors": [_json_float(float(x)) for x in trace.errors],
        "update_fired": [bool(x) for x in trace.update_fired],
        "solve_wall": blank(trace.solve_wall),
        "update_wall": blank(trace.update_wall),
        "setup_wall": float(trace.setup_wall) if timings else None,
        "converged": [bool(x) for x in trace.converged],
        "states": None if trace.states is None else np.asarray(trace.states).tolist(),
        "config": trace.config,
    }


def _write(path, writer):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer(fh)
    except OSError as exc:
        raise OSError(exc.errno, exc.strerror, str(path)) from None


def export(obj, path, format=None, timings=True):
    """Write an :class:`MpcTrace` or :class:`ComparisonReport` to ``path``.

    ``format`` defaults to the file suffix.  ``timings=False`` blanks the wall
    times so that repeated runs produce byte-identical files.
    """
    fmt = _resolve_format(path, format)
    if isinstance(obj, ComparisonReport):
        if fmt == "json":
            _write(path, lambda fh: json.dump(obj.to_dict(), fh, indent=1))
        else:
            def rows(fh):
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("step", "t_days", "relative_error"))
                for k, (t, e) in enumerate(zip(obj.times, obj.step_errors)):
                    w.writerow((k, _fmt(t), _fmt(e)))
            _write(path, rows)
        return
    if not isinstance(obj, MpcTrace):
        raise UsageError(f"cannot export object of type {type(obj).__name__}")
    if fmt == "json":
        _write(path, lambda fh: json.dump(_trace_to_dict(obj, timings), fh))
    else:
        def rows(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            w.writerows(_trace_rows(obj, timings))
        _write(path, rows)


def _num(cell):
    return math.nan if cell == "" else float(cell)


def _trace_from_csv(fh, mode):
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(header) != CSV_COLUMNS:
        raise UsageError(f"not a trace CSV (expected columns {', '.join(CSV_COLUMNS)})")
    rows = list(reader)
    times = np.array([float(r[1]) for r in rows])
    output = np.array([float(r[3]) for r in rows])
    inner = rows[:-1]
    dt = float(times[1] - times[0]) if len(times) > 1 else math.nan
    n = len(inner)
    return MpcTrace(
        mode=mode, dt=dt, times=times, output=output,
        doses=np.array([float(r[2]) for r in inner]),
        errors=np.array([_num(r[4]) for r in inner]),
        update_fired=np.array([r[5] == "1" for r in inner], dtype=bool),
        solve_wall=np.nan_to_num(np.array([_num(r[6]) for r in inner])),
        update_wall=np.zeros(n), converged=np.ones(n, bool))


def _trace_from_dict(d):
    if d.get("format") != TRACE_FORMAT:
        raise UsageError("not a trace document")
    n = len(d["doses"])
    arr = lambda key: np.array([math.nan if x is None else x for x in d[key]], float)
    zeros = lambda key: np.zeros(n) if d.get(key) is None else arr(key)
    return MpcTrace(
        mode=d["mode"], dt=d["dt"], times=arr("times"), output=arr("output"),
        doses=arr("doses"), errors=arr("errors"),
        update_fired=np.array(d["update_fired"], dtype=bool).reshape(n),
        solve_wall=zeros("solve_wall"), update_wall=zeros("update_wall"),
        converged=np.array(d["converged"], dtype=bool).reshape(n),
        states=None if d.get("states") is None else np.array(d["states"], float),
        setup_wall=d.get("setup_wall") or 0.0, config=d.get("config") or {})


def read_trace(path, format=None, mode=""):
    """Inverse of :func:`export` for traces (``mode`` labels CSV imports)."""
    fmt = _resolve_format(path, format)
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            if fmt == "csv":
                return _trace_from_csv(fh, mode)
            return _trace_from_dict(json.load(fh))
    except OSError as exc:
        raise OSError(exc.errno, exc.strerror, str(path)) from None
    except (ValueError, KeyError, IndexError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"{path}: malformed trace ({exc})") from None

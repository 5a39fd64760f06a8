"""Finite-horizon dose optimization.

The tracking cost over a horizon of ``M`` steps is

    J(u) = 1/2 sum_j gamma_j u_j^2
           + sigma_w/2 * trapz_k (P_k - P_d)^2 + sigma_f/2 * (P_M - P_d)^2

with ``P_k`` the output at ``t0 + k dt``.  On the lifted surrogate ``P`` is
affine in the doses, so ``J`` is a convex quadratic; on the plant it is not.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .edmd import EDMD_C, EDMD_D, MODES
from .errors import InvalidDimensionError, LineSearchError, ModeMismatchError
from .plant import DoseSchedule, bateman, epo_concentration, simulate

__all__ = [
    "InputMap",
    "OcpSpec",
    "SolveReport",
    "build_input_map",
    "condense_lifted",
    "cost_and_gradient_lifted",
    "eval_cost",
    "make_ocp_spec",
    "nonlinear_objective",
    "project_box",
    "projected_bfgs",
    "solve_ocp_lifted",
    "solve_ocp_nonlinear",
    "trapezoid_weights",
]


@dataclass(frozen=True, eq=False)
class InputMap:
    """Surrogate input over the horizon as ``offset + gain @ u``."""

    mode: str
    offset: np.ndarray  # (M,)
    gain: np.ndarray  # (M, n_dose)


@dataclass(frozen=True, eq=False)
class OcpSpec:
    horizon_steps: int
    dose_weights: np.ndarray
    track_weight: float
    term_weight: float
    target: float
    dose_map: np.ndarray  # horizon step index of every dose variable
    lower: np.ndarray
    upper: np.ndarray
    dt: float
    t0: float = 0.0
    dose_times: np.ndarray | None = None
    history: DoseSchedule = field(default_factory=DoseSchedule.empty)
    input_map: InputMap | None = None
    omega5: float = 1.0

    def __post_init__(self):
        as_arr = lambda a: np.atleast_1d(np.asarray(a, dtype=float))
        for name in ("dose_weights", "lower", "upper"):
            object.__setattr__(self, name, as_arr(getattr(self, name)))
        object.__setattr__(self, "dose_map",
                           np.atleast_1d(np.asarray(self.dose_map, dtype=int)))
        if self.dose_times is None:
            object.__setattr__(self, "dose_times", self.t0 + self.dt * self.dose_map)
        else:
            object.__setattr__(self, "dose_times", as_arr(self.dose_times))
        n = self.n_dose
        shapes = {len(a) for a in (self.dose_weights, self.lower, self.upper,
                                   self.dose_times)}
        if shapes != {n}:
            raise InvalidDimensionError("one weight, bound and time per dose variable")
        if self.horizon_steps < 1:
            raise ValueError("horizon must have at least one step")
        if np.any(self.dose_weights < 0) or self.track_weight < 0 or self.term_weight < 0:
            raise ValueError("weights must be nonnegative")
        if not (self.track_weight > 0 or self.term_weight > 0
                or np.any(self.dose_weights > 0)):
            raise ValueError("at least one weight must be positive")
        if np.any(self.dose_map < 0) or np.any(self.dose_map >= self.horizon_steps):
            raise ValueError("dose_map indices must lie inside the horizon")
        if np.any(self.lower > self.upper):
            raise ValueError("empty box: lower > upper")

    @property
    def n_dose(self):
        return len(self.dose_map)

    @property
    def bounds(self):
        return self.lower, self.upper


def build_input_map(mode, params, t0, horizon_steps, dose_times, history):
    """Affine dose-to-input map of the surrogate over one horizon.

    For ``edmd-c`` the gain is the Bateman response sampled at step times,
    exact for linear PK; with saturable PK the offset is exact and the gain
    is its linear approximation.
    """
    if mode not in MODES:
        raise ValueError(f"unknown input encoding {mode!r}")
    dose_times = np.atleast_1d(np.asarray(dose_times, dtype=float))
    t = t0 + params.dt * np.arange(horizon_steps)
    if mode == EDMD_C:
        offset = np.atleast_1d(epo_concentration(params, history, t))
        gain = bateman(params, t[:, None] - dose_times[None, :])
    else:
        offset = np.zeros(horizon_steps)
        gain = np.zeros((horizon_steps, len(dose_times)))
        idx = np.floor((dose_times - t0) / params.dt + 1e-9).astype(int)
        gain[idx, np.arange(len(dose_times))] = 1.0
    return InputMap(mode, offset, gain)


def make_ocp_spec(params, *, t0, horizon_steps, dose_times, upper, dose_weight,
                  track_weight, term_weight, target, history=None, mode=None):
    """Assemble an :class:`OcpSpec` for the doses injected at ``dose_times``."""
    dose_times = np.atleast_1d(np.asarray(dose_times, dtype=float))
    history = DoseSchedule.empty() if history is None else history
    n = len(dose_times)
    dose_map = np.floor((dose_times - t0) / params.dt + 1e-9).astype(int)
    imap = None
    if mode is not None:
        imap = build_input_map(mode, params, t0, horizon_steps, dose_times, history)
    return OcpSpec(horizon_steps, np.broadcast_to(dose_weight, (n,)).astype(float),
                   track_weight, term_weight, target, dose_map, np.zeros(n),
                   np.broadcast_to(upper, (n,)).astype(float), params.dt, t0,
                   dose_times, history, imap, params.omega5)


def trapezoid_weights(M, dt):
    w = np.full(M + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def eval_cost(spec, output, u):
    P = np.asarray(output, dtype=float)
    u = np.asarray(u, dtype=float)
    if P.shape != (spec.horizon_steps + 1,):
        raise InvalidDimensionError(
            f"output trace has length {P.size}, expected {spec.horizon_steps + 1}")
    if u.shape != (spec.n_dose,):
        raise InvalidDimensionError(f"expected {spec.n_dose} doses, got {u.size}")
    dev = P - spec.target
    w = trapezoid_weights(spec.horizon_steps, spec.dt)
    return float(0.5 * spec.dose_weights @ u**2
                 + 0.5 * spec.track_weight * (w @ dev**2)
                 + 0.5 * spec.term_weight * dev[-1] ** 2)


def _check_lifted(model, spec):
    imap = spec.input_map
    if imap is None or imap.mode != model.mode:
        raise ModeMismatchError(
            f"model encodes {model.mode!r} inputs but the OCP maps doses to "
            f"{None if imap is None else imap.mode!r}")
    if model.n_inputs != 1:
        raise InvalidDimensionError("lifted OCP supports a single scalar input")
    return imap


def cost_and_gradient_lifted(model, spec, z0, u):
    """Cost on the surrogate and its exact gradient (adjoint recursion)."""
    imap = _check_lifted(model, spec)
    u = np.asarray(u, dtype=float)
    M = spec.horizon_steps
    A, b = model.A, model.B[:, 0]
    c = math.sqrt(spec.omega5) * model.C[0]
    w = imap.offset + imap.gain @ u
    Z = np.empty((M + 1, model.n_phi))
    Z[0] = z0
    for k in range(M):
        Z[k + 1] = A @ Z[k] + b * w[k]
    P = Z @ c
    J = eval_cost(spec, P, u)

    dev = P - spec.target
    dJdP = spec.track_weight * trapezoid_weights(M, spec.dt) * dev
    dJdP[-1] += spec.term_weight * dev[-1]
    AT = A.T
    lam = c * dJdP[M]
    dJdw = np.empty(M)
    for k in range(M - 1, -1, -1):
        dJdw[k] = b @ lam
        lam = AT @ lam + c * dJdP[k]
    return J, spec.dose_weights * u + imap.gain.T @ dJdw


def condense_lifted(model, spec, z0):
    """Output over the horizon as ``P = p0 + G @ u`` on the surrogate.

    ``p0`` is the free response (doses zero, history kept in the input
    offset) and ``G`` stacks the Markov parameters ``c A^j b`` convolved
    with the dose-to-input gain.
    """
    imap = _check_lifted(model, spec)
    M = spec.horizon_steps
    A, b = model.A, model.B[:, 0]
    c = math.sqrt(spec.omega5) * model.C[0]
    markov = np.empty(M)  # markov[j] = c A^j b
    x = b
    for j in range(M):
        markov[j] = c @ x
        x = A @ x
    free = np.empty(M + 1)
    z = np.asarray(z0, dtype=float)
    for k in range(M + 1):
        free[k] = c @ z
        z = A @ z
    idx = np.arange(M + 1)[:, None] - 1 - np.arange(M)[None, :]
    T = np.where(idx >= 0, markov[np.clip(idx, 0, None)], 0.0)  # (M+1, M)
    return free + T @ imap.offset, T @ imap.gain


def project_box(u, bounds):
    lower, upper = bounds
    return np.minimum(np.maximum(np.asarray(u, dtype=float), lower), upper)


@dataclass
class SolveReport:
    minimizer: np.ndarray
    objective: float
    proj_grad_norm: float
    iterations: int
    converged: bool
    n_evals: int = 0
    history: list = field(default_factory=list)
    message: str = ""


_EPS = 4 * np.finfo(float).eps


def _snap_to_bounds(u, g, bounds):
    """Put variables whose gradient pushes them through a bound onto it."""
    lower, upper = bounds
    trial = u - g
    snap = np.where(trial <= lower, lower, np.where(trial >= upper, upper, u))
    return None if np.array_equal(snap, u) else snap


def projected_bfgs(fun, bounds, u_init, tol=1e-8, max_iter=200, armijo=1e-4,
                   backtrack=0.5, max_backtracks=40, callback=None):
    """Minimize ``fun`` (returning value and gradient) over a box.

    Gradient projection with an inverse-BFGS matrix on the inactive
    variables and Armijo backtracking along the projection arc.  The matrix
    is reset whenever the active set changes; curvature pairs failing
    ``s.y > 0`` are skipped.
    """
    lower, upper = (np.broadcast_to(np.asarray(b, dtype=float), np.shape(u_init))
                    for b in bounds)
    bounds = (lower, upper)
    u = project_box(u_init, bounds)
    n = u.size
    f, g = fun(u)
    n_evals = 1
    history = [f]
    if callback is not None:
        callback(u)

    def report(converged, it, pgn, message):
        return SolveReport(u.copy(), f, pgn, it, converged, n_evals, history, message)

    if n == 0:
        return report(True, 0, 0.0, "no decision variables")

    H = np.eye(n)
    fresh = True  # H is a (scaled) identity
    prev_active = None
    pgn = np.inf
    for it in range(max_iter):
        pgn = float(np.linalg.norm(u - project_box(u - g, bounds)))
        if pgn <= tol:
            snap = _snap_to_bounds(u, g, bounds)
            if snap is not None:
                f_s, g_s = fun(snap)
                n_evals += 1
                if f_s <= f:
                    u, f, g = snap, f_s, g_s
                    history.append(f)
                    pgn = float(np.linalg.norm(u - project_box(u - g, bounds)))
            return report(True, it, pgn, "projected gradient below tolerance")
        # scaled to the box: a fixed 1e-3 band makes variables near a narrow
        # box's bound flip between active and free, resetting H every step
        eps = np.minimum(pgn, 1e-3 * (upper - lower))
        active = ((u <= lower + eps) & (g > 0)) | ((u >= upper - eps) & (g < 0))
        if prev_active is not None and np.any(active != prev_active):
            H, fresh = np.eye(n), True
        prev_active = active
        free = ~active

        stalled = False
        for attempt in range(2):
            d = -g.copy()
            d[free] = -(H[np.ix_(free, free)] @ g[free])
            alpha = 1.0
            for _ in range(max_backtracks):
                u_new = project_box(u + alpha * d, bounds)
                step = u_new - u
                if np.linalg.norm(step) <= _EPS * (1.0 + np.linalg.norm(u)):
                    stalled = True  # cost differences are below rounding
                    break
                slope = float(g @ step)
                if slope < 0:
                    f_new, g_new = fun(u_new)
                    n_evals += 1
                    if f_new <= f + armijo * slope:
                        break
                    # Armijo is unresolvable at rounding level; accept a
                    # non-increasing step whose end slope shows progress
                    if f_new <= f and g_new @ step <= (2 * armijo - 1) * slope:
                        break
                alpha *= backtrack
            else:
                if fresh or attempt == 1:
                    raise LineSearchError(
                        f"no sufficient decrease after {max_backtracks} backtracks "
                        f"(projected gradient norm {pgn:.3e})",
                        report(False, it, pgn, "line search failed"))
                H, fresh = np.eye(n), True  # retry once along steepest descent
                continue
            break
        if stalled:
            return report(pgn <= tol, it, pgn, "step below machine precision")

        s, y = step[free], (g_new - g)[free]
        sy = float(s @ y)
        u, f, g = u_new, f_new, g_new
        history.append(f)
        if callback is not None:
            callback(u)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            Hf = H[np.ix_(free, free)]
            if fresh:
                Hf = (sy / float(y @ y)) * np.eye(len(s))
                fresh = False
            rho = 1.0 / sy
            Hy = Hf @ y
            Hf = (Hf - rho * (np.outer(s, Hy) + np.outer(Hy, s))
                  + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s))
            H[np.ix_(free, free)] = Hf
    pgn = float(np.linalg.norm(u - project_box(u - g, bounds)))
    return report(pgn <= tol, max_iter, pgn, "iteration limit reached")


def solve_ocp_lifted(model, spec, z0, u_init=None, condensed=True, **solver_kw):
    """Minimize the surrogate cost; ``z0`` is the lifted current state.

    By default the horizon is condensed once (:func:`condense_lifted`) so
    every evaluation is a small dense quadratic; ``condensed=False`` runs
    the lifted rollout and adjoint at every evaluation instead.
    """
    z0 = np.asarray(z0, dtype=float)
    if u_init is None:
        u_init = spec.lower.copy()
    if not condensed:
        return projected_bfgs(lambda u: cost_and_gradient_lifted(model, spec, z0, u),
                              spec.bounds, u_init, **solver_kw)
    p0, G = condense_lifted(model, spec, z0)
    wts = spec.track_weight * trapezoid_weights(spec.horizon_steps, spec.dt)
    wts[-1] += spec.term_weight
    gam = spec.dose_weights

    def fun(u):
        dev = p0 + G @ u - spec.target
        f = 0.5 * float(gam @ (u * u)) + 0.5 * float(wts @ (dev * dev))
        return f, gam * u + G.T @ (wts * dev)

    return projected_bfgs(fun, spec.bounds, u_init, **solver_kw)


def nonlinear_objective(params, spec, state0):
    """Cost of ``spec`` evaluated by simulating the plant from ``state0``."""

    def J(u):
        sched = DoseSchedule(spec.history.times, spec.history.doses).merged(
            spec.dose_times, u)
        traj = simulate(params, state0, sched, spec.horizon_steps)
        return eval_cost(spec, traj.output, u)

    return J


def solve_ocp_nonlinear(params, spec, state0, u_init=None, fd_step=1e-8, tol=1e-6,
                        **solver_kw):
    """Same solver on the plant; gradients by forward differences.

    The default ``tol`` is looser than for the surrogate: forward differences
    carry an error of order ``fd_step * |J''|`` that a 1e-8 projected
    gradient test cannot see past.
    """
    J = nonlinear_objective(params, spec, state0)

    def fun(u):
        f = J(u)
        g = np.empty_like(u)
        for j in range(u.size):
            h = fd_step * max(1.0, abs(u[j]))
            e = u.copy()
            e[j] += h
            g[j] = (J(e) - f) / h
        return f, g

    if u_init is None:
        u_init = spec.lower.copy()
    return projected_bfgs(fun, spec.bounds, u_init, tol=tol, **solver_kw)

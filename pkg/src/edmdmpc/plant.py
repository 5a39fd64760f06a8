"""Truth model: a chain of advection-reaction population equations.

Each population ``y_k(t, x)`` on the maturity interval obeys

    y_t = kappa(E) y - v(E) y_x,       y(t, x_lo) = g_k(t),

where ``E(t)`` is the concentration produced by the dose schedule.  The first
population is fed by ``g0 * E / (E + K_m)``; population ``k >= 2`` is fed by
``alpha`` times the outflow of population ``k - 1`` at ``x_hi``.  Space is
discretized in Legendre modes (tau method for the inflow condition), time by
implicit Euler with the coefficients frozen at the step midpoint.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._backend import kernels
from .errors import InvalidDimensionError
from .spectral import SpectralGrid, build_grid

__all__ = [
    "DoseSchedule",
    "PlantParams",
    "PlantState",
    "Trajectory",
    "bateman",
    "boundary_inflow",
    "epo_concentration",
    "hemoglobin",
    "plant_step",
    "reaction_coeff",
    "simulate",
    "steady_state",
    "transport_coeff",
]

PK_MODELS = ("linear", "michaelis-menten")


@dataclass(frozen=True, eq=False)
class PlantParams:
    """Coefficient functions and discretization of the truth model.

    The defaults are a desk-scale configuration, not patient data.
    ``pk="michaelis-menten"`` switches the dose-to-concentration map to
    saturable elimination ``k_e * c / (1 + c / pk_km)`` (no longer linear in
    the doses).
    """

    grid: SpectralGrid = field(default_factory=lambda: build_grid(16, 0.0, 1.0))
    n_pop: int = 2
    kappa0: float = 0.2
    kappa1: float = 1.0
    v0: float = 0.15
    v1: float = 0.5
    K_m: float = 1.0
    g0: float = 1.0
    alpha: float = 1.0
    k_a: float = 2.0
    k_e: float = 0.4
    V_d: float = 1.0
    E_base: float = 0.1
    dt: float = 0.5
    omega5: float = 1.0
    pk: str = "linear"
    pk_km: float = 1.0

    def __post_init__(self):
        problems = []
        if self.n_pop < 1:
            problems.append("n_pop must be >= 1")
        if not self.v0 > 0 or self.v1 < 0:
            problems.append("need v0 > 0 and v1 >= 0")
        if not (self.k_a > 0 and self.k_e > 0) or self.k_a == self.k_e:
            problems.append("need k_a, k_e > 0 and k_a != k_e")
        for name in ("K_m", "dt", "omega5", "V_d", "pk_km"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        if self.E_base < 0:
            problems.append("E_base must be >= 0")
        if self.pk not in PK_MODELS:
            problems.append(f"pk must be one of {PK_MODELS}")
        if problems:
            raise ValueError("invalid plant parameters: " + "; ".join(problems))

    @property
    def n(self):
        return self.grid.n

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class DoseSchedule:
    """Injection times (days) and doses, with the upper bound of ``U_ad``."""

    times: np.ndarray
    doses: np.ndarray
    u_max: float = np.inf

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        doses = np.atleast_1d(np.asarray(self.doses, dtype=float))
        if times.shape != doses.shape or times.ndim != 1:
            raise InvalidDimensionError("times and doses must be 1-D of equal length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("injection times must be strictly increasing")
        if np.any(doses < 0) or np.any(doses > self.u_max):
            raise ValueError(f"doses must lie in [0, {self.u_max}]")
        times.setflags(write=False)
        doses.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "doses", doses)

    @classmethod
    def empty(cls, u_max=np.inf):
        return cls(np.empty(0), np.empty(0), u_max)

    @property
    def n_u(self):
        return len(self.times)

    def with_doses(self, doses):
        return DoseSchedule(self.times, doses, self.u_max)

    def merged(self, times, doses):
        """Schedule with extra injections added (times must not collide)."""
        t = np.concatenate([self.times, np.atleast_1d(times)])
        u = np.concatenate([self.doses, np.atleast_1d(doses)])
        order = np.argsort(t, kind="stable")
        return DoseSchedule(t[order], u[order], self.u_max)

    def before(self, t):
        keep = self.times < t
        return DoseSchedule(self.times[keep], self.doses[keep], self.u_max)


@dataclass(frozen=True, eq=False)
class PlantState:
    t: float
    pops: np.ndarray

    def __post_init__(self):
        pops = np.array(self.pops, dtype=float)
        if pops.ndim != 2:
            raise InvalidDimensionError("pops must have shape (n_pop, n)")
        if not np.all(np.isfinite(pops)):
            raise ValueError("plant state contains non-finite values")
        pops.setflags(write=False)
        object.__setattr__(self, "pops", pops)

    @property
    def last(self):
        return self.pops[-1]


def bateman(params, lag):
    """Concentration response to a unit dose, ``lag`` days after injection."""
    lag = np.asarray(lag, dtype=float)
    scale = params.k_a / (params.V_d * (params.k_a - params.k_e))
    pos = np.maximum(lag, 0.0)
    out = scale * (np.exp(-params.k_e * pos) - np.exp(-params.k_a * pos))
    return np.where(lag >= 0, out, 0.0)


def _mm_concentration(params, schedule, t):
    """Saturable-elimination PK integrated with fixed-step RK4."""
    k_a, k_e, V_d, km = params.k_a, params.k_e, params.V_d, params.pk_km

    def rhs(a, c):
        return -k_a * a, k_a * a / V_d - k_e * c / (1.0 + c / km)

    order = np.argsort(t, kind="stable")
    out = np.empty(len(t))
    a = c = 0.0
    now = 0.0
    doses = iter(zip(schedule.times, schedule.doses))
    pending = next(doses, None)
    h_max = 0.02
    for idx in order:
        target = t[idx]
        while True:
            stop = target
            if pending is not None and pending[0] <= target:
                stop = pending[0]
            span = stop - now
            if span > 0:
                m = int(np.ceil(span / h_max))
                h = span / m
                for _ in range(m):
                    a1, c1 = rhs(a, c)
                    a2, c2 = rhs(a + 0.5 * h * a1, c + 0.5 * h * c1)
                    a3, c3 = rhs(a + 0.5 * h * a2, c + 0.5 * h * c2)
                    a4, c4 = rhs(a + h * a3, c + h * c3)
                    a += h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
                    c += h / 6 * (c1 + 2 * c2 + 2 * c3 + c4)
                now = stop
            if pending is not None and pending[0] <= target:
                a += pending[1]
                pending = next(doses, None)
                continue
            break
        out[idx] = params.E_base + max(c, 0.0)
    return out


def epo_concentration(params, schedule, t):
    """Concentration ``E(t)`` generated by ``schedule`` (scalar or array ``t``).

    Linear PK is the superposition of Bateman responses on top of ``E_base``.
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0):
        raise ValueError("concentration requested at negative time")
    if params.pk == "linear":
        lag = t_arr[:, None] - schedule.times[None, :]
        E = params.E_base + bateman(params, lag) @ schedule.doses
    else:
        E = _mm_concentration(params, schedule, t_arr)
    return E if np.ndim(t) else float(E[0])


def reaction_coeff(params, E):
    return params.kappa0 + params.kappa1 * E / (E + params.K_m)


def transport_coeff(params, E):
    return params.v0 * (1.0 + params.v1 * E / (E + params.K_m))


def boundary_inflow(params, E, upstream_outflow=None):
    """Inflow value at ``x_lo``: dose-driven for population 1, coupled otherwise."""
    if upstream_outflow is None:
        return params.g0 * E / (E + params.K_m)
    return params.alpha * upstream_outflow


def hemoglobin(params, state):
    """Tracked output: ``sqrt(omega5)`` times mode 0 of the last population."""
    pops = state.pops if isinstance(state, PlantState) else np.asarray(state)
    return np.sqrt(params.omega5) * pops[..., -1, 0]


def _check_state(params, state):
    if state.pops.shape != (params.n_pop, params.n):
        raise InvalidDimensionError(
            f"state has shape {state.pops.shape}, expected {(params.n_pop, params.n)}")


def plant_step(params, state, schedule):
    """Advance every population by one implicit-Euler step of length ``dt``."""
    _check_state(params, state)
    E = epo_concentration(params, schedule, state.t + 0.5 * params.dt)
    g = params.grid
    pops = kernels.advance_chain(
        g.diff, g.bnd_lo, g.bnd_hi, state.pops,
        reaction_coeff(params, E), transport_coeff(params, E),
        boundary_inflow(params, E), params.alpha, params.dt)
    return PlantState(state.t + params.dt, pops)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (steps + 1, n_pop, n)
    output: np.ndarray

    def __len__(self):
        return len(self.times)

    def state(self, k):
        return PlantState(self.times[k], self.states[k])

    @property
    def plant_states(self):
        return [self.state(k) for k in range(len(self))]


def simulate(params, state0, schedule, steps):
    """Repeated ``plant_step``; same arithmetic, one kernel call."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    _check_state(params, state0)
    times = state0.t + params.dt * np.arange(steps + 1)
    E = epo_concentration(params, schedule, times[:-1] + 0.5 * params.dt)
    g = params.grid
    states = kernels.rollout_chain(
        g.diff, g.bnd_lo, g.bnd_hi, state0.pops,
        np.atleast_1d(reaction_coeff(params, E)),
        np.atleast_1d(transport_coeff(params, E)),
        np.atleast_1d(boundary_inflow(params, E)), params.alpha, params.dt)
    return Trajectory(times, states, hemoglobin(params, states))


def steady_state(params, E=None, t=0.0):
    """Equilibrium of the chain under a constant concentration (default ``E_base``)."""
    E = params.E_base if E is None else E
    g = params.grid
    kappa, v = reaction_coeff(params, E), transport_coeff(params, E)
    M = kappa * np.eye(g.n) - v * g.diff
    M[-1] = g.bnd_lo
    pops = np.empty((params.n_pop, g.n))
    inflow = boundary_inflow(params, E)
    for p in range(params.n_pop):
        rhs = np.zeros(g.n)
        rhs[-1] = inflow
        pops[p] = np.linalg.solve(M, rhs)
        inflow = boundary_inflow(params, E, g.bnd_hi @ pops[p])
    return PlantState(t, pops)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from edmdmpc import _kernels_py
from edmdmpc.errors import InvalidDimensionError
from edmdmpc.plant import (DoseSchedule, PlantParams, PlantState, bateman,
                           boundary_inflow, epo_concentration, hemoglobin, plant_step,
                           reaction_coeff, simulate, steady_state, transport_coeff)
from edmdmpc.spectral import build_grid, eval_coeffs, project


def transport_error(dt, n=32, v=0.1, tau=1.0):
    """Max error of a kappa = 0 run against the shifted initial bump."""
    g = build_grid(n, 0.0, 1.0)
    bump = lambda x: np.exp(-((x - 0.4) / 0.12) ** 2)
    y = project(g, bump, 4 * n)[None, :]
    steps = int(round(tau / dt))
    for _ in range(steps):
        y = _kernels_py.advance_chain(g.diff, g.bnd_lo, g.bnd_hi, y, 0.0, v, 0.0, 1.0, dt)
    x = np.linspace(0.05, 0.95, 30)
    return np.abs(eval_coeffs(g, y[0], x) - bump(x - v * tau)).max()


# -- parameters and schedules -------------------------------------------------

def test_default_parameters(params):
    assert (params.n, params.n_pop, params.dt) == (16, 2, 0.5)
    assert (params.k_a, params.k_e, params.E_base) == (2.0, 0.4, 0.1)


@pytest.mark.parametrize("bad", [dict(v0=0.0), dict(v1=-1.0), dict(k_a=0.4),
                                 dict(K_m=0.0), dict(dt=-1.0), dict(omega5=0.0),
                                 dict(n_pop=0), dict(pk="zero-order")])
def test_invalid_parameters(bad):
    with pytest.raises(ValueError):
        PlantParams(**bad)


def test_dose_schedule_validation():
    with pytest.raises(ValueError):
        DoseSchedule([1.0, 1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        DoseSchedule([1.0], [0.3], u_max=0.2)
    with pytest.raises(ValueError):
        DoseSchedule([1.0], [-0.1])
    with pytest.raises(InvalidDimensionError):
        DoseSchedule([1.0, 2.0], [0.1])
    s = DoseSchedule([1.0, 3.0], [0.1, 0.2], 0.5).merged([2.0], [0.05])
    np.testing.assert_array_equal(s.times, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(s.before(2.5).doses, [0.1, 0.05])


def test_state_validation():
    with pytest.raises(InvalidDimensionError):
        PlantState(0.0, np.ones(3))
    with pytest.raises(ValueError):
        PlantState(0.0, np.full((1, 3), np.nan))


# -- concentration ------------------------------------------------------------

def test_zero_doses_give_baseline(params):
    s = DoseSchedule([1.0, 3.0], [0.0, 0.0])
    np.testing.assert_array_equal(epo_concentration(params, s, np.linspace(0, 9, 19)),
                                  params.E_base)


def test_bateman_peak_time(params):
    s = DoseSchedule([0.0], [1.0])
    t_star = np.log(params.k_a / params.k_e) / (params.k_a - params.k_e)
    t = np.linspace(0, 10, 20001)
    E = epo_concentration(params, s, t)
    assert t[np.argmax(E)] == pytest.approx(t_star, abs=1e-3)
    h = 1e-5
    assert epo_concentration(params, s, t_star) > epo_concentration(params, s, t_star + h)
    assert epo_concentration(params, s, t_star) > epo_concentration(params, s, t_star - h)


def test_bateman_solves_compartment_ode(params):
    # c' = k_a a / V_d - k_e c with a = exp(-k_a t): check by central differences
    t = np.linspace(0.1, 6, 50)
    h = 1e-5
    dc = (bateman(params, t + h) - bateman(params, t - h)) / (2 * h)
    rhs = params.k_a * np.exp(-params.k_a * t) / params.V_d - params.k_e * bateman(params, t)
    np.testing.assert_allclose(dc, rhs, atol=1e-8)
    assert bateman(params, -1.0) == 0.0


@given(u=st.lists(st.floats(0, 1), min_size=3, max_size=3), t=st.floats(0, 30))
def test_concentration_linear_in_doses(u, t):
    p = PlantParams()
    s1 = DoseSchedule([1.0, 3.0, 5.0], u)
    s2 = DoseSchedule([1.0, 3.0, 5.0], 2 * np.asarray(u))
    e1 = epo_concentration(p, s1, t) - p.E_base
    e2 = epo_concentration(p, s2, t) - p.E_base
    assert e2 == pytest.approx(2 * e1, rel=1e-12, abs=1e-15)


@given(i=st.integers(0, 2), bump=st.floats(1e-3, 1.0))
def test_concentration_monotone_in_each_dose(i, bump):
    p = PlantParams()
    u = np.array([0.1, 0.2, 0.05])
    times = np.array([1.0, 3.0, 5.0])
    v = u.copy()
    v[i] += bump
    t = np.linspace(times[i] + 0.01, 20, 40)
    assert np.all(epo_concentration(p, DoseSchedule(times, v), t)
                  > epo_concentration(p, DoseSchedule(times, u), t))


def test_negative_time_rejected(params):
    with pytest.raises(ValueError):
        epo_concentration(params, DoseSchedule.empty(), -0.5)


def test_michaelis_menten_limits():
    s = DoseSchedule([0.5, 2.0], [0.3, 0.1])
    t = np.linspace(0, 8, 17)
    lin = epo_concentration(PlantParams(), s, t)
    near_lin = epo_concentration(PlantParams(pk="michaelis-menten", pk_km=1e9), s, t)
    np.testing.assert_allclose(near_lin, lin, atol=1e-8)
    sat = epo_concentration(PlantParams(pk="michaelis-menten", pk_km=0.05), s, t)
    # saturable elimination clears more slowly
    assert np.all(sat[t > 0.5] > lin[t > 0.5])
    # unordered query times give the same values
    perm = np.random.default_rng(0).permutation(t.size)
    np.testing.assert_allclose(
        epo_concentration(PlantParams(pk="michaelis-menten", pk_km=0.05), s, t[perm]),
        sat[perm], rtol=0, atol=0)


# -- coefficient functions ----------------------------------------------------

def test_coefficient_examples(params):
    assert reaction_coeff(params, 0.0) == params.kappa0
    assert transport_coeff(params, 0.0) == params.v0
    assert boundary_inflow(params, 0.0) == 0.0
    assert reaction_coeff(params, 1e12) == pytest.approx(params.kappa0 + params.kappa1)
    assert reaction_coeff(params, params.K_m) == pytest.approx(
        params.kappa0 + params.kappa1 / 2)
    assert boundary_inflow(params, 5.0, upstream_outflow=0.3) == params.alpha * 0.3


def test_hemoglobin_examples():
    p4 = PlantParams(omega5=4.0)
    pops = np.zeros((2, 16))
    pops[-1, 0] = 1.5
    assert hemoglobin(p4, PlantState(0.0, pops)) == pytest.approx(3.0)
    assert hemoglobin(PlantParams(), PlantState(0.0, np.zeros((2, 16)))) == 0.0
    pops[-1] = np.random.default_rng(0).normal(size=16)
    pops[-1, 0] = 3.5
    pops[0, 0] = 100.0  # only the last population counts
    assert hemoglobin(PlantParams(), PlantState(0.0, pops)) == 3.5


# -- time stepping ------------------------------------------------------------

def test_transport_against_characteristics():
    assert transport_error(1e-3) <= 1e-3


def test_zero_state_is_fixed_point():
    p = PlantParams(E_base=0.0)
    s = plant_step(p, PlantState(0.0, np.zeros((2, 16))), DoseSchedule.empty())
    np.testing.assert_array_equal(s.pops, 0.0)


def test_pure_reaction_closed_form():
    g = build_grid(8)
    rng = np.random.default_rng(3)
    y = rng.normal(size=(1, 8))
    kappa, dt = 0.6, 0.1
    inflow = 0.37
    out = _kernels_py.advance_chain(g.diff, g.bnd_lo, g.bnd_hi, y, kappa, 0.0, inflow,
                                    1.0, dt)
    np.testing.assert_allclose(out[0, :-1], y[0, :-1] / (1 - dt * kappa), rtol=1e-13)
    assert g.bnd_lo @ out[0] == pytest.approx(inflow, abs=1e-13)


def test_boundary_enforced_every_step(params, state0):
    s = DoseSchedule([0.5, 2.0], [0.05, 0.05])
    traj = simulate(params, state0, s, 12)
    E = epo_concentration(params, s, traj.times[:-1] + 0.5 * params.dt)
    for k in range(1, len(traj)):
        pops = traj.states[k]
        assert eval_coeffs(params.grid, pops[0], 0.0) == pytest.approx(
            boundary_inflow(params, E[k - 1]), abs=1e-10)
        up = params.grid.bnd_hi @ traj.states[k - 1][0]
        assert eval_coeffs(params.grid, pops[1], 0.0) == pytest.approx(
            params.alpha * up, abs=1e-10)


def test_steady_state_is_fixed_point(params, state0):
    nxt = plant_step(params, state0, DoseSchedule.empty())
    np.testing.assert_allclose(nxt.pops, state0.pops, atol=1e-12)
    assert nxt.t == params.dt
    assert hemoglobin(params, state0) == pytest.approx(1.6891065902636, rel=1e-10)


def test_simulate_matches_repeated_steps(params, state0):
    s = DoseSchedule([1.0, 3.0], [0.04, 0.02])
    traj = simulate(params, state0, s, 10)
    st_ = state0
    for k in range(10):
        st_ = plant_step(params, st_, s)
        np.testing.assert_allclose(st_.pops, traj.states[k + 1], rtol=1e-13, atol=1e-15)
    assert traj.output[0] == hemoglobin(params, state0)


def test_simulate_examples(params, state0):
    s = DoseSchedule([1.0], [0.05])
    assert len(simulate(params, state0, s, 0)) == 1
    a, b = simulate(params, state0, s, 20), simulate(params, state0, s, 20)
    np.testing.assert_array_equal(a.states, b.states)
    short = simulate(params, state0, s, 10)
    np.testing.assert_array_equal(short.output, a.output[:11])
    with pytest.raises(ValueError):
        simulate(params, state0, s, -1)
    with pytest.raises(InvalidDimensionError):
        simulate(params, PlantState(0.0, np.ones((3, 16))), s, 2)


def test_positivity_default_regime():
    # small step satisfying dt <= 0.5 / max kappa, 21 days of dosing at u_max
    p = PlantParams(dt=0.25)
    days = np.array([7 * w + d for w in range(3) for d in (1, 3, 5)], float)
    traj = simulate(p, steady_state(p), DoseSchedule(days, np.full(days.size, 0.05)), 84)
    x = np.linspace(0, 1, 101)
    vals = np.array([[eval_coeffs(p.grid, pop, x) for pop in st_] for st_ in traj.states])
    assert vals.min() >= -1e-8

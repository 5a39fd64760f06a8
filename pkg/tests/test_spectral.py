import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial import legendre as npleg

from edmdmpc.errors import InvalidDimensionError, OutOfDomainError
from edmdmpc.spectral import (build_grid, eval_coeffs, legendre_eval, legendre_vander,
                              project)

# hand-expanded table, L^0 .. L^5
TABLE = [
    lambda s: np.ones_like(s),
    lambda s: s,
    lambda s: (3 * s**2 - 1) / 2,
    lambda s: (5 * s**3 - 3 * s) / 2,
    lambda s: (35 * s**4 - 30 * s**2 + 3) / 8,
    lambda s: (63 * s**5 - 70 * s**3 + 15 * s) / 8,
]


@pytest.mark.parametrize("j, s, expected", [(0, 0.3, 1.0), (1, -0.7, -0.7), (2, 0.5, -0.125)])
def test_legendre_eval_examples(j, s, expected):
    assert legendre_eval(j, s) == pytest.approx(expected, abs=1e-15)


def test_legendre_eval_matches_table(rng):
    s = rng.uniform(-1, 1, 200)
    for j, poly in enumerate(TABLE):
        np.testing.assert_allclose(legendre_eval(j, s), poly(s), atol=1e-13)


def test_legendre_eval_high_degree_vs_numpy(rng):
    s = rng.uniform(-1, 1, 200)
    for j in range(13):
        np.testing.assert_allclose(legendre_eval(j, s), npleg.legval(s, np.eye(13)[j]),
                                   atol=1e-13)


def test_legendre_eval_negative_degree():
    with pytest.raises(InvalidDimensionError):
        legendre_eval(-1, 0.0)


def test_vander_columns_match_eval(rng):
    s = rng.uniform(-1, 1, 17)
    V = legendre_vander(s, 8)
    for j in range(8):
        np.testing.assert_allclose(V[:, j], legendre_eval(j, s), atol=1e-14)


def test_diff_examples():
    g = build_grid(6, -1.0, 1.0)
    e = np.eye(6)
    np.testing.assert_array_equal(g.diff @ e[1], e[0])
    np.testing.assert_array_equal(g.diff @ e[3], 5 * e[2] + e[0])


def test_boundary_functionals():
    g = build_grid(9, 0.0, 2.0)
    for j in range(9):
        assert g.bnd_hi @ np.eye(9)[j] == 1.0
        assert g.bnd_lo @ np.eye(9)[j] == (-1.0) ** j
        assert eval_coeffs(g, np.eye(9)[j], 0.0) == pytest.approx((-1.0) ** j, abs=1e-14)


@given(n=st.integers(2, 14), lo=st.floats(-3, 3), width=st.floats(0.1, 5))
def test_diff_exact_on_polynomials(n, lo, width):
    g = build_grid(n, lo, lo + width)
    c = np.random.default_rng(n).normal(size=n)
    x = np.linspace(g.x_lo, g.x_hi, 50)
    s = g.to_reference(x)
    # derivative oracle: numpy's Legendre derivative plus the chain rule
    ref = npleg.legval(s, npleg.legder(c)) * 2.0 / width if n > 1 else 0 * x
    got = eval_coeffs(g, g.diff @ c, x)
    np.testing.assert_allclose(got, ref, atol=1e-10 * max(1.0, np.abs(ref).max()))


def test_build_grid_errors():
    with pytest.raises(InvalidDimensionError):
        build_grid(1)
    with pytest.raises(InvalidDimensionError):
        build_grid(4, 1.0, 1.0)


def test_grid_is_read_only():
    g = build_grid(4)
    with pytest.raises(ValueError):
        g.diff[0, 1] = 3.0


def test_eval_coeffs_examples(rng):
    g = build_grid(7, 0.5, 2.5)
    assert eval_coeffs(g, [2.5, 0, 0, 0, 0, 0, 0], 1.3) == pytest.approx(2.5)
    assert eval_coeffs(g, np.eye(7)[1], 0.5) == pytest.approx(-1.0)
    c = rng.normal(size=7)
    assert eval_coeffs(g, c, 2.5) == pytest.approx(c.sum(), abs=1e-13)


def test_eval_coeffs_out_of_domain():
    g = build_grid(4)
    with pytest.raises(OutOfDomainError):
        eval_coeffs(g, np.ones(4), 1.01)
    with pytest.raises(InvalidDimensionError):
        eval_coeffs(g, np.ones(3), 0.5)


def test_project_reproduces_polynomials(rng):
    g = build_grid(6, 0.0, 3.0)
    c = rng.normal(size=6)
    np.testing.assert_allclose(project(g, lambda x: eval_coeffs(g, c, x)), c, atol=1e-12)

"""Legendre modal basis on a 1-D maturity interval.

States are stored as Legendre coefficient vectors ``c`` so that
``y(x) = sum_j c[j] * L^j(s(x))`` with ``s`` the affine map onto [-1, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimensionError, OutOfDomainError

__all__ = [
    "SpectralGrid",
    "build_grid",
    "eval_coeffs",
    "legendre_eval",
    "legendre_vander",
    "project",
]


def legendre_eval(j, s):
    """Evaluate the degree-``j`` Legendre polynomial at ``s``.

    Uses the three-term recurrence; ``s`` may be a scalar or an array.
    """
    if j < 0:
        raise InvalidDimensionError(f"degree must be >= 0, got {j}")
    s = np.asarray(s, dtype=float)
    p_prev = np.ones_like(s)
    if j == 0:
        return p_prev if p_prev.ndim else float(p_prev)
    p = s.copy()
    for k in range(1, j):
        p_prev, p = p, ((2 * k + 1) * s * p - k * p_prev) / (k + 1)
    return p if p.ndim else float(p)


def legendre_vander(s, deg):
    """Values ``L^0(s) .. L^{deg-1}(s)`` stacked along a new last axis."""
    s = np.asarray(s, dtype=float)
    out = np.empty(s.shape + (deg,))
    out[..., 0] = 1.0
    if deg > 1:
        out[..., 1] = s
    for k in range(1, deg - 1):
        out[..., k + 1] = ((2 * k + 1) * s * out[..., k] - k * out[..., k - 1]) / (k + 1)
    return out


@dataclass(frozen=True, eq=False)
class SpectralGrid:
    """Modal Legendre basis of size ``n`` on ``[x_lo, x_hi]``.

    ``diff`` maps coefficients of ``y`` to coefficients of ``dy/dx`` (the
    chain-rule factor is already included); ``bnd_lo``/``bnd_hi`` are the
    point-evaluation functionals at the two ends.
    """

    n: int
    x_lo: float
    x_hi: float
    diff: np.ndarray
    bnd_lo: np.ndarray
    bnd_hi: np.ndarray

    @property
    def length(self):
        return self.x_hi - self.x_lo

    def to_reference(self, x):
        return 2.0 * (np.asarray(x, dtype=float) - self.x_lo) / self.length - 1.0

    def to_physical(self, s):
        return self.x_lo + 0.5 * (np.asarray(s, dtype=float) + 1.0) * self.length


def build_grid(n, x_lo=0.0, x_hi=1.0):
    if int(n) != n or n < 2:
        raise InvalidDimensionError(f"need at least 2 modes, got n={n}")
    if not x_lo < x_hi:
        raise InvalidDimensionError(f"empty interval [{x_lo}, {x_hi}]")
    n = int(n)
    # d/ds L^k = sum over j < k with k - j odd of (2j + 1) L^j
    j = np.arange(n)[:, None]
    k = np.arange(n)[None, :]
    diff = np.where((k > j) & ((k - j) % 2 == 1), 2.0 * j + 1.0, 0.0)
    diff *= 2.0 / (x_hi - x_lo)
    bnd_lo = (-1.0) ** np.arange(n)
    bnd_hi = np.ones(n)
    for arr in (diff, bnd_lo, bnd_hi):
        arr.setflags(write=False)
    return SpectralGrid(n, float(x_lo), float(x_hi), diff, bnd_lo, bnd_hi)


def eval_coeffs(grid, coeffs, x):
    """Evaluate the expansion with coefficients ``coeffs`` at physical ``x``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != grid.n:
        raise InvalidDimensionError(
            f"expected {grid.n} coefficients, got {coeffs.shape[-1]}")
    x = np.asarray(x, dtype=float)
    slack = 1e-12 * grid.length
    if np.any(x < grid.x_lo - slack) or np.any(x > grid.x_hi + slack):
        raise OutOfDomainError(
            f"x outside [{grid.x_lo}, {grid.x_hi}]")
    s = np.clip(grid.to_reference(x), -1.0, 1.0)
    vals = legendre_vander(s, grid.n) @ coeffs
    return vals if np.ndim(vals) else float(vals)


def project(grid, func, quad_points=None):
    """L2-project ``func`` (callable on physical x) onto the modal basis."""
    nq = quad_points or 2 * grid.n + 8
    s, w = np.polynomial.legendre.leggauss(nq)
    fx = np.asarray(func(grid.to_physical(s)), dtype=float)
    V = legendre_vander(s, grid.n)
    return (2 * np.arange(grid.n) + 1) / 2.0 * (V.T @ (w * fx))

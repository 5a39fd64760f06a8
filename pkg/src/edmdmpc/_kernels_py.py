"""Pure-Python (numpy) implementation of the plant time-stepping kernels.

Mirrors ``_kernels.pyx`` call for call; used when the compiled extension is
unavailable or ``EDMDMPC_PURE_PYTHON`` is set.
"""
import numpy as np

from .errors import SingularSystemError


def _step_matrix(diff, bnd_lo, kappa, v, dt):
    n = diff.shape[0]
    M = dt * v * diff
    M[np.diag_indices(n)] += 1.0 - dt * kappa
    # tau method: last modal equation replaced by the inflow boundary row
    M[-1] = bnd_lo
    return M


def _rhs(bnd_hi, y, inflow, alpha):
    rhs = y.T.copy()
    rhs[-1, 0] = inflow
    rhs[-1, 1:] = alpha * (y[:-1] @ bnd_hi)
    return rhs


def advance_chain(diff, bnd_lo, bnd_hi, y, kappa, v, inflow, alpha, dt):
    """One implicit-Euler step for every population of the chain.

    ``y`` has shape ``(n_pop, n)``; returns a new array of the same shape.
    Population ``p >= 1`` receives ``alpha`` times the old outflow of ``p-1``.
    """
    y = np.asarray(y, dtype=float)
    M = _step_matrix(diff, bnd_lo, kappa, v, dt)
    try:
        sol = np.linalg.solve(M, _rhs(bnd_hi, y, inflow, alpha))
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            f"implicit step matrix is singular (kappa={kappa}, v={v}, dt={dt})") from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("implicit step produced non-finite values")
    return np.ascontiguousarray(sol.T)


def rollout_chain(diff, bnd_lo, bnd_hi, y0, kappa, v, inflow, alpha, dt):
    """Apply ``advance_chain`` once per entry of the coefficient sequences.

    Returns all states, shape ``(steps + 1, n_pop, n)``.
    """
    steps = len(kappa)
    y0 = np.asarray(y0, dtype=float)
    out = np.empty((steps + 1,) + y0.shape)
    out[0] = y0
    for k in range(steps):
        out[k + 1] = advance_chain(diff, bnd_lo, bnd_hi, out[k], kappa[k], v[k],
                                   inflow[k], alpha, dt)
    return out

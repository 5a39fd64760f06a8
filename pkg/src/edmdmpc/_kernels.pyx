# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled plant time-stepping kernels (see ``_kernels_py`` for the reference)."""
import numpy as np

from libc.math cimport fabs, isfinite

from .errors import SingularSystemError


cdef int _step(const double[:, ::1] diff, const double[::1] bnd_lo,
               const double[::1] bnd_hi, const double[:, ::1] y,
               double[:, ::1] out, double[:, ::1] M, double[:, ::1] R,
               double kappa, double v, double inflow, double alpha,
               double dt) noexcept nogil:
    cdef Py_ssize_t n = diff.shape[0]
    cdef Py_ssize_t npop = y.shape[0]
    cdef Py_ssize_t i, j, k, p, piv
    cdef double amax, f, s, tmp, diag = 1.0 - dt * kappa, dv = dt * v

    for i in range(n - 1):
        for j in range(n):
            M[i, j] = dv * diff[i, j]
        M[i, i] += diag
    for j in range(n):
        M[n - 1, j] = bnd_lo[j]

    for p in range(npop):
        for i in range(n - 1):
            R[i, p] = y[p, i]
    R[n - 1, 0] = inflow
    for p in range(1, npop):
        s = 0.0
        for j in range(n):
            s += bnd_hi[j] * y[p - 1, j]
        R[n - 1, p] = alpha * s

    # Gaussian elimination, partial pivoting
    for k in range(n):
        piv = k
        amax = fabs(M[k, k])
        for i in range(k + 1, n):
            if fabs(M[i, k]) > amax:
                amax = fabs(M[i, k])
                piv = i
        if amax == 0.0:
            return -1
        if piv != k:
            for j in range(k, n):
                tmp = M[k, j]
                M[k, j] = M[piv, j]
                M[piv, j] = tmp
            for p in range(npop):
                tmp = R[k, p]
                R[k, p] = R[piv, p]
                R[piv, p] = tmp
        for i in range(k + 1, n):
            f = M[i, k] / M[k, k]
            if f != 0.0:
                for j in range(k + 1, n):
                    M[i, j] -= f * M[k, j]
                for p in range(npop):
                    R[i, p] -= f * R[k, p]

    for p in range(npop):
        for i in range(n - 1, -1, -1):
            s = R[i, p]
            for j in range(i + 1, n):
                s -= M[i, j] * out[p, j]
            s /= M[i, i]
            if not isfinite(s):
                return -2
            out[p, i] = s
    return 0


cdef _raise(int code, double kappa, double v, double dt):
    if code == -1:
        raise SingularSystemError(
            f"implicit step matrix is singular (kappa={kappa}, v={v}, dt={dt})")
    raise SingularSystemError("implicit step produced non-finite values")


def advance_chain(diff, bnd_lo, bnd_hi, y, double kappa, double v,
                  double inflow, double alpha, double dt):
    cdef const double[:, ::1] D = np.ascontiguousarray(diff, dtype=np.float64)
    cdef const double[::1] lo = np.ascontiguousarray(bnd_lo, dtype=np.float64)
    cdef const double[::1] hi = np.ascontiguousarray(bnd_hi, dtype=np.float64)
    cdef const double[:, ::1] Y = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = D.shape[0]
    out = np.empty((Y.shape[0], n))
    cdef double[:, ::1] O = out
    cdef double[:, ::1] M = np.empty((n, n))
    cdef double[:, ::1] R = np.empty((n, Y.shape[0]))
    cdef int code
    with nogil:
        code = _step(D, lo, hi, Y, O, M, R, kappa, v, inflow, alpha, dt)
    if code:
        _raise(code, kappa, v, dt)
    return out


def rollout_chain(diff, bnd_lo, bnd_hi, y0, kappa, v, inflow, double alpha,
                  double dt):
    cdef const double[:, ::1] D = np.ascontiguousarray(diff, dtype=np.float64)
    cdef const double[::1] lo = np.ascontiguousarray(bnd_lo, dtype=np.float64)
    cdef const double[::1] hi = np.ascontiguousarray(bnd_hi, dtype=np.float64)
    cdef const double[:, ::1] Y0 = np.ascontiguousarray(y0, dtype=np.float64)
    cdef const double[::1] kap = np.ascontiguousarray(kappa, dtype=np.float64)
    cdef const double[::1] vel = np.ascontiguousarray(v, dtype=np.float64)
    cdef const double[::1] g = np.ascontiguousarray(inflow, dtype=np.float64)
    cdef Py_ssize_t steps = kap.shape[0]
    cdef Py_ssize_t n = D.shape[0], npop = Y0.shape[0], k
    out = np.empty((steps + 1, npop, n))
    cdef double[:, :, ::1] O = out
    O[0, :, :] = Y0
    cdef double[:, ::1] M = np.empty((n, n))
    cdef double[:, ::1] R = np.empty((n, npop))
    cdef int code = 0
    with nogil:
        for k in range(steps):
            code = _step(D, lo, hi, O[k], O[k + 1], M, R,
                         kap[k], vel[k], g[k], alpha, dt)
            if code:
                break
    if code:
        _raise(code, kap[k], vel[k], dt)
    return out

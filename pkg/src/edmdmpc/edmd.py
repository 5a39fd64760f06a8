"""Extended dynamic mode decomposition with control.

Snapshots ``(y_k, u_k, y_{k+1})`` of the last population are lifted with a
dictionary ``psi`` and a linear surrogate

    z_{k+1} = A z_k + B u_k,      y_hat_k = C z_k,      z_0 = psi(y_0)

is fitted by truncated-SVD least squares.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateStateError, InvalidDimensionError
from .plant import epo_concentration, simulate
from .spectral import legendre_vander

__all__ = [
    "EDMD_C",
    "EDMD_D",
    "EdmdModel",
    "IdentityDictionary",
    "LiftingDictionary",
    "RankDeficiencyWarning",
    "SnapshotSet",
    "collect_snapshots",
    "encode_input",
    "encode_inputs",
    "fit",
    "lift",
    "load_model",
    "predict",
    "refit_window",
    "save_model",
]

EDMD_C = "edmd-c"
EDMD_D = "edmd-d"
MODES = (EDMD_C, EDMD_D)
MODEL_FORMAT_VERSION = 1


class RankDeficiencyWarning(UserWarning):
    """SVD truncation removed directions excited by the input."""


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"unknown input encoding {mode!r}; expected one of {MODES}")
    return mode


@dataclass(frozen=True)
class LiftingDictionary:
    """``psi_1 = sqrt(omega5) y_0`` followed by ``L^j(y_i / sum(y))``.

    Entries after the first are ordered component-major: for each component
    ``i`` the degrees ``j = 0 .. n_legendre - 1``.
    """

    n: int
    n_legendre: int
    omega5: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.n_legendre < 1:
            raise InvalidDimensionError("need n >= 1 and n_legendre >= 1")

    @property
    def n_phi(self):
        return 1 + self.n * self.n_legendre

    def lift_many(self, Y):
        Y = np.asarray(Y, dtype=float)
        if Y.shape[0] != self.n:
            raise InvalidDimensionError(f"state length {Y.shape[0]} != {self.n}")
        total = Y.sum(axis=0)
        if np.any(np.abs(total) < 1e-12):
            raise DegenerateStateError(
                "component sum vanishes; normalized observables undefined")
        ratios = Y / total
        V = legendre_vander(ratios, self.n_legendre)  # (n, m, N_L)
        Z = np.empty((self.n_phi, Y.shape[1]))
        Z[0] = np.sqrt(self.omega5) * Y[0]
        Z[1:] = V.transpose(0, 2, 1).reshape(self.n * self.n_legendre, -1)
        return Z

    def lift(self, y):
        return self.lift_many(np.asarray(y, dtype=float)[:, None])[:, 0]

    def to_dict(self):
        return {"kind": "legendre", "n": self.n, "n_legendre": self.n_legendre,
                "omega5": self.omega5}


@dataclass(frozen=True)
class IdentityDictionary:
    """Raw state components, optionally augmented by the constant 1."""

    n: int
    constant: bool = True

    @property
    def n_phi(self):
        return self.n + int(self.constant)

    def lift_many(self, Y):
        Y = np.asarray(Y, dtype=float)
        if Y.shape[0] != self.n:
            raise InvalidDimensionError(f"state length {Y.shape[0]} != {self.n}")
        if self.constant:
            return np.vstack([Y, np.ones((1, Y.shape[1]))])
        return Y.copy()

    def lift(self, y):
        return self.lift_many(np.asarray(y, dtype=float)[:, None])[:, 0]

    def to_dict(self):
        return {"kind": "identity", "n": self.n, "constant": self.constant}


def dictionary_from_dict(doc):
    doc = dict(doc)
    kind = doc.pop("kind")
    if kind == "legendre":
        return LiftingDictionary(**doc)
    if kind == "identity":
        return IdentityDictionary(**doc)
    raise ValueError(f"unknown dictionary kind {kind!r}")


def lift(dictionary, y):
    return dictionary.lift(y)


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    Y0: np.ndarray
    Y1: np.ndarray
    U: np.ndarray
    mode: str

    def __post_init__(self):
        Y0, Y1 = np.asarray(self.Y0, dtype=float), np.asarray(self.Y1, dtype=float)
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        if Y0.shape != Y1.shape or Y0.ndim != 2:
            raise InvalidDimensionError("Y0 and Y1 must be 2-D with equal shapes")
        if U.shape[1] != Y0.shape[1]:
            raise InvalidDimensionError("U must have one column per snapshot")
        if Y0.shape[1] == 0:
            raise InvalidDimensionError("snapshot set is empty")
        object.__setattr__(self, "Y0", Y0)
        object.__setattr__(self, "Y1", Y1)
        object.__setattr__(self, "U", U)

    @property
    def m(self):
        return self.Y0.shape[1]

    def concat(self, other):
        if other.mode != self.mode:
            raise ValueError("cannot join snapshot sets with different encodings")
        return SnapshotSet(np.hstack([self.Y0, other.Y0]), np.hstack([self.Y1, other.Y1]),
                           np.hstack([self.U, other.U]), self.mode)


def encode_inputs(mode, params, schedule, k0, count):
    """Inputs for steps ``k0 .. k0 + count - 1`` as a ``(1, count)`` array.

    ``edmd-c`` uses the concentration at the step start time; ``edmd-d``
    puts each dose on the step whose interval ``[t_k, t_k+1)`` holds its
    injection time and zero elsewhere.
    """
    _check_mode(mode)
    steps = k0 + np.arange(count)
    if mode == EDMD_C:
        t = steps * params.dt
        return np.atleast_1d(epo_concentration(params, schedule, t))[None, :]
    U = np.zeros((1, count))
    # small slack: injection days sit exactly on the step grid
    idx = np.floor(schedule.times / params.dt + 1e-9).astype(int) - k0
    ok = (idx >= 0) & (idx < count)
    np.add.at(U[0], idx[ok], schedule.doses[ok])
    return U


def encode_input(mode, params, schedule, step_index):
    if step_index < 0:
        raise ValueError("step_index must be >= 0")
    return encode_inputs(mode, params, schedule, step_index, 1)[:, 0]


def _step_index(params, t):
    return int(round(t / params.dt))


def collect_snapshots(params, state0, schedule, m, mode, dictionary=None):
    """Simulate ``m`` plant steps from ``state0`` and record the last population."""
    _check_mode(mode)
    if m < 1:
        raise ValueError("need at least one snapshot")
    if dictionary is not None and m < dictionary.n_phi + 1:
        warnings.warn(
            f"{m} snapshots for {dictionary.n_phi} observables + 1 input: "
            "regression is underdetermined", RankDeficiencyWarning, stacklevel=2)
    traj = simulate(params, state0, schedule, m)
    Y = traj.states[:, -1, :].T
    U = encode_inputs(mode, params, schedule, _step_index(params, state0.t), m)
    return SnapshotSet(Y[:, :-1], Y[:, 1:], U, mode)


def _truncated_svd(M, rtol):
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return U[:, :0], s[:0], Vt[:0]
    r = int(np.sum(s > rtol * s[0]))
    return U[:, :r], s[:r], Vt[:r]


def _rank(M, rtol):
    return _truncated_svd(M, rtol)[1].size


def _lstsq_right(target, M, rtol):
    """Minimum-norm ``G`` minimizing ``||target - G M||_F`` (truncated SVD)."""
    U, s, Vt = _truncated_svd(M, rtol)
    return ((target @ Vt.T) / s) @ U.T, s.size


@dataclass(frozen=True, eq=False)
class EdmdModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dictionary: object
    svd_tol: float
    mode: str
    residual_dyn: float = np.nan
    residual_rec: float = np.nan
    rank: int = -1
    snapshots: SnapshotSet | None = field(default=None, repr=False)

    def __post_init__(self):
        N = self.dictionary.n_phi
        if self.A.shape != (N, N) or self.B.shape[0] != N \
                or self.C.shape != (self.dictionary.n, N):
            raise InvalidDimensionError("A, B, C shapes inconsistent with dictionary")
        for arr in (self.A, self.B, self.C):
            arr.setflags(write=False)

    @property
    def n_phi(self):
        return self.dictionary.n_phi

    @property
    def n_inputs(self):
        return self.B.shape[1]

    def step(self, z, u):
        return self.A @ z + self.B @ np.atleast_1d(u)

    def to_dict(self):
        return {
            "format": "edmdmpc-model",
            "version": MODEL_FORMAT_VERSION,
            "mode": self.mode,
            "svd_tol": self.svd_tol,
            "dims": {"n": self.dictionary.n, "n_phi": self.n_phi,
                     "n_inputs": self.n_inputs},
            "dictionary": self.dictionary.to_dict(),
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "residual_dyn": self.residual_dyn,
            "residual_rec": self.residual_rec,
            "rank": self.rank,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != "edmdmpc-model":
            raise ValueError("not an edmdmpc model document")
        if doc.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        return cls(np.array(doc["A"], dtype=float), np.array(doc["B"], dtype=float),
                   np.array(doc["C"], dtype=float),
                   dictionary_from_dict(doc["dictionary"]), float(doc["svd_tol"]),
                   _check_mode(doc["mode"]), float(doc["residual_dyn"]),
                   float(doc["residual_rec"]), int(doc["rank"]))


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1)


def load_model(path):
    with open(path) as fh:
        return EdmdModel.from_dict(json.load(fh))


def fit(snapshots, dictionary, svd_tol=1e-10):
    """Fit ``[A, B]`` and ``C`` by two truncated-SVD least-squares solves."""
    if snapshots.Y0.shape[0] != dictionary.n:
        raise InvalidDimensionError(
            f"snapshot rows {snapshots.Y0.shape[0]} != dictionary.n {dictionary.n}")
    X = dictionary.lift_many(snapshots.Y0)
    Xp = dictionary.lift_many(snapshots.Y1)
    U = snapshots.U
    N = dictionary.n_phi
    G, rank = _lstsq_right(Xp, np.vstack([X, U]), svd_tol)
    A, B = G[:, :N].copy(), G[:, N:].copy()
    C, rank_x = _lstsq_right(snapshots.Y0, X, svd_tol)
    if rank < rank_x + _rank(U, svd_tol):
        warnings.warn(
            f"stacked data rank {rank} < state rank {rank_x} + input rank: "
            "input directions were truncated, B is ill-determined",
            RankDeficiencyWarning, stacklevel=2)
    res_dyn = float(np.linalg.norm(Xp - A @ X - B @ U))
    res_rec = float(np.linalg.norm(snapshots.Y0 - C @ X))
    return EdmdModel(A, B, C, dictionary, svd_tol, snapshots.mode, res_dyn,
                     res_rec, rank, snapshots)


def predict(model, y0, inputs, steps):
    """Roll the lifted system; returns ``y_hat_0 .. y_hat_steps`` as rows."""
    U = np.atleast_2d(np.asarray(inputs, dtype=float))
    if U.shape[0] != model.n_inputs and U.shape[1] == model.n_inputs:
        U = U.T
    if U.shape[1] < steps:
        raise InvalidDimensionError(f"need {steps} input columns, got {U.shape[1]}")
    z = model.dictionary.lift(y0)
    out = np.empty((steps + 1, model.C.shape[0]))
    out[0] = model.C @ z
    for k in range(steps):
        z = model.A @ z + model.B @ U[:, k]
        out[k + 1] = model.C @ z
    return out


def refit_window(model, params, state, schedule_segment, M_EDMD, append=False):
    """Refit on ``M_EDMD`` fresh plant steps from ``state``.

    With ``append=False`` (default) earlier data is discarded; otherwise the
    fresh window is appended to the model's training snapshots.
    """
    if M_EDMD < 1:
        raise ValueError("M_EDMD must be >= 1")
    fresh = collect_snapshots(params, state, schedule_segment, M_EDMD, model.mode)
    if append and model.snapshots is not None:
        fresh = model.snapshots.concat(fresh)
    with warnings.catch_warnings():
        # short windows are rank deficient by construction
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        return fit(fresh, model.dictionary, model.svd_tol)

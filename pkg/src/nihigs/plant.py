"""Linear state-space plant models.

Continuous and discrete realizations, zero-order-hold discretization, DC gain,
frequency responses and the identified two-input two-output MEMS force sensor
model used throughout the experiments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from os import PathLike

import numpy as np
from scipy.linalg import expm

__all__ = [
    "ContinuousStateSpace",
    "DiscreteStateSpace",
    "FrequencyResponseSample",
    "PlantError",
    "DiscretizationError",
    "SingularResolventError",
    "zoh_discretize",
    "dc_gain",
    "frf_continuous",
    "frf_discrete",
    "mems_plant",
    "is_minimal",
    "load_plant",
    "plant_from_dict",
]

# Singular values below this fraction of the largest one count as zero.
RANK_RTOL = 1e-8
# Reciprocal condition number below which a resolvent is treated as singular.
RESOLVENT_RCOND = 1e-13


class PlantError(ValueError):
    """Invalid plant data or a violated precondition."""


class DiscretizationError(ArithmeticError):
    """Matrix exponential produced non-finite values."""


class SingularResolventError(ArithmeticError):
    """The resolvent is singular at the requested frequency."""

    def __init__(self, omega: float, message: str | None = None):
        self.omega = omega
        super().__init__(message or f"resolvent is singular at omega={omega!r} rad/s")


def _as_matrix(name: str, value) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise PlantError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise PlantError(f"{name} has non-finite entries")
    return arr


def _check_dims(A: np.ndarray, B: np.ndarray, C: np.ndarray) -> None:
    n = A.shape[0]
    if A.shape != (n, n):
        raise PlantError(f"A must be square, got {A.shape}")
    if B.shape[0] != n:
        raise PlantError(f"B has {B.shape[0]} rows, expected {n}")
    if C.shape[1] != n:
        raise PlantError(f"C has {C.shape[1]} columns, expected {n}")


@dataclass(frozen=True)
class ContinuousStateSpace:
    """Strictly proper continuous-time model ``dx/dt = A x + B u, y = C x``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        A = _as_matrix("A", self.A)
        B = _as_matrix("B", self.B)
        C = _as_matrix("C", self.C)
        _check_dims(A, B, C)
        D = np.zeros((C.shape[0], B.shape[1])) if self.D is None else _as_matrix("D", self.D)
        if D.shape != (C.shape[0], B.shape[1]):
            raise PlantError(f"D must be {C.shape[0]}x{B.shape[1]}, got {D.shape}")
        if np.any(D != 0):
            raise PlantError("nonzero feedthrough D is not supported")
        for name, arr in zip("ABCD", (A, B, C, D)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class DiscreteStateSpace:
    """Discrete-time model ``x[k+1] = A x[k] + B u[k], y[k] = C x[k]``.

    ``A`` and ``B`` are the sampled matrices; ``ts`` is the sampling period in
    seconds.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    ts: float

    def __post_init__(self):
        A = _as_matrix("A", self.A)
        B = _as_matrix("B", self.B)
        C = _as_matrix("C", self.C)
        _check_dims(A, B, C)
        ts = float(self.ts)
        if not (np.isfinite(ts) and ts > 0):
            raise PlantError(f"sampling period must be positive, got {self.ts!r}")
        for name, arr in zip("ABC", (A, B, C)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "ts", ts)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class FrequencyResponseSample:
    """Complex response ``G`` at ``omega`` rad/s; ``flagged`` marks a failed measurement."""

    omega: float
    G: np.ndarray
    flagged: bool = False


def zoh_discretize(cs: ContinuousStateSpace, ts: float) -> DiscreteStateSpace:
    """Zero-order-hold discretization.

    Both sampled matrices come out of one exponential of the augmented matrix
    ``[[A, B], [0, 0]] * ts``, whose top blocks are ``exp(A ts)`` and
    ``int_0^ts exp(A t) dt B``.
    """
    ts = float(ts)
    if not (np.isfinite(ts) and ts > 0):
        raise PlantError(f"sampling period must be positive, got {ts!r}")
    n, m = cs.n, cs.n_inputs
    M = np.zeros((n + m, n + m))
    M[:n, :n] = cs.A
    M[:n, n:] = cs.B
    with np.errstate(over="ignore", invalid="ignore"):
        E = expm(M * ts)
    if not np.all(np.isfinite(E)):
        raise DiscretizationError(
            f"matrix exponential overflowed at ts={ts!r} "
            f"(max |eig(A)| * ts = {np.max(np.abs(np.linalg.eigvals(cs.A))) * ts:.3g})"
        )
    return DiscreteStateSpace(E[:n, :n], E[:n, n:], cs.C.copy(), ts)


def _resolvent_solve(M: np.ndarray, B: np.ndarray, omega: float) -> np.ndarray:
    if np.linalg.cond(M) * RESOLVENT_RCOND > 1:
        raise SingularResolventError(omega)
    return np.linalg.solve(M, B)


def dc_gain(ds: DiscreteStateSpace) -> np.ndarray:
    """Return ``G(1) = C (I - A)^-1 B``."""
    I = np.eye(ds.n)
    try:
        X = _resolvent_solve(I - ds.A, ds.B, 0.0)
    except SingularResolventError:
        raise PlantError("I - A is singular; the DC gain G(1) is undefined") from None
    return ds.C @ X


def frf_continuous(cs: ContinuousStateSpace, omega: float) -> np.ndarray:
    """Evaluate ``C (j omega I - A)^-1 B``."""
    M = 1j * omega * np.eye(cs.n) - cs.A
    return cs.C @ _resolvent_solve(M, cs.B.astype(complex), omega)


def frf_discrete(ds: DiscreteStateSpace, omega: float) -> np.ndarray:
    """Evaluate ``C (z I - A)^-1 B`` at ``z = exp(j omega ts)``.

    At ``omega = 0`` this reduces to the same real solve as :func:`dc_gain`.
    """
    if omega == 0:
        return dc_gain(ds).astype(complex)
    z = np.exp(1j * omega * ds.ts)
    M = z * np.eye(ds.n) - ds.A
    return ds.C @ _resolvent_solve(M, ds.B.astype(complex), omega)


def _rank(M: np.ndarray) -> int:
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


def is_minimal(ss: ContinuousStateSpace | DiscreteStateSpace) -> bool:
    """True iff the Kalman controllability and observability matrices have rank n."""
    A, B, C = ss.A, ss.B, ss.C
    n = A.shape[0]
    ctrb = [B]
    obsv = [C]
    for _ in range(n - 1):
        ctrb.append(A @ ctrb[-1])
        obsv.append(obsv[-1] @ A)
    return _rank(np.hstack(ctrb)) == n and _rank(np.vstack(obsv)) == n


def mems_plant() -> ContinuousStateSpace:
    """Identified 4-state model of the dual-stage MEMS force sensor.

    Inputs are the inner-stage and outer-stage actuation voltages, outputs the
    corresponding sensor voltages. Units are rad/s (continuous time); the two
    lightly damped modes sit near 993 Hz and 1326 Hz.
    """
    A = [
        [-104.10, 5622, 3693, -1174],
        [-5238, -17.10, 596.60, 6212],
        [-2765, -461.60, -37.94, -7586],
        [646.40, -3833, 5758, -22.39],
    ]
    B = [
        [23.58, 3.81],
        [9.50, -4.25],
        [2.36, 4.89],
        [5.69, -14.11],
    ]
    # printed as the transpose
    Ct = [
        [18.69, 6.88],
        [-45.25, -43.13],
        [-50.40, 40.23],
        [0.23, 26.27],
    ]
    return ContinuousStateSpace(np.array(A), np.array(B), np.array(Ct).T)


def plant_from_dict(doc: dict) -> ContinuousStateSpace | DiscreteStateSpace:
    """Build a plant from its JSON document form.

    ``{"domain": "continuous"|"discrete", "A", "B", "C", "D", "ts_seconds"}``.
    A discrete plant requires ``ts_seconds``; ``D`` is optional and must be zero.
    """
    if not isinstance(doc, dict):
        raise PlantError("plant document must be a JSON object")
    domain = doc.get("domain")
    if domain not in ("continuous", "discrete"):
        raise PlantError(f"domain must be 'continuous' or 'discrete', got {domain!r}")
    for key in ("A", "B", "C"):
        if key not in doc:
            raise PlantError(f"missing field {key!r}")
    if domain == "continuous":
        return ContinuousStateSpace(doc["A"], doc["B"], doc["C"], doc.get("D"))
    if doc.get("ts_seconds") is None:
        raise PlantError("discrete plant requires 'ts_seconds'")
    if doc.get("D") is not None and np.any(np.asarray(doc["D"], dtype=float) != 0):
        raise PlantError("nonzero feedthrough D is not supported")
    return DiscreteStateSpace(doc["A"], doc["B"], doc["C"], doc["ts_seconds"])


def load_plant(path: str | PathLike) -> ContinuousStateSpace | DiscreteStateSpace:
    with open(path, encoding="utf-8") as fh:
        return plant_from_dict(json.load(fh))

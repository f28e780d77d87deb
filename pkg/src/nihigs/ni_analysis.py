"""Numerical negative-imaginary (NI) checks.

* frequency sweep of ``j (G(jw) - G(jw)^H)``;
* verification and search of the quadratic storage certificate of a sampled
  plant: ``P > 0``, ``A^T P A - P <= 0`` and ``C = B^T (I - A)^-T P``;
* random plants that satisfy the certificate by construction;
* the two gain conditions for closing the loop with a multi-HIGS.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .plant import (
    ContinuousStateSpace,
    DiscreteStateSpace,
    PlantError,
    SingularResolventError,
    dc_gain,
    frf_continuous,
    frf_discrete,
)

__all__ = [
    "NiReport",
    "CertificateReport",
    "SynthesisResult",
    "StabilityReport",
    "CertificateError",
    "ni_matrix",
    "ni_frequency_check",
    "verify_zoh_ni_certificate",
    "synthesize_storage_matrix",
    "make_zoh_ni_fixture",
    "check_stability_conditions",
]

TWO_PI = 2.0 * math.pi
SYMMETRY_RTOL = 1e-12


class CertificateError(ValueError):
    """Malformed certificate input, e.g. a non-symmetric ``P``."""


def _hermitian_part(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.conj().T)


def ni_matrix(G: np.ndarray) -> np.ndarray:
    """Return ``j (G - G^H)``, symmetrized against roundoff."""
    G = np.asarray(G, dtype=complex)
    return _hermitian_part(1j * (G - G.conj().T))


# --------------------------------------------------------------------------
# frequency sweep


@dataclass
class NiReport:
    """Smallest eigenvalue of the NI matrix on a frequency grid.

    ``ni_band_edge`` is ``None`` when no violation was detected. ``flagged``
    lists grid frequencies where the resolvent was singular.
    """

    samples: list[tuple[float, float]]
    ni_band_edge: float | None
    phase_tol_deg: float
    flagged: list[float] = field(default_factory=list)

    @property
    def band_edge_hz(self) -> float | None:
        return None if self.ni_band_edge is None else self.ni_band_edge / TWO_PI

    def to_dict(self) -> dict:
        return {
            "samples": [{"omega": w, "lambda_min": lam} for w, lam in self.samples],
            "ni_band_edge": "none-detected" if self.ni_band_edge is None else self.ni_band_edge,
            "ni_band_edge_hz": "none-detected" if self.ni_band_edge is None else self.band_edge_hz,
            "phase_tol_deg": self.phase_tol_deg,
            "flagged": list(self.flagged),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["omega_hz", "lambda_min"])
        for w, lam in self.samples:
            writer.writerow([repr(w / TWO_PI), repr(lam)])
        return buf.getvalue()


def _frf(sys, omega: float) -> np.ndarray:
    if isinstance(sys, DiscreteStateSpace):
        return frf_discrete(sys, omega)
    return frf_continuous(sys, omega)


def _violation(sys, omega: float, sin_tol: float) -> tuple[float, float]:
    """Return ``(lambda_min, margin)``; a negative margin is a violation."""
    G = _frf(sys, omega)
    lam = float(np.linalg.eigvalsh(ni_matrix(G))[0])
    return lam, lam + 2.0 * sin_tol * float(np.linalg.norm(G, 2))


def ni_frequency_check(
    sys: ContinuousStateSpace | DiscreteStateSpace,
    omega_grid,
    phase_tol_deg: float = 1.0,
    refine_hz: float = 0.1,
) -> NiReport:
    """Sweep ``lambda_min(j (G - G^H))`` over ``omega_grid`` (rad/s).

    A sample counts as a violation when
    ``lambda_min < -2 sin(phase_tol_deg) ||G||``. For a scalar system this is
    a phase excursion of more than ``phase_tol_deg`` above 0 degrees (or below
    -180 degrees); for matrices it scales the test with the response size so
    that small identification residue far from resonance is not mistaken for
    a loss of the NI property. ``phase_tol_deg=0`` gives the strict test.

    The first violating grid point is refined by bisection against its left
    neighbor down to ``refine_hz``.
    """
    grid = np.asarray(omega_grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValueError("empty frequency grid")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("frequency grid must be strictly positive and increasing")
    sin_tol = math.sin(math.radians(phase_tol_deg))

    samples: list[tuple[float, float]] = []
    flagged: list[float] = []
    edge = None
    prev_ok = None
    for w in grid:
        w = float(w)
        try:
            lam, margin = _violation(sys, w, sin_tol)
        except SingularResolventError:
            flagged.append(w)
            continue
        samples.append((w, lam))
        if edge is None and margin < 0:
            edge = w if prev_ok is None else _bisect_edge(sys, prev_ok, w, sin_tol, refine_hz)
        elif edge is None:
            prev_ok = w
    return NiReport(samples, edge, float(phase_tol_deg), flagged)


def _bisect_edge(sys, lo: float, hi: float, sin_tol: float, refine_hz: float) -> float:
    width = TWO_PI * refine_hz
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        try:
            _, margin = _violation(sys, mid, sin_tol)
        except SingularResolventError:
            margin = -1.0
        if margin < 0:
            hi = mid
        else:
            lo = mid
    return hi


# --------------------------------------------------------------------------
# storage certificate


@dataclass
class CertificateReport:
    P: np.ndarray
    residual_equality: float
    lambda_max_decrease: float
    lambda_min_P: float
    tol: float
    passed: bool
    equality_ok: bool = True

    @property
    def failures(self) -> list[str]:
        out = []
        if not self.lambda_min_P > self.tol:
            out.append("P is not positive definite")
        if not self.lambda_max_decrease <= self.tol:
            out.append("A^T P A - P is not negative semidefinite")
        if not self.equality_ok:
            out.append("equality C = B^T (I-A)^-T P violated")
        return out

    def to_dict(self) -> dict:
        return {
            "P": self.P.tolist(),
            "residual_equality": self.residual_equality,
            "lambda_max_decrease": self.lambda_max_decrease,
            "lambda_min_P": self.lambda_min_P,
            "tol": self.tol,
            "passed": self.passed,
            "failures": self.failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _steady_state_map(ds: DiscreteStateSpace) -> np.ndarray:
    """``(I - A)^-1 B``; raises when ``I - A`` is singular."""
    I = np.eye(ds.n)
    if np.linalg.cond(I - ds.A) > 1e13:
        raise PlantError("I - A is singular; the storage certificate is undefined")
    return np.linalg.solve(I - ds.A, ds.B)


def verify_zoh_ni_certificate(ds: DiscreteStateSpace, P, tol: float = 1e-9) -> CertificateReport:
    """Check the three conditions of the quadratic storage certificate.

    Passes iff ``lambda_min(P) > tol``, ``lambda_max(A^T P A - P) <= tol`` and
    ``||C - B^T (I-A)^-T P|| <= tol ||C||``.
    """
    P = np.asarray(P, dtype=float)
    if P.shape != (ds.n, ds.n):
        raise CertificateError(f"P must be {ds.n}x{ds.n}, got {P.shape}")
    asym = np.linalg.norm(P - P.T)
    if asym > SYMMETRY_RTOL * max(np.linalg.norm(P), 1e-300):
        raise CertificateError(f"P is not symmetric (||P - P^T|| = {asym:.3g})")
    P = 0.5 * (P + P.T)
    X = _steady_state_map(ds)
    residual = float(np.linalg.norm(ds.C - X.T @ P, 2))
    c_norm = float(np.linalg.norm(ds.C, 2))
    decrease = ds.A.T @ P @ ds.A - P
    lam_dec = float(np.linalg.eigvalsh(0.5 * (decrease + decrease.T))[-1])
    lam_p = float(np.linalg.eigvalsh(P)[0])
    eq_ok = residual <= tol * c_norm
    passed = lam_p > tol and lam_dec <= tol and eq_ok
    return CertificateReport(P, residual, lam_dec, lam_p, float(tol), bool(passed), equality_ok=bool(eq_ok))


@dataclass
class SynthesisResult:
    """Outcome of the certificate search.

    ``found`` False means the search gave up, not that no certificate exists,
    except when ``reason`` says the linear equality itself is inconsistent.
    """

    found: bool
    P: np.ndarray | None
    report: CertificateReport | None
    iterations: int
    reason: str

    def to_dict(self) -> dict:
        out = {"found": self.found, "iterations": self.iterations, "reason": self.reason}
        if self.report is not None:
            out["certificate"] = self.report.to_dict()
        return out


def _sym_basis(n: int) -> np.ndarray:
    """Columns are vec() of an orthonormal basis of symmetric n x n matrices."""
    cols = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            if i == j:
                E[i, i] = 1.0
            else:
                E[i, j] = E[j, i] = 1.0 / math.sqrt(2.0)
            cols.append(E.reshape(-1))
    return np.array(cols).T


def _psd_clip(M: np.ndarray, floor: float) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.maximum(w, floor)) @ V.T


def synthesize_storage_matrix(
    ds: DiscreteStateSpace, tol: float = 1e-9, max_iter: int = 10_000
) -> SynthesisResult:
    """Search for a storage matrix ``P`` by alternating projections.

    Every symmetric ``P`` meeting the equality ``P (I-A)^-1 B = C^T`` is written
    as a least-norm particular solution plus a null-space combination. The
    search then alternates between that affine family, lifted together with
    ``Q = P - A^T P A``, and the cones ``P >= margin``, ``Q >= 0`` (projection
    by eigenvalue clipping). Each iterate is checked with
    :func:`verify_zoh_ni_certificate` and only a passing ``P`` is returned.
    """
    n = ds.n
    X = _steady_state_map(ds)
    S = _sym_basis(n)  # n^2 x d_full
    d_full = S.shape[1]

    def as_mat(v):
        return (S @ v).reshape(n, n)

    # equality map: v -> vec(P X)
    L_eq = np.column_stack([(as_mat(e) @ X).reshape(-1) for e in np.eye(d_full)])
    rhs = ds.C.T.reshape(-1)
    v0, *_ = np.linalg.lstsq(L_eq, rhs, rcond=None)
    c_norm = max(float(np.linalg.norm(ds.C, 2)), 1e-300)
    if np.linalg.norm(L_eq @ v0 - rhs) > tol * c_norm * math.sqrt(rhs.size):
        return SynthesisResult(False, None, None, 0, "equality constraint has no symmetric solution")

    U, s, Vt = np.linalg.svd(L_eq)
    rank = int(np.sum(s > 1e-12 * s[0])) if s.size else 0
    N = Vt[rank:].T  # null-space coordinates, d_full x d
    P0 = as_mat(v0)
    P0 = 0.5 * (P0 + P0.T)

    def lyap(M):
        return M - ds.A.T @ M @ ds.A

    best: CertificateReport | None = None

    def try_candidate(P):
        nonlocal best
        rep = verify_zoh_ni_certificate(ds, 0.5 * (P + P.T), tol)
        if best is None or _badness(rep) < _badness(best):
            best = rep
        return rep

    rep = try_candidate(P0)
    if rep.passed:
        return SynthesisResult(True, rep.P, rep, 0, "particular solution is a certificate")
    if N.shape[1] == 0:
        return SynthesisResult(False, None, rep, 0, "equality fixes P uniquely and it fails: " + "; ".join(rep.failures))

    basis = [as_mat(c) for c in N.T]
    M = np.vstack(
        [
            np.column_stack([b.reshape(-1) for b in basis]),
            np.column_stack([lyap(b).reshape(-1) for b in basis]),
        ]
    )
    M_pinv = np.linalg.pinv(M)
    Q0 = lyap(P0)
    scale = max(float(np.linalg.norm(P0, 2)), 1.0)
    margin = 10.0 * tol * scale

    z = np.zeros(len(basis))
    for it in range(1, max_iter + 1):
        P = P0 + np.tensordot(z, basis, axes=1)
        Pc = _psd_clip(P, margin)
        Qc = _psd_clip(lyap(P), 0.0)
        target = np.concatenate([(Pc - P0).reshape(-1), (Qc - Q0).reshape(-1)])
        z = M_pinv @ target
        P = P0 + np.tensordot(z, basis, axes=1)
        rep = try_candidate(P)
        if rep.passed:
            return SynthesisResult(True, rep.P, rep, it, "alternating projections converged")
    return SynthesisResult(
        False, None, best, max_iter, "no certificate found within the iteration cap (not a proof of infeasibility)"
    )


def _badness(rep: CertificateReport) -> float:
    return max(rep.lambda_max_decrease, 0.0) + max(-rep.lambda_min_P, 0.0)


# --------------------------------------------------------------------------
# fixtures


def make_zoh_ni_fixture(
    n: int, p: int, seed: int, ts: float = 1.0, max_retries: int = 100
) -> tuple[DiscreteStateSpace, np.ndarray]:
    """Random sampled plant together with a valid storage matrix.

    Draws ``P > 0``, a matrix ``A`` that is a contraction in the ``P`` norm
    (so ``A^T P A - P <= 0`` and ``I - A`` is invertible), a random ``B``, and
    sets ``C = B^T (I - A)^-T P``.
    """
    if n < 1 or not 1 <= p <= n:
        raise ValueError(f"need n >= 1 and 1 <= p <= n, got n={n}, p={p}")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        Qo, _ = np.linalg.qr(rng.standard_normal((n, n)))
        eig = rng.uniform(0.5, 2.0, n)
        P = (Qo * eig) @ Qo.T
        P = 0.5 * (P + P.T)
        sqrt_p = (Qo * np.sqrt(eig)) @ Qo.T
        isqrt_p = (Qo / np.sqrt(eig)) @ Qo.T
        G = rng.standard_normal((n, n))
        rho = rng.uniform(0.3, 0.98)
        G *= rho / np.linalg.norm(G, 2)
        A = isqrt_p @ G @ sqrt_p
        if np.linalg.cond(np.eye(n) - A) > 1e8:
            continue
        B = rng.standard_normal((n, p))
        X = np.linalg.solve(np.eye(n) - A, B)
        C = X.T @ P
        return DiscreteStateSpace(A, B, C, ts), P
    raise RuntimeError(f"could not draw a nondegenerate fixture in {max_retries} attempts")


# --------------------------------------------------------------------------
# loop gain conditions


@dataclass
class StabilityReport:
    gain_ok: bool
    sector_ok: bool
    lambda_min_margin: float
    G1: np.ndarray
    kappa: np.ndarray
    omega: np.ndarray

    @property
    def ok(self) -> bool:
        return self.gain_ok and self.sector_ok

    def to_dict(self) -> dict:
        return {
            "gain_ok": self.gain_ok,
            "sector_ok": self.sector_ok,
            "lambda_min_margin": self.lambda_min_margin,
            "G1": self.G1.tolist(),
            "kappa": self.kappa.tolist(),
            "omega": self.omega.tolist(),
        }


def _diagonal(name: str, M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        return M.copy()
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be a square diagonal matrix")
    if np.any(M - np.diag(np.diag(M)) != 0):
        raise ValueError(f"{name} must be diagonal")
    return np.diag(M).copy()


def check_stability_conditions(plant, K, Omega) -> StabilityReport:
    """Evaluate ``0 < omega_i <= kappa_i`` and ``K^-1 - G(1) > 0``.

    The definiteness test uses the symmetric part of ``K^-1 - G(1)``. A
    continuous plant is accepted directly: its DC gain ``-C A^-1 B`` equals the
    ``G(1)`` of any zero-order-hold discretization.
    """
    kappa = _diagonal("K", K)
    omega = _diagonal("Omega", Omega)
    if kappa.shape != omega.shape:
        raise ValueError("K and Omega must have the same size")
    if not (np.all(np.isfinite(kappa)) and np.all(np.isfinite(omega))):
        raise ValueError("K and Omega must be finite")
    if isinstance(plant, ContinuousStateSpace):
        G1 = -plant.C @ np.linalg.solve(plant.A, plant.B)
    else:
        G1 = dc_gain(plant)
    if G1.shape != (kappa.size, kappa.size):
        raise ValueError(f"plant is {G1.shape[0]}x{G1.shape[1]} but K has {kappa.size} channels")
    sector_ok = bool(np.all(omega > 0) and np.all(omega <= kappa))
    if np.any(kappa <= 0):
        margin = -math.inf
    else:
        M = np.diag(1.0 / kappa) - G1
        margin = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
    return StabilityReport(margin > 0, sector_ok, margin, G1, kappa, omega)

"""Describing function of the continuous-time HIGS and channel tuning.

The describing function is only a quasi-linear guide for choosing the
discrete gains. It is never used in stability checks.
"""

from __future__ import annotations

import cmath
import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .ni_analysis import check_stability_conditions

__all__ = [
    "DfParams",
    "gamma",
    "higs_df",
    "harmonic_balance",
    "df_table",
    "df_table_csv",
    "tune_channels",
    "TuningWarning",
]


class TuningWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DfParams:
    """Continuous sector gain ``k_h``, integrator rate ``omega_h`` (rad/s), sample period ``ts``."""

    k_h: float
    omega_h: float
    ts: float = 1.0

    def __post_init__(self):
        for name in ("k_h", "omega_h", "ts"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")
            object.__setattr__(self, name, v)

    @property
    def omega_discrete(self) -> float:
        """Discrete integrator increment ``omega_h * ts``."""
        return self.omega_h * self.ts


def gamma(omega: float, p: DfParams) -> float:
    """Switching angle ``2 atan(k_h omega / omega_h)``, in ``[0, pi)``."""
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    return 2.0 * math.atan(p.k_h * omega / p.omega_h)


def higs_df(omega: float, p: DfParams) -> complex:
    """First-harmonic gain of the continuous HIGS at ``omega`` rad/s."""
    if not omega > 0:
        raise ValueError("describing function is undefined at omega <= 0")
    g = gamma(omega, p)
    e1 = cmath.exp(-1j * g)
    e2 = cmath.exp(-2j * g)
    integrator = g / math.pi + 1j * (e2 - 1) / (2 * math.pi) - 4j * (e1 - 1) / (2 * math.pi)
    gain = (math.pi - g) / math.pi + 1j * (e2 - 1) / (2 * math.pi)
    return p.omega_h / (1j * omega) * integrator + p.k_h * gain


def harmonic_balance(
    omega: float, p: DfParams, samples_per_period: int = 1000, periods: int = 20, measured_periods: int = 5
) -> complex:
    """Estimate the describing function by simulating a fine-step discrete HIGS.

    The input is ``sin(omega t)`` sampled ``samples_per_period`` times per
    period; the bimodal discrete HIGS with increment ``omega_h * dt`` stands in
    for the continuous element. The first harmonic of the output over the
    last ``measured_periods`` periods is returned as a complex gain.
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    dt = 2.0 * math.pi / (omega * samples_per_period)
    w_d = p.omega_h * dt
    kappa = p.k_h
    k = np.arange(samples_per_period * periods)
    e = np.sin(omega * dt * k)
    y = np.empty_like(e)
    x = 0.0
    for i, ei in enumerate(e.tolist()):
        x_int = x + w_d * ei
        x = x_int if kappa * x_int * ei >= x_int * x_int else kappa * ei
        y[i] = x
    m = samples_per_period * measured_periods
    t = omega * dt * k[-m:]
    a = 2.0 / m * float(np.dot(y[-m:], np.sin(t)))
    b = 2.0 / m * float(np.dot(y[-m:], np.cos(t)))
    return complex(a, b)


def df_table(ratios, k_h: float = 1.0, omega: float = 1.0) -> list[tuple[float, complex]]:
    """Describing function over ratios ``k_h omega / omega_h`` at fixed ``omega``."""
    out = []
    for r in ratios:
        p = DfParams(k_h, k_h * omega / float(r))
        out.append((float(r), higs_df(omega, p)))
    return out


def df_table_csv(table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["ratio", "magnitude", "phase_deg"])
    for r, d in table:
        writer.writerow([repr(r), repr(abs(d)), repr(math.degrees(cmath.phase(d)))])
    return buf.getvalue()


def tune_channels(dc_gains, natural_freqs, ts: float, gain_fractions, rate_factors, plant=None):
    """Channel gains from DC gains and increments from resonance frequencies.

    ``kappa_i = gain_fraction_i / G_ii(1)`` and
    ``omega_i = rate_factor_i * natural_freq_i * ts``. Returns the diagonal
    matrices ``(K, Omega)``. Emits :class:`TuningWarning` when some
    ``omega_i > kappa_i`` or, if ``plant`` is given, when the loop gain
    conditions fail.
    """
    g = np.asarray(dc_gains, dtype=float).reshape(-1)
    wn = np.asarray(natural_freqs, dtype=float).reshape(-1)
    frac = np.asarray(gain_fractions, dtype=float).reshape(-1)
    rate = np.asarray(rate_factors, dtype=float).reshape(-1)
    if not (g.shape == wn.shape == frac.shape == rate.shape):
        raise ValueError("all per-channel inputs must have the same length")
    if np.any(g <= 0):
        raise ValueError("DC gains must be positive")
    if not ts > 0:
        raise ValueError("ts must be positive")
    kappa = frac / g
    omega = rate * wn * ts
    if np.any(omega > kappa) or np.any(omega <= 0):
        warnings.warn(f"increments {omega} violate 0 < omega <= kappa for kappa {kappa}", TuningWarning, stacklevel=2)
    K, Omega = np.diag(kappa), np.diag(omega)
    if plant is not None:
        rep = check_stability_conditions(plant, K, Omega)
        if not rep.ok:
            warnings.warn(f"tuned gains fail the loop conditions: {rep.to_dict()}", TuningWarning, stacklevel=2)
    return K, Omega

"""Scalar discrete-time hybrid integrator-gain system (HIGS).

One channel maps an input ``e`` to an output ``y`` through the state ``x``.
Each step first forms the integrator candidate ``x + omega * e``; if the pair
``(e, candidate)`` stays inside the sector ``[0, kappa]`` the candidate is
accepted, otherwise the state is projected onto a sector boundary. The output
is the updated state, ``y[k] = x[k+1]``.

The bimodal flavor always projects onto the gain line ``x = kappa * e``. The
trimodal flavor projects onto ``x = 0`` instead when the candidate ends up in
the second or fourth quadrant of the (e, x) plane.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

__all__ = [
    "Flavor",
    "Mode",
    "HigsParams",
    "HigsState",
    "candidate",
    "in_integrator_sector",
    "in_gain_region",
    "in_zero_region",
    "classify_bimodal",
    "classify_trimodal",
    "classify",
    "step",
    "storage",
]


class Flavor(str, enum.Enum):
    BIMODAL = "bimodal"
    TRIMODAL = "trimodal"


class Mode(str, enum.Enum):
    """Active branch of a HIGS update; values are the trace codes."""

    INTEGRATOR = "I"
    GAIN = "G"
    ZERO = "Z"


@dataclass(frozen=True)
class HigsParams:
    """Sector gain ``kappa > 0`` and integrator increment ``omega >= 0``.

    ``omega`` is dimensionless: it already includes the sampling period.
    """

    kappa: float
    omega: float

    def __post_init__(self):
        kappa = float(self.kappa)
        omega = float(self.omega)
        if not kappa > 0 or kappa == float("inf"):
            raise ValueError(f"kappa must be positive and finite, got {self.kappa!r}")
        if not omega >= 0 or omega == float("inf"):
            raise ValueError(f"omega must be nonnegative and finite, got {self.omega!r}")
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "omega", omega)


@dataclass(frozen=True)
class HigsState:
    x: float = 0.0
    flavor: Flavor = Flavor.BIMODAL


def candidate(x: float, e: float, params: HigsParams) -> float:
    return x + params.omega * e


def in_integrator_sector(e: float, x_int: float, kappa: float) -> bool:
    # x e >= x^2 / kappa for kappa > 0, i.e. x_int between 0 and kappa e; comparing
    # against the one rounded value kappa * e keeps the regions an exact partition
    g = kappa * e
    if e > 0:
        return 0.0 <= x_int <= g
    if e < 0:
        return g <= x_int <= 0.0
    return x_int == 0.0


def in_gain_region(e: float, x_int: float, kappa: float) -> bool:
    # x e > kappa e^2
    g = kappa * e
    return (e > 0 and x_int > g) or (e < 0 and x_int < g)


def in_zero_region(e: float, x_int: float) -> bool:
    # x e < 0, or e = 0 with x != 0
    return (e > 0 and x_int < 0) or (e < 0 and x_int > 0) or (e == 0 and x_int != 0)


def classify_bimodal(e: float, x_int: float, params: HigsParams) -> Mode:
    if in_integrator_sector(e, x_int, params.kappa):
        return Mode.INTEGRATOR
    return Mode.GAIN


def classify_trimodal(e: float, x_int: float, params: HigsParams) -> Mode:
    """Pick the trimodal branch for the pair ``(e, x_int)``.

    The regions partition the plane. For ``e == 0`` the sector holds only
    ``x_int == 0`` and every other point is in the zero region. For ``e > 0``
    (``e < 0`` mirrors it) the sector is ``0 <= x_int <= kappa e``, the gain
    region is ``x_int > kappa e`` and the zero region is ``x_int < 0``.
    Sector and gain region cannot overlap: the sector gives
    ``x_int e <= kappa e^2`` by AM-GM on ``x_int e >= x_int^2 / kappa``.
    The predicates compare ``x_int`` with the rounded product ``kappa * e``
    rather than forming ``x_int * e``, so the partition also holds exactly in
    floating point and the gain branch lands inside the sector.
    """
    kappa = params.kappa
    if in_integrator_sector(e, x_int, kappa):
        return Mode.INTEGRATOR
    if in_gain_region(e, x_int, kappa):
        return Mode.GAIN
    if in_zero_region(e, x_int):
        return Mode.ZERO
    # unreachable for finite inputs (partition property)
    return Mode.INTEGRATOR


def classify(e: float, x_int: float, params: HigsParams, flavor: Flavor) -> Mode:
    if flavor is Flavor.TRIMODAL:
        return classify_trimodal(e, x_int, params)
    return classify_bimodal(e, x_int, params)


def step(state: HigsState, e: float, params: HigsParams) -> tuple[HigsState, float, Mode]:
    """Advance one sample; returns ``(next_state, y, mode)`` with ``y = next_state.x``."""
    x_int = state.x + params.omega * e
    mode = classify(e, x_int, params, state.flavor)
    if mode is Mode.INTEGRATOR:
        x_next = x_int
    elif mode is Mode.GAIN:
        x_next = params.kappa * e
    else:
        x_next = 0.0
    return HigsState(x_next, state.flavor), x_next, mode


def storage(x: float, kappa: float) -> float:
    """Quadratic storage ``x^2 / (2 kappa)``."""
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa!r}")
    return x * x / (2.0 * kappa)

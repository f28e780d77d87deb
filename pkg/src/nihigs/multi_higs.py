"""Diagonal multi-channel HIGS controller.

``p`` scalar channels run side by side: channel ``i`` reads component ``i`` of
the input vector and writes component ``i`` of the output. There is no
coupling between channels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from os import PathLike
from typing import Sequence

import numpy as np

from .higs import Flavor, HigsParams, Mode

__all__ = ["Channel", "MultiHigs", "advance", "step_multi", "multi_storage", "controller_from_dict", "load_controller"]


@dataclass(frozen=True)
class Channel:
    params: HigsParams
    flavor: Flavor = Flavor.BIMODAL

    def to_dict(self) -> dict:
        return {"kappa": self.params.kappa, "omega": self.params.omega, "flavor": self.flavor.value}


@dataclass(frozen=True)
class MultiHigs:
    """Channel list plus the stacked controller state."""

    channels: tuple[Channel, ...]
    state: np.ndarray

    def __init__(self, channels: Sequence[Channel], state=None):
        channels = tuple(channels)
        if not channels:
            raise ValueError("a multi-HIGS needs at least one channel")
        if state is None:
            state = np.zeros(len(channels))
        state = np.array(state, dtype=float).reshape(-1)
        if state.shape != (len(channels),):
            raise ValueError(f"state has length {state.size}, expected {len(channels)}")
        state.setflags(write=False)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "state", state)

    @classmethod
    def homogeneous(cls, kappa, omega, flavor: Flavor | str = Flavor.BIMODAL, state=None) -> MultiHigs:
        """Stack channels sharing one flavor, from gain and increment vectors."""
        kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        if kappa.shape != omega.shape:
            raise ValueError("kappa and omega must have the same length")
        flavor = Flavor(flavor)
        return cls([Channel(HigsParams(k, w), flavor) for k, w in zip(kappa, omega)], state)

    @property
    def p(self) -> int:
        return len(self.channels)

    @property
    def kappa(self) -> np.ndarray:
        return np.array([c.params.kappa for c in self.channels])

    @property
    def omega(self) -> np.ndarray:
        return np.array([c.params.omega for c in self.channels])

    @property
    def trimodal(self) -> list[bool]:
        return [c.flavor is Flavor.TRIMODAL for c in self.channels]

    @property
    def K(self) -> np.ndarray:
        return np.diag(self.kappa)

    @property
    def Omega(self) -> np.ndarray:
        return np.diag(self.omega)

    def with_state(self, state) -> MultiHigs:
        return MultiHigs(self.channels, state)

    def with_flavor(self, flavor: Flavor | str) -> MultiHigs:
        flavor = Flavor(flavor)
        return MultiHigs([Channel(c.params, flavor) for c in self.channels], self.state)

    def to_dict(self) -> dict:
        return {"channels": [c.to_dict() for c in self.channels]}


def advance(X, E, kappa, omega, trimodal) -> tuple[list[float], list[Mode]]:
    """Channel-wise update on plain sequences; shared by every stepping path."""
    X_next = []
    modes = []
    for x, e, k, w, tri in zip(X, E, kappa, omega, trimodal):
        x_int = x + w * e
        g = k * e
        # same region tests as nihigs.higs, inlined for speed
        if (0.0 <= x_int <= g) if e > 0 else (g <= x_int <= 0.0) if e < 0 else x_int == 0.0:
            X_next.append(x_int)
            modes.append(Mode.INTEGRATOR)
        elif not tri or (x_int > g if e > 0 else x_int < g):
            X_next.append(g)
            modes.append(Mode.GAIN)
        else:
            X_next.append(0.0)
            modes.append(Mode.ZERO)
    return X_next, modes


def step_multi(mh: MultiHigs, E) -> tuple[MultiHigs, np.ndarray, list[Mode]]:
    """Advance every channel one sample.

    Returns the updated controller, the output ``Y`` (equal to the new state
    vector) and the per-channel modes.
    """
    E = np.asarray(E, dtype=float).reshape(-1)
    if E.shape != (mh.p,):
        raise ValueError(f"input has length {E.size}, expected {mh.p}")
    X_next, modes = advance(mh.state.tolist(), E.tolist(), mh.kappa.tolist(), mh.omega.tolist(), mh.trimodal)
    nxt = MultiHigs(mh.channels, X_next)
    return nxt, nxt.state.copy(), modes


def multi_storage(X, K) -> float:
    """Composite storage ``0.5 * X^T K^-1 X`` for diagonal ``K``.

    ``K`` may be given as the diagonal matrix or as the vector of gains.
    """
    X = np.asarray(X, dtype=float).reshape(-1)
    K = np.asarray(K, dtype=float)
    kappa = np.diag(K) if K.ndim == 2 else K.reshape(-1)
    if kappa.shape != X.shape:
        raise ValueError("state and gain dimensions differ")
    if np.any(kappa <= 0):
        raise ValueError("all channel gains must be positive")
    return float(0.5 * np.sum(X * X / kappa))


def controller_from_dict(doc: dict) -> MultiHigs:
    """Parse ``{"channels": [{"kappa", "omega", "flavor"}, ...]}``."""
    if not isinstance(doc, dict) or not isinstance(doc.get("channels"), list):
        raise ValueError("controller document needs a 'channels' list")
    channels = []
    for i, ch in enumerate(doc["channels"]):
        if not isinstance(ch, dict):
            raise ValueError(f"channels[{i}] must be an object")
        try:
            params = HigsParams(ch["kappa"], ch["omega"])
            flavor = Flavor(ch.get("flavor", "bimodal"))
        except KeyError as exc:
            raise ValueError(f"channels[{i}] is missing {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ValueError(f"channels[{i}]: {exc}") from None
        channels.append(Channel(params, flavor))
    return MultiHigs(channels)


def load_controller(path: str | PathLike) -> MultiHigs:
    with open(path, encoding="utf-8") as fh:
        return controller_from_dict(json.load(fh))

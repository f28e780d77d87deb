"""Positive-feedback loop of a sampled plant and a multi-HIGS controller.

Per sample ``k``::

    y[k] = C x[k] + noise[k]
    E[k] = y[k] + r[k]
    X[k+1], modes = controller step on E[k]
    u[k] = X[k+1]
    x[k+1] = A x[k] + B (u[k] + w[k])

The plant has no feedthrough, so the loop has no algebraic cycle.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .higs import Flavor, Mode
from .multi_higs import MultiHigs, advance
from .plant import DiscreteStateSpace, FrequencyResponseSample

__all__ = [
    "ClosedLoopConfig",
    "ClosedLoopTrace",
    "SimulationDiverged",
    "Injection",
    "simulate",
    "lyapunov_values",
    "lyapunov_monitor",
    "stepped_sine_frf",
    "step_response_metrics",
    "noise_study",
    "DIVERGENCE_LIMIT",
]

DIVERGENCE_LIMIT = 1e12

_MODE_CODES = {Mode.INTEGRATOR: "I", Mode.GAIN: "G", Mode.ZERO: "Z"}


class Injection(str, enum.Enum):
    REFERENCE = "reference"
    DISTURBANCE = "disturbance"


@dataclass(frozen=True)
class ClosedLoopConfig:
    """Everything needed for one deterministic run.

    ``controller=None`` opens the loop (``u = 0``), which is how open-loop
    responses are measured with the same engine. Signals ``r`` and ``w`` may
    be ``None`` (zero), a constant p-vector, a ``steps x p`` array or a
    callable ``k -> p-vector``.
    """

    plant: DiscreteStateSpace
    controller: MultiHigs | None
    steps: int
    x0: np.ndarray | None = None
    r: object = None
    w: object = None
    measurement_noise_std: object = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        p = self.plant.n_outputs
        if self.plant.n_inputs != p:
            raise ValueError("plant must have as many inputs as outputs")
        if self.controller is not None and self.controller.p != p:
            raise ValueError(f"controller has {self.controller.p} channels, plant has {p} outputs")
        if self.x0 is not None and np.asarray(self.x0).size != self.plant.n:
            raise ValueError(f"x0 must have length {self.plant.n}")
        std = np.broadcast_to(np.asarray(self.measurement_noise_std, dtype=float), (p,))
        if np.any(std < 0) or not np.all(np.isfinite(std)):
            raise ValueError("measurement noise std must be finite and nonnegative")

    @property
    def p(self) -> int:
        return self.plant.n_outputs


@dataclass
class ClosedLoopTrace:
    """Per-step record of a simulation. Row ``k`` holds step ``k``.

    ``X`` is the controller state at the start of step ``k``; ``u[k]`` equals
    the controller state after the step.
    """

    ts: float
    x: np.ndarray
    X: np.ndarray
    y: np.ndarray
    E: np.ndarray
    u: np.ndarray
    w: np.ndarray
    modes: np.ndarray
    Vhat: np.ndarray
    W: np.ndarray | None = None

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self)) * self.ts

    def truncated(self, steps: int) -> ClosedLoopTrace:
        sl = slice(0, steps)
        return ClosedLoopTrace(
            self.ts, self.x[sl], self.X[sl], self.y[sl], self.E[sl], self.u[sl], self.w[sl],
            self.modes[sl], self.Vhat[sl], None if self.W is None else self.W[sl],
        )

    def to_csv(self) -> str:
        """CSV text with 17 significant digits per value."""
        n, p = self.x.shape[1], self.y.shape[1]
        header = ["k"]
        header += [f"x{i}" for i in range(n)]
        for name in ("X", "y", "E", "u", "w", "mode"):
            header += [f"{name}{i}" for i in range(p)]
        header += ["Vhat", "W"]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        fmt = "{:.17g}".format
        for k in range(len(self)):
            row = [str(k)]
            for arr in (self.x, self.X, self.y, self.E, self.u, self.w):
                row += [fmt(v) for v in arr[k]]
            row += list(self.modes[k])
            row.append(fmt(self.Vhat[k]))
            row.append("" if self.W is None else fmt(self.W[k]))
            writer.writerow(row)
        return buf.getvalue()


class SimulationDiverged(ArithmeticError):
    """State left the finite range; ``trace`` holds the steps before ``step``."""

    def __init__(self, step: int, trace: ClosedLoopTrace):
        self.step = step
        self.trace = trace
        super().__init__(f"simulation diverged at step {step}")


def _signal(sig, steps: int, p: int, name: str) -> np.ndarray:
    if sig is None:
        return np.zeros((steps, p))
    if callable(sig):
        out = np.array([np.asarray(sig(k), dtype=float).reshape(p) for k in range(steps)])
    else:
        arr = np.asarray(sig, dtype=float)
        try:
            out = np.array(np.broadcast_to(arr, (steps, p)))
        except ValueError:
            raise ValueError(f"signal {name} cannot be shaped to ({steps}, {p})") from None
    if not np.all(np.isfinite(out)):
        raise ValueError(f"signal {name} has non-finite values")
    return out


def simulate(cfg: ClosedLoopConfig) -> ClosedLoopTrace:
    """Run the loop for ``cfg.steps`` samples.

    Raises :class:`SimulationDiverged` when any state component exceeds
    ``DIVERGENCE_LIMIT`` or becomes non-finite.
    """
    plant = cfg.plant
    n, p, N = plant.n, cfg.p, cfg.steps
    A, B, C = plant.A, plant.B, plant.C

    r = _signal(cfg.r, N, p, "r")
    w = _signal(cfg.w, N, p, "w")
    std = np.broadcast_to(np.asarray(cfg.measurement_noise_std, dtype=float), (p,))
    rng = np.random.default_rng(cfg.seed)
    noise = rng.standard_normal((N, p)) * std if np.any(std > 0) else np.zeros((N, p))

    xs = np.zeros((N, n))
    Xs = np.zeros((N, p))
    ys = np.zeros((N, p))
    Es = np.zeros((N, p))
    us = np.zeros((N, p))
    modes = np.full((N, p), "-", dtype="<U1")
    Vhat = np.zeros(N)

    x = np.zeros(n) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float).reshape(n).copy()
    ctrl = cfg.controller
    if ctrl is not None:
        X = ctrl.state.tolist()
        kappa = ctrl.kappa.tolist()
        omega = ctrl.omega.tolist()
        tri = ctrl.trimodal
        inv_k = 1.0 / ctrl.kappa
    else:
        X = [0.0] * p

    def partial(k):
        return ClosedLoopTrace(plant.ts, xs[:k], Xs[:k], ys[:k], Es[:k], us[:k], w[:k], modes[:k], Vhat[:k])

    for k in range(N):
        if not np.all(np.abs(x) <= DIVERGENCE_LIMIT):
            raise SimulationDiverged(k, partial(k))
        y = C @ x + noise[k]
        E = y + r[k]
        xs[k] = x
        ys[k] = y
        Es[k] = E
        if ctrl is not None:
            Xs[k] = X
            Vhat[k] = 0.5 * float(np.dot(Xs[k] * Xs[k], inv_k))
            X, mk = advance(X, E.tolist(), kappa, omega, tri)
            modes[k] = [_MODE_CODES[m] for m in mk]
            us[k] = X
        x = A @ x + B @ (us[k] + w[k])
    return ClosedLoopTrace(plant.ts, xs, Xs, ys, Es, us, w, modes, Vhat)


def lyapunov_values(trace: ClosedLoopTrace, P, C, K) -> np.ndarray:
    """``W = 0.5 x^T P x + 0.5 X^T K^-1 X - x^T C^T X`` at every step."""
    P = np.asarray(P, dtype=float)
    if np.linalg.norm(P - P.T) > 1e-12 * max(np.linalg.norm(P), 1e-300):
        raise ValueError("P must be symmetric")
    C = np.asarray(C, dtype=float)
    K = np.asarray(K, dtype=float)
    kappa = np.diag(K) if K.ndim == 2 else K
    x, X = trace.x, trace.X
    if P.shape != (x.shape[1], x.shape[1]) or C.shape != (X.shape[1], x.shape[1]):
        raise ValueError("P, C dimensions do not match the trace")
    quad_x = 0.5 * np.einsum("ki,ij,kj->k", x, P, x)
    quad_X = 0.5 * np.sum(X * X / kappa, axis=1)
    cross = np.einsum("ki,ki->k", x @ C.T, X)
    return quad_x + quad_X - cross


def lyapunov_monitor(trace: ClosedLoopTrace, P, C, K) -> tuple[np.ndarray, float]:
    """Closed-loop Lyapunov values and their largest one-step increase.

    Meaningful for noise-free runs with ``r = w = 0`` on plants certified by
    ``P``; elsewhere it is a diagnostic only. The values are also stored on
    the trace as ``trace.W``.
    """
    W = lyapunov_values(trace, P, C, K)
    trace.W = W
    max_increase = float(np.max(np.diff(W))) if W.size > 1 else 0.0
    return W, max_increase


# --------------------------------------------------------------------------
# stepped sine


def _first_harmonic(y: np.ndarray, k: np.ndarray, omega_d: float) -> np.ndarray:
    """Least-squares fit of ``a sin + b cos + c``; returns ``a + j b`` per column."""
    basis = np.column_stack([np.sin(omega_d * k), np.cos(omega_d * k), np.ones_like(k, dtype=float)])
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return coef[0] + 1j * coef[1]


def _one_frequency(args) -> FrequencyResponseSample:
    cfg_base, inject, channel, f_hz, amplitude, settle_periods, measure_periods = args
    ts = cfg_base.plant.ts
    p = cfg_base.p
    per = 1.0 / (f_hz * ts)  # samples per period
    n_settle = int(math.ceil(settle_periods * per))
    n_meas = max(int(round(measure_periods * per)), 4)
    steps = n_settle + n_meas
    omega_d = 2.0 * math.pi * f_hz * ts
    drive = np.zeros((steps, p))
    drive[:, channel] = amplitude * np.sin(omega_d * np.arange(steps))
    if Injection(inject) is Injection.REFERENCE:
        cfg = replace(cfg_base, steps=steps, r=drive)
    else:
        cfg = replace(cfg_base, steps=steps, w=drive)
    omega = 2.0 * math.pi * f_hz
    try:
        tr = simulate(cfg)
    except SimulationDiverged:
        return FrequencyResponseSample(omega, np.full((p, 1), np.nan + 0j), flagged=True)
    k = np.arange(n_settle, steps)
    g = _first_harmonic(tr.y[n_settle:], k, omega_d) / amplitude
    return FrequencyResponseSample(omega, g.reshape(p, 1))


def stepped_sine_frf(
    cfg_base: ClosedLoopConfig,
    inject: Injection | str,
    channel: int,
    freqs_hz: Sequence[float],
    amplitude: float,
    settle_periods: int = 100,
    measure_periods: int = 20,
    workers: int = 1,
) -> list[FrequencyResponseSample]:
    """Measure the first-harmonic response of every output to one sinusoidal input.

    For each frequency the loop is driven by ``amplitude * sin`` on
    ``channel`` of the reference or disturbance input; the first
    ``settle_periods`` periods are discarded and the remainder is fitted
    against sine and cosine at the drive frequency. Each returned sample has
    ``G`` of shape ``(p, 1)``. Diverged runs come back with ``flagged=True``.
    """
    ts = cfg_base.plant.ts
    nyquist = 0.5 / ts
    if not amplitude > 0:
        raise ValueError("amplitude must be positive")
    if not 0 <= channel < cfg_base.p:
        raise ValueError(f"channel {channel} out of range")
    freqs = [float(f) for f in freqs_hz]
    if any(not 0 < f < nyquist for f in freqs):
        raise ValueError(f"frequencies must lie in (0, {nyquist}) Hz")
    jobs = [(cfg_base, inject, channel, f, amplitude, settle_periods, measure_periods) for f in freqs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_one_frequency, jobs))
    return [_one_frequency(j) for j in jobs]


# --------------------------------------------------------------------------
# step response and noise


def step_response_metrics(trace: ClosedLoopTrace, channel: int, band: float = 0.02) -> dict:
    """Overshoot, settling time and steady-state value of output ``channel``.

    The steady state is the mean over the last 10% of the trace. Overshoot and
    settling are measured against the last sample, so a monotone approach has
    exactly zero overshoot. Settling time is the first instant after which the
    output stays within ``band`` of the total change; ``None`` when the final
    10% leaves that band.
    """
    y = trace.y[:, channel]
    N = y.size
    tail = y[int(math.floor(0.9 * N)):]
    steady = float(np.mean(tail))
    final = float(y[-1])
    change = final - float(y[0])
    if change == 0:
        return {"overshoot_percent": 0.0, "settling_time_s": 0.0, "steady_state": steady}
    direction = math.copysign(1.0, change)
    peak = float(np.max(direction * (y - final)))
    overshoot = max(peak, 0.0) / abs(change) * 100.0
    outside = np.abs(y - final) > band * abs(change)
    if np.any(outside[N - tail.size:]):
        settling = None
    else:
        idx = np.nonzero(outside)[0]
        settling = 0.0 if idx.size == 0 else float((idx[-1] + 1) * trace.ts)
    return {"overshoot_percent": overshoot, "settling_time_s": settling, "steady_state": steady}


def noise_study(cfg: ClosedLoopConfig, discard_fraction: float = 0.1) -> dict:
    """Standard deviation of each control channel, bimodal versus trimodal.

    Both runs reuse ``cfg`` (same seed, hence the same noise sequence) and
    differ only in the controller flavor.
    """
    if cfg.controller is None:
        raise ValueError("noise study needs a controller")
    start = int(discard_fraction * cfg.steps)
    out = {}
    for flavor in (Flavor.BIMODAL, Flavor.TRIMODAL):
        tr = simulate(replace(cfg, controller=cfg.controller.with_flavor(flavor)))
        out[f"sigma_u_{flavor.value}"] = np.std(tr.u[start:], axis=0)
    return out

"""Two-well kinetic battery model with the migration reweighting ``p``.

The available charge obeys

    du = -Lambda(dt) + k_c (c v - u + p (N - u)) dt,   u(0) = N,

with ``v = T - Lambda``. Writing ``r = k_c (1 + p)`` and ``c_eff = c / (1 + p)``
its exact solution is

    u(t) = N - c_eff Lambda(t) - (1 - c_eff) int_0^t exp(-r (t - s)) Lambda(ds).

For ``p = 0`` this is the textbook solution with weight ``c``. For ``p != 0``
the permanent part of a discharge is ``c_eff`` rather than ``c``; that is what
the differential equation implies and is verified against RK4 in the tests.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import BatterySpec, DischargeTrace
from .errors import ModelError
from .io import write_csv


@dataclass(frozen=True)
class KibamParams:
    k: float
    p: float
    battery: BatterySpec

    def __post_init__(self):
        if not (np.isfinite(self.k) and self.k > 0):
            raise ModelError("reaction parameter k must be positive")
        if not 0 < self.battery.c < 1:
            raise ModelError("kinetic battery model needs 0 < c < 1, i.e. N < T")
        if not 1 + self.p > 0:
            raise ModelError("migration weight needs 1 + p > 0 for the kernel to decay")

    @classmethod
    def from_kc(cls, kc: float, p: float, battery: BatterySpec) -> "KibamParams":
        c = battery.c
        return cls(kc * c * (1 - c), p, battery)

    @property
    def kc(self) -> float:
        c = self.battery.c
        return self.k / (c * (1 - c))

    @property
    def decay(self) -> float:
        """Relaxation rate ``k_c (1 + p)`` of the convolution kernel."""
        return self.kc * (1 + self.p)

    @property
    def c_eff(self) -> float:
        return self.battery.c / (1 + self.p)

    def gamma(self, rate: float) -> float:
        """Relaxation scale ``lambda / (k_c (1 + p))`` in Ah."""
        if not rate > 0:
            raise ModelError("relaxation scale needs a positive discharge rate")
        return rate / self.decay


@dataclass
class KibamState:
    """Available ``u``, bound ``y`` and remaining ``v = u + y`` at time(s) ``t``."""

    t: np.ndarray | float
    u: np.ndarray | float
    y: np.ndarray | float
    v: np.ndarray | float

    def to_csv(self, path) -> Path:
        return write_csv(
            path, ["t_hours", "v_Ah", "u_Ah", "y_Ah"],
            [np.atleast_1d(self.t), np.atleast_1d(self.v), np.atleast_1d(self.u), np.atleast_1d(self.y)],
        )


def _state(params: KibamParams, t, lam, kernel) -> KibamState:
    N, T = params.battery.N, params.battery.T
    ce = params.c_eff
    u = N - ce * lam - (1 - ce) * kernel
    v = T - lam
    return KibamState(t, u, v - u, v)


def _scalarize(t, *arrays):
    if np.ndim(t) == 0:
        return tuple(float(a) for a in arrays)
    return arrays


def kibam_constant_u(params: KibamParams, rate: float, t) -> KibamState:
    if rate < 0:
        raise ModelError("discharge rate must be non-negative")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ModelError("time must be non-negative")
    r = params.decay
    lam = rate * t
    kernel = -rate * np.expm1(-r * t) / r
    lam, kernel = _scalarize(t, lam, kernel)
    return _state(params, float(t) if t.ndim == 0 else t, lam, kernel)


def convolution_kernel(params: KibamParams, trace: DischargeTrace, t) -> np.ndarray:
    """``int_0^t exp(-r (t - s)) Lambda(ds)`` segment by segment, exactly."""
    t = np.asarray(t, dtype=float)
    r = params.decay
    out = np.zeros_like(t)
    for a, b, rate in trace.segments:
        b_eff = np.minimum(b, t)
        active = t > a
        # exp(-r (t - b')) (1 - exp(-r (b' - a)))
        seg = -rate * np.exp(-r * (t - b_eff)) * np.expm1(-r * (b_eff - a)) / r
        out = out + np.where(active, seg, 0.0)
    for s, size in zip(trace.jump_times, trace.jump_sizes):
        lag = t - s
        out = out + np.where(lag >= 0, size * np.exp(-r * np.maximum(lag, 0.0)), 0.0)
    return out


def kibam_general_u(params: KibamParams, trace: DischargeTrace, t) -> KibamState:
    """Closed-form state under an arbitrary piecewise-linear-plus-jumps trace."""
    t_arr = np.asarray(t, dtype=float)
    lam = trace.cumulative(t_arr)
    kernel = convolution_kernel(params, trace, t_arr)
    lam, kernel = _scalarize(t_arr, lam, kernel)
    return _state(params, float(t_arr) if t_arr.ndim == 0 else t_arr, lam, kernel)


def kibam_poisson_path(params: KibamParams, trace: DischargeTrace, t_grid: Sequence[float]) -> KibamState:
    """``U(t) = N - sum_{s_i <= t} A_i (c_eff + (1 - c_eff) exp(-r (t - s_i)))``."""
    if trace.kind != "poisson":
        raise ModelError("kibam_poisson_path needs a sampled Poisson trace")
    t = np.asarray(t_grid, dtype=float)
    if np.any(t > trace.horizon):
        raise ModelError("grid extends beyond the sampled trace")
    r = params.decay
    ce = params.c_eff
    lag = t[:, None] - trace.jump_times[None, :]
    hit = lag >= 0
    w = np.where(hit, ce + (1 - ce) * np.exp(-r * np.where(hit, lag, 0.0)), 0.0)
    drawn = w @ trace.jump_sizes
    u = params.battery.N - drawn
    v = params.battery.T - trace.cumulative(t)
    return KibamState(t, u, v - u, v)


def kibam_autonomous_curve(params: KibamParams, rate: float, v) -> np.ndarray | float:
    """Available charge as a function of remaining charge under constant current.

    ``u = N - c_eff (T - v) - (1 - c_eff) gamma (1 - exp(-(T - v) / gamma))``;
    for ``p = 0`` the first two terms reduce to ``c v``.
    """
    if not rate > 0:
        raise ModelError("autonomous curve needs a positive discharge rate")
    T, N = params.battery.T, params.battery.N
    v_arr = np.asarray(v, dtype=float)
    if np.any(v_arr < 0) or np.any(v_arr > T):
        raise ModelError("remaining capacity must lie in [0, T]")
    g = params.gamma(rate)
    ce = params.c_eff
    d = T - v_arr
    u = N - ce * d + (1 - ce) * g * np.expm1(-d / g)
    return float(u) if u.ndim == 0 else u


def kibam_rhs(params: KibamParams, trace: DischargeTrace):
    """Two-well right-hand side ``(u, y)`` for RK4, segment-aware.

    Jumps are not part of the rhs; pass them to the integrator as
    ``(s, [-A, 0])`` increments.
    """
    c, kc, p, N = params.battery.c, params.kc, params.p, params.battery.N

    def rhs(t, state, t_mid):
        u, y = state[0], state[1]
        flow = kc * (c * y - (1 - c) * u + p * (N - u))
        return np.array([-trace.rate_at(t_mid) + flow, -flow])

    return rhs

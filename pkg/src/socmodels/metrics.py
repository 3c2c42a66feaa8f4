"""State of charge, Nernst voltage and end-of-life measures."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .core import CapacityTrace
from .errors import ModelError, NoBracketError
from .io import write_csv, write_json
from .numerics import brent_root


def state_of_charge(u, N: float):
    if not N > 0:
        raise ModelError("nominal capacity N must be positive")
    return np.asarray(u, dtype=float) / N if np.ndim(u) else float(u) / N


@dataclass(frozen=True)
class VoltageModel:
    """``E = E0 - current r + K_e ln(soc)`` with ``K_e = R T_a / (z F)``."""

    E0: float
    r: float
    E_cut: float
    R: float = 8.314
    T_a: float = 298.15
    z: float = 1.0
    F: float = 96485.0

    def __post_init__(self):
        if not self.K_e > 0:
            raise ModelError("Nernst coefficient must be positive")
        if not self.E_cut < self.E0:
            raise ModelError("cutoff voltage must lie below the open-circuit voltage")
        if self.r < 0:
            raise ModelError("internal resistance must be non-negative")

    @property
    def K_e(self) -> float:
        return self.R * self.T_a / (self.z * self.F)

    def voltage(self, soc, current=0.0):
        soc = np.asarray(soc, dtype=float)
        if np.any(soc <= 0):
            raise ModelError("state of charge at or below 0 is outside the voltage-model domain (end of life)")
        out = self.E0 - np.asarray(current, dtype=float) * self.r + self.K_e * np.log(soc)
        return float(out) if out.ndim == 0 else out


def voltage(model: VoltageModel, soc, current=0.0):
    return model.voltage(soc, current)


def cutoff_threshold(model: VoltageModel, N: float, current: float = 0.0) -> float:
    """Available capacity at which the voltage reaches ``E_cut`` under ``current``."""
    return N * math.exp((model.E_cut - model.E0 + current * model.r) / model.K_e)


@dataclass(frozen=True)
class PerformanceReport:
    """End-of-life summary; ``t0``/``v0`` are ``None`` when the threshold was never reached."""

    t0_hours: float | None
    v0_Ah: float | None
    D_Ah: float | None
    gain_Ah: float | None
    threshold: float
    status: str

    @property
    def alive(self) -> bool:
        return self.status == "alive at horizon"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self, path: str | Path) -> Path:
        cols = [self.t0_hours, self.v0_Ah, self.D_Ah, self.gain_Ah, self.threshold]
        cols = [math.nan if c is None else c for c in cols]
        return write_csv(path, ["t0_hours", "v0_Ah", "D_Ah", "gain_Ah", "threshold"], [[c] for c in cols])

    def to_json(self, path: str | Path) -> Path:
        return write_json(path, self.to_dict())


def _report(t0, v0, T, N, threshold) -> PerformanceReport:
    D = T - v0
    return PerformanceReport(float(t0) if t0 is not None else None, float(v0), float(D), float(D - N),
                             float(threshold), "dead")


def _alive(threshold) -> PerformanceReport:
    return PerformanceReport(None, None, None, None, float(threshold), "alive at horizon")


def performance_report(trace: CapacityTrace, threshold: float,
                       evaluator: Callable[[float], float] | None = None,
                       v_of_t: Callable[[float], float] | None = None,
                       tol: float = 1e-12) -> PerformanceReport:
    """Battery life from the first sample where ``x <= threshold``.

    With ``evaluator`` (``t -> x``) the crossing is refined by Brent's method
    between the bracketing samples; otherwise it is interpolated linearly.
    ``v_of_t`` gives the remaining capacity at the refined time (linear
    interpolation of the trace by default). Later upward re-crossings are
    ignored.
    """
    t, v, x = trace.t, trace.v, trace.x
    below = np.nonzero(x <= threshold)[0]
    if len(below) == 0:
        return _alive(threshold)
    i = int(below[0])
    if i == 0:
        return _report(t[0], v[0], trace.battery.T, trace.battery.N, threshold)
    lo, hi = float(t[i - 1]), float(t[i])
    if evaluator is not None:
        try:
            t0 = brent_root(lambda s: evaluator(s) - threshold, lo, hi, tol)
        except NoBracketError:
            t0 = hi
    else:
        w = (x[i - 1] - threshold) / (x[i - 1] - x[i])
        t0 = lo + w * (hi - lo)
    v0 = v_of_t(t0) if v_of_t is not None else float(np.interp(t0, t, v))
    return _report(t0, v0, trace.battery.T, trace.battery.N, threshold)


def performance_from_curve(curve: Callable[[float], float], T: float, N: float, threshold: float,
                           tol: float = 1e-12, n_scan: int = 200) -> PerformanceReport:
    """Residual ``v0`` solving ``x(v0) = threshold`` on an autonomous curve ``v -> x``.

    The scan runs from ``v = T`` downwards and keeps the first crossing, so
    ``v0`` is the largest root.
    """
    grid = np.linspace(T, 0.0, n_scan + 1)
    vals = np.array([curve(float(g)) for g in grid]) - threshold
    idx = np.nonzero(vals <= 0)[0]
    if len(idx) == 0:
        return _alive(threshold)
    i = int(idx[0])
    v0 = float(grid[0]) if i == 0 else brent_root(lambda s: curve(s) - threshold, grid[i], grid[i - 1], tol)
    return _report(None, v0, T, N, threshold)

"""Battery specification, the stylized discharge profiles and sampled traces.

A profile is a law for the consumed charge ``Lambda(t)``; a
:class:`DischargeTrace` is a concrete realization of it on ``[0, horizon]``
made of constant-rate segments plus point jumps. Every downstream model
consumes traces, so the evaluation here is exact breakpoint arithmetic.

The pulse current is called ``current`` (written delta_I in the docs) to keep
it apart from the spatial drift parameter delta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ModelError
from .io import write_csv
from .numerics import rng_stream

# Relative slack used when snapping times onto cycle boundaries.
_SNAP = 1e-12


@dataclass(frozen=True)
class BatterySpec:
    """Nominal capacity ``N`` and theoretical capacity ``T`` in Ah."""

    nominal_capacity: float
    theoretical_capacity: float

    def __post_init__(self):
        N, T = self.nominal_capacity, self.theoretical_capacity
        if not (np.isfinite(N) and np.isfinite(T)):
            raise ModelError("battery capacities must be finite")
        if not 0 < N <= T:
            raise ModelError(f"battery requires 0 < N <= T, got N={N}, T={T}")

    @property
    def N(self) -> float:
        return float(self.nominal_capacity)

    @property
    def T(self) -> float:
        return float(self.theoretical_capacity)

    @property
    def c(self) -> float:
        return self.N / self.T

    @property
    def ell(self) -> float:
        return (self.T - self.N) / self.N


def _positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise ModelError(f"{name} must be strictly positive, got {value}")


@dataclass(frozen=True)
class ConstantCurrent:
    rate: float

    def __post_init__(self):
        _positive("rate", self.rate)


@dataclass(frozen=True)
class PulseTrain:
    """Periodic on/off load; on-periods are ``[j*cycle, j*cycle + on_duration)``."""

    current: float
    on_duration: float
    off_duration: float

    def __post_init__(self):
        _positive("current", self.current)
        _positive("on_duration", self.on_duration)
        _positive("off_duration", self.off_duration)

    @property
    def cycle(self) -> float:
        return self.on_duration + self.off_duration

    @property
    def dutycycle(self) -> float:
        return self.on_duration / self.cycle


@dataclass(frozen=True)
class PoissonTrain:
    """Jumps of ``jump_charge`` Ah at the epochs of a rate-``event_rate`` Poisson process."""

    jump_charge: float
    event_rate: float
    seed: int = 0

    def __post_init__(self):
        _positive("jump_charge", self.jump_charge)
        _positive("event_rate", self.event_rate)
        if int(self.seed) != self.seed or self.seed < 0:
            raise ModelError("seed must be a non-negative integer")

    @classmethod
    def from_pulse(cls, pulse: PulseTrain, seed: int = 0) -> "PoissonTrain":
        """Same average rate as ``pulse``: charge ``current * on_duration`` per cycle."""
        return cls(pulse.current * pulse.on_duration, 1.0 / pulse.cycle, seed)


DischargeProfile = Union[ConstantCurrent, PulseTrain, PoissonTrain]


def average_rate(profile: DischargeProfile) -> float:
    if isinstance(profile, ConstantCurrent):
        return float(profile.rate)
    if isinstance(profile, PulseTrain):
        return profile.current * profile.dutycycle
    if isinstance(profile, PoissonTrain):
        return profile.jump_charge * profile.event_rate
    raise ModelError(f"unknown discharge profile {profile!r}")


def _cycle_split(pulse: PulseTrain, t):
    """Whole cycles completed and position inside the current cycle."""
    tau = pulse.cycle
    n = np.floor(np.asarray(t, dtype=float) / tau)
    r = t - n * tau
    # 0.6 / 0.2 rounds to 2.999...; treat such a point as the next cycle start
    wrap = r >= tau * (1.0 - _SNAP * np.maximum(1.0, n))
    n = np.where(wrap, n + 1, n)
    r = np.where(wrap, 0.0, np.maximum(r, 0.0))
    return n, r


def duty_indicator(profile: PulseTrain, t):
    """``J_t``: 1 during on-periods, 0 otherwise (right-continuous)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ModelError("time must be non-negative")
    _, r = _cycle_split(profile, t)
    out = (r < profile.on_duration).astype(int)
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DischargeTrace:
    """A realized discharge: constant-rate segments plus point jumps.

    ``times`` are the segment breakpoints (``times[0] == 0``, last entry is
    the horizon) and ``rates[i]`` is the current on ``[times[i], times[i+1])``.
    Jumps are right-continuous: ``Lambda(s)`` already includes a jump at ``s``.
    """

    times: np.ndarray
    rates: np.ndarray
    jump_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    jump_sizes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kind: str = "constant"
    seed: int | None = None
    path_id: int | None = None

    def __post_init__(self):
        for name in ("times", "rates", "jump_times", "jump_sizes"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        t, r = self.times, self.rates
        if t.ndim != 1 or len(t) < 2 or t[0] != 0.0:
            raise ModelError("trace breakpoints must start at 0 and contain a horizon")
        if np.any(np.diff(t) <= 0):
            raise ModelError("trace breakpoints must be strictly increasing")
        if len(r) != len(t) - 1 or np.any(r < 0):
            raise ModelError("need one non-negative rate per segment")
        if len(self.jump_times) != len(self.jump_sizes):
            raise ModelError("jump times and sizes differ in length")
        if len(self.jump_times):
            if np.any(np.diff(self.jump_times) < 0) or self.jump_times[0] < 0:
                raise ModelError("jump times must be sorted and non-negative")
            if self.jump_times[-1] > self.horizon or np.any(self.jump_sizes <= 0):
                raise ModelError("jumps must be positive and inside the horizon")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def has_jumps(self) -> bool:
        return len(self.jump_times) > 0

    @property
    def segments(self):
        """Iterate ``(start, end, rate)`` for segments with positive rate."""
        for a, b, r in zip(self.times[:-1], self.times[1:], self.rates):
            if r > 0:
                yield float(a), float(b), float(r)

    def _linear_part(self, t):
        seg_int = np.concatenate([[0.0], np.cumsum(self.rates * np.diff(self.times))])
        i = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.rates) - 1)
        return seg_int[i] + self.rates[i] * (t - self.times[i])

    def _check_time(self, t):
        if np.any(t < 0):
            raise ModelError("time must be non-negative")
        if np.any(t > self.horizon * (1 + _SNAP)):
            raise ModelError(f"trace horizon {self.horizon} is shorter than requested t")

    def cumulative(self, t):
        """``Lambda(t)`` for scalar or array ``t``."""
        t = np.asarray(t, dtype=float)
        self._check_time(t)
        out = self._linear_part(t)
        if self.has_jumps:
            csum = np.concatenate([[0.0], np.cumsum(self.jump_sizes)])
            out = out + csum[np.searchsorted(self.jump_times, t, side="right")]
        return float(out) if out.ndim == 0 else out

    def rate_at(self, t) -> float:
        """Segment current at ``t`` (right-continuous)."""
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.rates) - 1))
        return float(self.rates[i])

    @property
    def breakpoints(self) -> np.ndarray:
        """Times where ``Lambda`` changes slope or jumps."""
        return np.unique(np.concatenate([self.times, self.jump_times]))

    def to_csv(self, path) -> list[Path]:
        """``t_hours,lambda_Ah`` at the breakpoints (post-jump values) plus ``jumps.csv``."""
        path = Path(path)
        bp = self.breakpoints
        written = [write_csv(path, ["t_hours", "lambda_Ah"], [bp, self.cumulative(bp)])]
        if self.kind == "poisson" or self.has_jumps:
            written.append(
                write_csv(path.with_name("jumps.csv"), ["t_hours", "jump_Ah"], [self.jump_times, self.jump_sizes])
            )
        return written


def sample_poisson_trace(profile: PoissonTrain, horizon: float, path_id: int = 0) -> DischargeTrace:
    """Realize ``profile`` on ``[0, horizon]`` from stream ``(seed, path_id)``.

    Inter-arrival times are exponential draws by inversion of uniforms from a
    Philox stream, generated in blocks whose sizes depend only on the expected
    count, so a given ``(seed, path_id)`` always yields the same trace.
    """
    _positive("horizon", horizon)
    rng = rng_stream(profile.seed, int(path_id))
    mean = profile.event_rate * horizon
    block = int(mean + 6.0 * math.sqrt(mean) + 16)
    arrivals = np.zeros(0)
    t_last = 0.0
    while t_last <= horizon:
        gaps = -np.log1p(-rng.random(block)) / profile.event_rate
        epochs = t_last + np.cumsum(gaps)
        arrivals = np.concatenate([arrivals, epochs])
        t_last = float(epochs[-1])
    jt = arrivals[arrivals <= horizon]
    return DischargeTrace(
        times=np.array([0.0, float(horizon)]),
        rates=np.zeros(1),
        jump_times=jt,
        jump_sizes=np.full(len(jt), float(profile.jump_charge)),
        kind="poisson",
        seed=int(profile.seed),
        path_id=int(path_id),
    )


def discharge_trace(profile: DischargeProfile, horizon: float, path_id: int = 0) -> DischargeTrace:
    """Trace of any profile on ``[0, horizon]``; Poisson profiles are sampled."""
    _positive("horizon", horizon)
    if isinstance(profile, ConstantCurrent):
        return DischargeTrace(np.array([0.0, horizon]), np.array([profile.rate]), kind="constant")
    if isinstance(profile, PulseTrain):
        n_cycles = int(math.ceil(horizon / profile.cycle)) + 1
        j = np.arange(n_cycles)
        edges = np.sort(np.concatenate([j * profile.cycle, j * profile.cycle + profile.on_duration]))
        edges = edges[edges < horizon * (1 - _SNAP)]
        times = np.concatenate([edges, [horizon]])
        mids = 0.5 * (times[:-1] + times[1:])
        rates = np.where(duty_indicator(profile, mids) == 1, profile.current, 0.0)
        return DischargeTrace(times, rates, kind="pulse")
    if isinstance(profile, PoissonTrain):
        return sample_poisson_trace(profile, horizon, path_id)
    raise ModelError(f"unknown discharge profile {profile!r}")


def cumulative_discharge(profile: DischargeProfile | DischargeTrace, t):
    """Exact ``Lambda(t)`` for a deterministic profile or a sampled trace."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ModelError("time must be non-negative")
    if isinstance(profile, DischargeTrace):
        return profile.cumulative(t_arr)
    if isinstance(profile, ConstantCurrent):
        out = profile.rate * t_arr
    elif isinstance(profile, PulseTrain):
        n, r = _cycle_split(profile, t_arr)
        out = profile.current * (n * profile.on_duration + np.minimum(r, profile.on_duration))
    elif isinstance(profile, PoissonTrain):
        raise ModelError("Poisson profile has no deterministic Lambda; sample a trace first")
    else:
        raise ModelError(f"unknown discharge profile {profile!r}")
    return float(out) if out.ndim == 0 else out


@dataclass
class CapacityTrace:
    """Sampled trajectory of remaining ``v`` and available ``x`` capacity."""

    t: np.ndarray
    v: np.ndarray
    x: np.ndarray
    battery: BatterySpec

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if not (self.t.shape == self.v.shape == self.x.shape):
            raise ModelError("t, v, x must have equal shapes")

    @property
    def soc(self) -> np.ndarray:
        return self.x / self.battery.N

    def to_csv(self, path) -> Path:
        return write_csv(path, ["t_hours", "v_Ah", "x_Ah", "soc"], [self.t, self.v, self.x, self.soc])

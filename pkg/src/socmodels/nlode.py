"""Deterministic capacity ODEs with nonlinear recovery.

Three closed forms live here, each reduced to a linear ODE for
``Z = exp(k (N - x)) - 1`` (``k = alpha q`` or ``a``):

* the fluid limit of the Markov chain under its average current,
* the same dynamics driven by an on/off pulse schedule,
* the generic class ``dx = -Lambda(dt) + rate F(N - x) G(v) dt`` with
  ``F(u) = 1 - e^{-a u}``, whose ``(v, x)`` curve does not depend on the rate.

Integrals go through :func:`adaptive_simpson` on a log-shifted integrand so
large exponents never overflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .core import (
    BatterySpec,
    CapacityTrace,
    ConstantCurrent,
    DischargeProfile,
    DischargeTrace,
    PoissonTrain,
    PulseTrain,
    average_rate,
    discharge_trace,
    sample_poisson_trace,
)
from .errors import ModelError, NoBracketError, NumericalFailure
from .numerics import ToleranceConfig, adaptive_simpson, brent_root, resolve_tolerances, rk4_integrate
from .stochastic import MarkovParams


# --------------------------------------------------------------------------
# recovery gain functions


@dataclass(frozen=True)
class RecoveryFunction:
    """Non-decreasing gain ``[0, inf) -> [0, 1]`` with ``f(0) = 0``.

    ``integral(w)`` is ``int_0^w f``; it is needed for the exponential
    closed form via ``int_0^w (1 - G) = w - integral(w)``.
    """

    name: str
    f: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    integral: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    params: tuple = ()

    def __call__(self, u):
        return self.f(np.asarray(u, dtype=float))

    @classmethod
    def exponential(cls, rate: float) -> "RecoveryFunction":
        if not rate > 0:
            raise ModelError("exponential gain needs a positive rate")
        f = lambda u: -np.expm1(-rate * u)  # noqa: E731
        integ = lambda w: w + np.expm1(-rate * w) / rate  # noqa: E731
        return cls("exp", f, integ, (rate,))

    @classmethod
    def linear_capped(cls, slope: float) -> "RecoveryFunction":
        if not slope > 0:
            raise ModelError("linear gain needs a positive slope")
        knee = 1.0 / slope
        f = lambda u: np.minimum(slope * u, 1.0)  # noqa: E731
        integ = lambda w: np.where(w <= knee, 0.5 * slope * w * w, 0.5 * knee + (w - knee))  # noqa: E731
        return cls("linear-capped", f, integ, (slope,))

    @classmethod
    def table(cls, u_points: Sequence[float], values: Sequence[float]) -> "RecoveryFunction":
        """Monotone cubic (PCHIP) through the table, constant beyond its last point."""
        u = np.asarray(u_points, dtype=float)
        y = np.asarray(values, dtype=float)
        if u.ndim != 1 or len(u) < 2 or u[0] != 0 or np.any(np.diff(u) <= 0):
            raise ModelError("table abscissae must start at 0 and increase strictly")
        if y[0] != 0 or np.any(np.diff(y) < 0) or np.any(y < 0) or np.any(y > 1):
            raise ModelError("table values must start at 0, be non-decreasing and stay in [0, 1]")
        interp = PchipInterpolator(u, y, extrapolate=False)
        anti = interp.antiderivative()
        top, end, area = float(y[-1]), float(u[-1]), float(anti(u[-1]))

        def f(w):
            w = np.asarray(w, dtype=float)
            return np.where(w >= end, top, interp(np.clip(w, 0.0, end)))

        def integ(w):
            w = np.asarray(w, dtype=float)
            return np.where(w >= end, area + top * (w - end), anti(np.clip(w, 0.0, end)))

        grid = np.linspace(0.0, end, 100)
        vals = f(grid)
        if np.any(np.diff(vals) < -1e-12) or np.any(vals < -1e-12) or np.any(vals > 1 + 1e-12):
            raise ModelError("interpolated table is not monotone within [0, 1]")
        return cls("table", f, integ, (tuple(u), tuple(y)))


def recovery_from_config(cfg: dict) -> RecoveryFunction:
    kind = cfg.get("kind", "exp")
    if kind == "exp":
        return RecoveryFunction.exponential(float(cfg["rate"]))
    if kind == "linear-capped":
        return RecoveryFunction.linear_capped(float(cfg["slope"]))
    if kind == "table":
        return RecoveryFunction.table(cfg["u"], cfg["values"])
    raise ModelError(f"unknown recovery function kind {kind!r}")


@dataclass(frozen=True)
class NlodeSpec:
    """``dx = -Lambda(dt) + rate F(N - x) G(v) dt`` from ``x(0) = N``.

    ``F`` defaults to ``1 - e^{-a u}``, the case with a closed form.
    """

    G: RecoveryFunction
    a: float
    rate: float
    battery: BatterySpec
    F: RecoveryFunction | None = None

    def __post_init__(self):
        if not self.a > 0:
            raise ModelError("migration strength a must be positive")
        if not self.rate >= 0:
            raise ModelError("average rate must be non-negative")
        if self.F is None:
            object.__setattr__(self, "F", RecoveryFunction.exponential(self.a))

    @property
    def is_exponential(self) -> bool:
        return self.F.name == "exp" and math.isclose(self.F.params[0], self.a)

    def with_rate(self, rate: float) -> "NlodeSpec":
        return NlodeSpec(self.G, self.a, rate, self.battery, self.F)


# --------------------------------------------------------------------------
# helpers


def _capacity_from_integral(N: float, k: float, log_scale: float, phi: Callable[[float], float], upper: float,
                            tol: ToleranceConfig, n_scan: int = 65) -> float:
    """``N - ln(1 + e^{log_scale} int_0^upper e^{phi(s)} ds) / k`` to absolute accuracy ``tol.quad_tol``.

    The integrand is shifted by its sampled maximum. An error ``dZ`` in
    ``Z = e^{log_scale} int e^phi`` moves the result by ``dZ / (k (1 + Z))``,
    which sets the quadrature tolerance from a coarse trapezoid estimate.
    """
    if upper <= 0:
        return N
    grid = np.linspace(0.0, upper, n_scan)
    vals = np.array([phi(float(s)) for s in grid])
    shift = float(vals.max())
    coarse = float(np.trapezoid(np.exp(vals - shift), grid))
    quad_tol = tol.quad_tol * k * (math.exp(-log_scale - shift) + 0.5 * coarse)
    res = adaptive_simpson(lambda s: math.exp(phi(s) - shift), 0.0, upper, quad_tol, tol.quad_max_intervals)
    if res.value <= 0:
        raise NumericalFailure("non-positive quadrature value for an exponential integrand")
    return N - float(np.logaddexp(0.0, log_scale + shift + math.log(res.value))) / k


# --------------------------------------------------------------------------
# fluid limit of the chain


def fluid_exponent(params: MarkovParams, v: float):
    """Exponent ``alpha (2q - 1) s + alpha (1 - q) e^{-beta v} (1 - e^{-beta s}) / beta``."""
    a, b, q = params.alpha, params.beta, params.q
    ev = math.exp(-b * v)

    def phi(s):
        return a * (2 * q - 1) * s - a * (1 - q) * ev * math.expm1(-b * s) / b

    return phi


def fluid_limit_closed(params: MarkovParams, t, tol: ToleranceConfig | None = None):
    """``x_t = N - ln(1 + alpha q I) / (alpha q)`` with ``I = int_0^{T - v_t} e^{phi(s)} ds``.

    ``v_t = T - rate t``. The log argument is at least 1, so ``x_t`` never
    exceeds ``N``; depletion is located with :func:`fluid_end_of_life`.
    """
    tol = resolve_tolerances(tol)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0):
        raise ModelError("time must be non-negative")
    if params.q == 0:
        out = np.full_like(t_arr, params.battery.N)
        return float(out[0]) if np.ndim(t) == 0 else out
    N, T, lam = params.battery.N, params.battery.T, params.rate
    k = params.alpha * params.q
    out = np.empty_like(t_arr)
    for i, ti in enumerate(t_arr):
        v = T - lam * ti
        out[i] = _capacity_from_integral(N, k, math.log(k), fluid_exponent(params, v), T - v, tol)
    return float(out[0]) if np.ndim(t) == 0 else out


def fluid_rhs(params: MarkovParams):
    """``dx/dt = -q unit + unit (1 - q)(1 - e^{-beta v})(1 - e^{-alpha q (N - x)})`` with ``v = T - rate t``."""
    a, b, q, d = params.alpha, params.beta, params.q, params.unit_charge
    N, T, lam = params.battery.N, params.battery.T, params.rate

    def rhs(t, x):
        v = T - lam * t
        return -q * d + (1 - q) * d * (-math.expm1(-b * v)) * (-math.expm1(-a * q * (N - x)))

    return rhs


def _first_crossing(fun: Callable[[float], float], level: float, t_max: float, n_scan: int, tol: float):
    grid = np.linspace(0.0, t_max, n_scan + 1)
    vals = np.array([fun(g) for g in grid]) - level
    idx = np.nonzero(vals <= 0)[0]
    if len(idx) == 0:
        raise NoBracketError(f"level {level} not reached before t={t_max}")
    i = int(idx[0])
    if i == 0:
        return 0.0
    return brent_root(lambda s: fun(s) - level, grid[i - 1], grid[i], tol)


def fluid_end_of_life(params: MarkovParams, threshold: float = 0.0, tol: ToleranceConfig | None = None,
                      n_scan: int = 200) -> float:
    """First time the fluid-limit available capacity reaches ``threshold``."""
    tol = resolve_tolerances(tol)
    t_max = params.battery.T / params.rate
    return _first_crossing(lambda s: fluid_limit_closed(params, s, tol), threshold, t_max, n_scan, tol.root_tol)


# --------------------------------------------------------------------------
# on/off schedule


def _onoff_segments(pulse: PulseTrain, t: float):
    """``(start, end, on)`` pieces of the schedule covering ``[0, t]``."""
    tr = discharge_trace(pulse, t)
    return [(float(a), float(b), r > 0) for a, b, r in zip(tr.times[:-1], tr.times[1:], tr.rates)]


def onoff_closed(params: MarkovParams, pulse: PulseTrain, t):
    """Available capacity under an on/off load with pulse current ``params.unit_charge``.

    ``X_t = N - ln(1 + Z_t) / (alpha q)`` with
    ``Z_t = k int_0^t J_s exp(k (E(t) - E(s))) ds``, ``k = alpha q unit`` and
    ``E(t) = int_0^t (J - (1 - J)(1 - e^{-beta V}))``. ``V`` is constant
    during off-periods and ``J = 1`` during on-periods, so ``E`` is piecewise
    linear and each on-segment integrates in closed form.
    """
    if not math.isclose(pulse.current, params.unit_charge):
        raise ModelError("pulse current must equal the chain's unit charge")
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0):
        raise ModelError("time must be non-negative")
    N, T = params.battery.N, params.battery.T
    kq = params.alpha * params.q
    k = kq * params.unit_charge
    out = np.empty_like(t_arr)
    for i, ti in enumerate(t_arr):
        if ti == 0:
            out[i] = N
            continue
        E = 0.0
        V = T
        logs = []
        for a, b, on in _onoff_segments(pulse, ti):
            length = b - a
            if on:
                # int_a^b exp(-k (E_a + s - a)) ds = e^{-k E_a} (1 - e^{-k len}) / k
                logs.append(-k * E + math.log(-math.expm1(-k * length)) - math.log(k))
                E += length
                V -= pulse.current * length
            else:
                E -= -math.expm1(-params.beta * V) * length
        if not logs:
            out[i] = N
            continue
        log_z = math.log(k) + k * E + float(np.logaddexp.reduce(logs))
        out[i] = N - float(np.logaddexp(0.0, log_z)) / kq
    return float(out[0]) if np.ndim(t) == 0 else out


def onoff_rhs(params: MarkovParams, pulse: PulseTrain):
    """Segment-aware rhs for the state ``(V, X)`` under the on/off load."""
    a, b, q, d, N = params.alpha, params.beta, params.q, params.unit_charge, params.battery.N
    from .core import duty_indicator

    def rhs(t, y, t_mid):
        J = duty_indicator(pulse, t_mid)
        V, X = y[0], y[1]
        rec = (1 - J) * d * (-math.expm1(-a * q * (N - X))) * (-math.expm1(-b * V))
        return np.array([-d * J, -d * J + rec])

    return rhs


# --------------------------------------------------------------------------
# exponential-migration class


def _gbar(spec: NlodeSpec, w):
    """``int_0^w (1 - G)``."""
    return w - spec.G.integral(w)


def expode_solve(spec: NlodeSpec, t, tol: ToleranceConfig | None = None):
    """Constant-current closed form in time.

    ``x_t = N - ln(1 + rate a int_0^t exp(a (Gbar(v_s) - Gbar(v_t))) ds) / a``
    with ``v_s = T - rate s``.
    """
    if not spec.is_exponential:
        raise ModelError("closed form needs F(u) = 1 - exp(-a u); use generic_ode_solve")
    tol = resolve_tolerances(tol)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0):
        raise ModelError("time must be non-negative")
    N, T, lam, a = spec.battery.N, spec.battery.T, spec.rate, spec.a
    out = np.empty_like(t_arr)
    for i, ti in enumerate(t_arr):
        if ti == 0 or lam == 0:
            out[i] = N
            continue
        vt = T - lam * ti
        gt = float(_gbar(spec, vt))
        phi = lambda s: a * (float(_gbar(spec, T - lam * s)) - gt)  # noqa: E731
        out[i] = _capacity_from_integral(N, a, math.log(lam * a), phi, ti, tol)
    return float(out[0]) if np.ndim(t) == 0 else out


def expode_curve(spec: NlodeSpec, v, tol: ToleranceConfig | None = None):
    """Rate-free form ``x(v) = N - ln(1 + a int_0^{T - v} exp(a (Gbar(v + s) - Gbar(v))) ds) / a``."""
    if not spec.is_exponential:
        raise ModelError("closed form needs F(u) = 1 - exp(-a u)")
    tol = resolve_tolerances(tol)
    v_arr = np.atleast_1d(np.asarray(v, dtype=float))
    N, T, a = spec.battery.N, spec.battery.T, spec.a
    if np.any(v_arr > T):
        raise ModelError("remaining capacity cannot exceed T")
    out = np.empty_like(v_arr)
    for i, vi in enumerate(v_arr):
        upper = T - vi
        if upper <= 0:
            out[i] = N
            continue
        gv = float(_gbar(spec, vi))
        phi = lambda s: a * (float(_gbar(spec, vi + s)) - gv)  # noqa: E731
        out[i] = _capacity_from_integral(N, a, math.log(a), phi, upper, tol)
    return float(out[0]) if np.ndim(v) == 0 else out


def _as_trace(profile: DischargeProfile | DischargeTrace, horizon: float) -> DischargeTrace:
    if isinstance(profile, DischargeTrace):
        return profile
    return discharge_trace(profile, horizon)


def generic_ode_solve(spec: NlodeSpec, profile: DischargeProfile | DischargeTrace, t_grid,
                      step: float | None = None, tol: ToleranceConfig | None = None) -> CapacityTrace:
    """RK4 for ``(v, x)`` between load breakpoints; a jump ``A`` moves both down by ``A``."""
    tol = resolve_tolerances(tol)
    step = tol.rk4_step if step is None else step
    if not step > 1e-12:
        raise NumericalFailure(f"RK4 step {step} underflows")
    t_grid = np.asarray(t_grid, dtype=float)
    trace = _as_trace(profile, float(t_grid[-1]))
    N, T, lam = spec.battery.N, spec.battery.T, spec.rate
    F, G = spec.F, spec.G

    def rhs(t, y, t_mid):
        r = trace.rate_at(t_mid)
        rec = lam * float(F(max(N - y[1], 0.0))) * float(G(max(y[0], 0.0)))
        return np.array([-r, -r + rec])

    jumps = [(s, np.array([-A, -A])) for s, A in zip(trace.jump_times, trace.jump_sizes)]
    full = np.concatenate([[0.0], t_grid]) if t_grid[0] > 0 else t_grid
    traj = rk4_integrate(rhs, np.array([T, N]), full, step, jumps=jumps, breakpoints=trace.times, segment_aware=True)
    y = traj.y[len(full) - len(t_grid):]
    return CapacityTrace(t_grid, y[:, 0], y[:, 1], spec.battery)


def _log_expm1(y):
    """``log(expm1(y))`` for ``y >= 0``, finite for large ``y``."""
    y = np.asarray(y, dtype=float)
    big = y > 30
    with np.errstate(divide="ignore"):
        return np.where(big, y + np.log1p(-np.exp(-np.maximum(y, 30.0))), np.log(np.expm1(np.minimum(y, 30.0))))


def expode_poisson_paths(spec: NlodeSpec, train: PoissonTrain, t_grid, n_paths: int, first_path: int = 0):
    """Exact event-driven available capacity for ``n_paths`` Poisson loads.

    Between jumps ``v`` is constant and ``Y = e^{a (N - x)} - 1`` decays like
    ``exp(-a rate G(v) t)``; a jump ``A`` lowers both ``v`` and ``x`` by ``A``.
    ``w = N - x`` is propagated through ``log(expm1(a w))`` so deep
    discharges stay finite. Paths use streams ``first_path, first_path + 1, ...``.

    Returns ``(V, X)`` of shape ``(n_paths, len(t_grid))``; samples are
    right-continuous (a jump at a grid time is included).
    """
    if not spec.is_exponential:
        raise ModelError("exact Poisson solver needs F(u) = 1 - exp(-a u)")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or np.any(np.diff(t_grid) <= 0) or t_grid[0] < 0:
        raise ModelError("t_grid must be strictly increasing and non-negative")
    traces = [sample_poisson_trace(train, float(t_grid[-1]), first_path + p) for p in range(n_paths)]
    k_max = max((len(tr.jump_times) for tr in traces), default=0)
    jt = np.full((n_paths, k_max), np.inf)
    for p, tr in enumerate(traces):
        jt[p, : len(tr.jump_times)] = tr.jump_times
    a, lam, N, T, A = spec.a, spec.rate, spec.battery.N, spec.battery.T, train.jump_charge

    # number of jumps at or before each grid time, per path
    n_before = np.stack([np.searchsorted(jt[p], t_grid, side="right") for p in range(n_paths)])
    order = np.argsort(n_before, axis=None, kind="stable")
    counts = np.bincount(n_before.ravel(), minlength=k_max + 1)
    groups = np.split(order, np.cumsum(counts)[:-1])

    def advance(w, v, dt):
        decay = a * lam * np.asarray(spec.G(np.maximum(v, 0.0)), dtype=float) * dt
        return np.logaddexp(0.0, _log_expm1(a * w) - decay) / a

    w = np.zeros(n_paths)
    v = np.full(n_paths, float(T))
    t_last = np.zeros(n_paths)
    W = np.empty(n_paths * len(t_grid))
    Vout = np.empty(n_paths * len(t_grid))
    for k in range(k_max + 1):
        flat = groups[k]
        if len(flat):
            p, j = np.divmod(flat, len(t_grid))
            W[flat] = advance(w[p], v[p], t_grid[j] - t_last[p])
            Vout[flat] = v[p]
        if k == k_max:
            break
        s = jt[:, k]
        live = np.isfinite(s)
        if not np.any(live):
            break
        w[live] = advance(w[live], v[live], s[live] - t_last[live]) + A
        v[live] -= A
        t_last[live] = s[live]
    shape = (n_paths, len(t_grid))
    return Vout.reshape(shape), N - W.reshape(shape)


def expode_end_of_life(spec: NlodeSpec, threshold: float = 0.0, tol: ToleranceConfig | None = None,
                       n_scan: int = 200) -> float:
    tol = resolve_tolerances(tol)
    t_max = spec.battery.T / spec.rate
    return _first_crossing(lambda s: expode_solve(spec, s, tol), threshold, t_max, n_scan, tol.root_tol)


def constant_profile(spec: NlodeSpec) -> ConstantCurrent:
    return ConstantCurrent(spec.rate)


__all__ = [
    "RecoveryFunction", "NlodeSpec", "fluid_limit_closed", "fluid_rhs", "fluid_end_of_life", "onoff_closed",
    "onoff_rhs", "expode_solve", "expode_curve", "generic_ode_solve", "expode_poisson_paths", "expode_end_of_life",
    "recovery_from_config", "average_rate",
]

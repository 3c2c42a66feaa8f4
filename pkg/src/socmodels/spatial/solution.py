"""Charge profile ``u(t, x)`` of the spatial model and its boundary value.

``u(t, 0)`` is the available charge and ``v(t) = u(t, 0) + int_0^ell u(t, x) dx``
the remaining charge. All time integrals against the load are done mode by
mode in closed form; the only quadrature is over a non-constant initial
profile.

Several series here converge only like ``n^-2`` at zero lag. Their ``t = 0``
values are known in closed form (``load_kernel_h`` and ``migration_offset``),
so slowly converging sums are always written as a closed form minus a series
with exponential decay in ``n``.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from ..core import CapacityTrace, DischargeTrace
from ..errors import ModelError, NoBracketError
from ..io import write_csv
from ..numerics import ToleranceConfig, adaptive_simpson, brent_root, resolve_tolerances, sum_series
from .density import _check_positions, _density, mode_rates, phi, stationary_density
from .params import SpatialParams, load_kernel_h, migration_offset, omega

REALIZABILITY_GRID = 200
# Lags below this fraction of max(1, t) are treated as exactly zero.
_LAG_SNAP = 1e-13

InitialProfile = float | Callable[[float], float] | None


def _grid(x):
    x = np.asarray(x, dtype=float)
    return x, np.atleast_1d(x)


def _out(x, arr):
    return float(arr[0]) if np.ndim(x) == 0 else arr


def _mean_initial(params: SpatialParams, u0: InitialProfile, tol: ToleranceConfig) -> float:
    if u0 is None:
        return params.N
    if callable(u0):
        return adaptive_simpson(u0, 0.0, params.ell, tol.quad_tol, tol.quad_max_intervals).value / params.ell
    return float(u0)


def asymptotic_profile(x, params: SpatialParams, u0: InitialProfile = None, tol: ToleranceConfig | None = None):
    """Resting-battery limit ``mean(u0) omega e^{-2 delta z} + rho N (omega e^{-2 delta z} - 1) / delta``."""
    tol = resolve_tolerances(tol)
    _check_positions(params, x)
    x, xa = _grid(x)
    d = params.delta_eff
    z = xa / params.ell
    out = _mean_initial(params, u0, tol) * omega(d) * np.exp(-2 * d * z) + params.rho * params.N * migration_offset(d, z)
    return _out(x, out)


def is_physically_realized(params: SpatialParams, u0: InitialProfile = None, tol: ToleranceConfig | None = None) -> bool:
    """Strict positivity of the asymptotic profile on a 200-point grid."""
    grid = np.linspace(0.0, params.ell, REALIZABILITY_GRID)
    return bool(np.all(asymptotic_profile(grid, params, u0, tol) > 0))


# --------------------------------------------------------------------------
# series pieces


def _b_coeffs(n, d):
    npi2 = (n * math.pi) ** 2
    sign = np.where(n % 2 == 0, 1.0, -1.0)
    return (sign * math.exp(d) - 1.0) * npi2 / (d * d + npi2) ** 2


def _s_coeffs(n, d):
    npi2 = (n * math.pi) ** 2
    return npi2 / (d * d + npi2) ** 2


def _phi_bound(d):
    return 1.0 + abs(d) / math.pi


def _profile_series(t: float, z, params: SpatialParams, coeffs, amp: float, tol: ToleranceConfig):
    """``e^{-delta z} sum_n phi_n(z) coeffs(n) e^{-a_n t}`` for ``t > 0``."""
    d = params.delta_eff
    pref = np.exp(-d * z)
    bound = math.exp(abs(d)) * _phi_bound(d)
    peak = math.exp(abs(d)) + 1.0

    def term(n):
        return phi(n, z, d) * (coeffs(n, d) * np.exp(-mode_rates(n, params, d) * t))[:, None] * pref[None, :]

    def envelope(n):
        return bound * peak / (n * math.pi) ** 2 * np.exp(-mode_rates(n, params, d) * t)

    res = sum_series(term, envelope, tol.series_tol / max(amp, 1e-300), n_max=tol.series_n_max)
    return res.value


def _relative_mass(t: float, z, params: SpatialParams, amp: float, tol):
    """``(P(t, x) - 1) / delta`` where ``P = int_0^ell p(t, y, x) dy``."""
    d = params.delta_eff
    return migration_offset(d, z) + 4.0 * _profile_series(t, z, params, _b_coeffs, 4.0 * amp, tol)


def _load_q(tau: float, z, params: SpatialParams, amp: float, tol):
    """``int_0^tau``-complement of the transient density at ``y = 0``:
    ``(1 / (kappa ell)) e^{-delta z} sum_n phi_n(z) s_n e^{-a_n tau}``."""
    scale = 1.0 / (params.kappa * params.ell)
    if tau == 0.0:
        return scale * 0.5 * load_kernel_h(params.delta_eff, z)
    return scale * _profile_series(tau, z, params, _s_coeffs, scale * amp, tol)


def discharge_response(t: float, x, params: SpatialParams, trace: DischargeTrace, tol: ToleranceConfig | None = None):
    """``int_0^t p(t - s, 0, x) Lambda(ds)`` for a piecewise-constant-plus-jumps trace.

    Raises:
        ModelError: a jump lands exactly at ``t`` and ``x = 0`` (zero-lag kernel singularity).
    """
    tol = resolve_tolerances(tol)
    x, xa = _grid(x)
    trace._check_time(np.asarray(t))
    z = xa / params.ell
    pi_x = stationary_density(xa, params)
    snap = _LAG_SNAP * max(1.0, t)
    total = np.zeros_like(xa)
    q_cache: dict[float, np.ndarray] = {}

    def q(tau):
        tau = 0.0 if tau <= snap else tau
        if tau not in q_cache:
            q_cache[tau] = _load_q(tau, z, params, rate_scale, tol)
        return q_cache[tau]

    rate_scale = max([r for _, _, r in trace.segments] + [1.0])
    for a, b, r in trace.segments:
        if a >= t:
            continue
        b_eff = min(b, t)
        total = total + r * (pi_x * (b_eff - a) + q(t - b_eff) - q(t - a))
    for s, size in zip(trace.jump_times, trace.jump_sizes):
        if s > t:
            break
        lag = t - s
        if lag <= snap:
            if np.any(xa == 0.0):
                raise ModelError("kernel is singular at x = 0 for a jump exactly at the evaluation time")
            continue
        dens, _ = _density(lag, 0.0, xa, params, tol.series_tol / max(size, 1.0), tol.series_n_max)
        total = total + size * np.atleast_1d(dens)
    return _out(x, total)


def pde_solution(t: float, x, params: SpatialParams, u0: InitialProfile = None, trace: DischargeTrace | None = None,
                 tol: ToleranceConfig | None = None):
    """Charge profile ``u(t, x)`` from an initial profile and a discharge trace.

    ``u0`` may be ``None`` (full charge ``N``), a constant or a callable on
    ``[0, ell]``. A constant initial charge uses the closed-form mass series;
    a callable profile is integrated against the density by adaptive Simpson.

    Raises:
        ModelError: the configuration is not physically realized (asymptotic
            profile not strictly positive), or ``t < 0``.
    """
    tol = resolve_tolerances(tol)
    if t < 0:
        raise ModelError("time must be non-negative")
    _check_positions(params, x)
    x, xa = _grid(x)
    if not is_physically_realized(params, u0, tol):
        raise ModelError("configuration is not physically realized: asymptotic profile is not strictly positive")
    if t == 0.0:
        if callable(u0):
            return _out(x, np.array([float(u0(xi)) for xi in xa]))
        return _out(x, np.full_like(xa, params.N if u0 is None else float(u0)))

    d = params.delta_eff
    z = xa / params.ell
    N, rho = params.N, params.rho
    if callable(u0):
        init = np.empty_like(xa)
        for i, xi in enumerate(xa):
            def integrand(y, _xi=xi):
                val, _ = _density(t, y, _xi, params, tol.series_tol, tol.series_n_max)
                return float(u0(y)) * val
            init[i] = adaptive_simpson(integrand, 0.0, params.ell, tol.quad_tol, tol.quad_max_intervals).value
        out = init + rho * N * _relative_mass(t, z, params, abs(rho * N), tol)
    else:
        U = N if u0 is None else float(u0)
        # U*P + rho N (P - 1)/delta with P = omega e^{-2dz} + 4 d e^{-dz} sum phi_n b_n e^{-a_n t}
        amp = 4.0 * abs(d * U + rho * N)
        series = _profile_series(t, z, params, _b_coeffs, max(amp, 1e-300), tol) if amp > 0 else 0.0
        out = U * omega(d) * np.exp(-2 * d * z) + rho * N * migration_offset(d, z) + 4.0 * (d * U + rho * N) * series
    if trace is not None:
        out = out - np.atleast_1d(discharge_response(t, xa, params, trace, tol))
    return _out(x, out)


# --------------------------------------------------------------------------
# constant current, boundary value


def _boundary_sums(t_pos: np.ndarray, params: SpatialParams, tol: ToleranceConfig, amp: float):
    """``sum b_n e^{-a_n t}`` and ``sum s_n e^{-a_n t}`` for positive times (vectorized)."""
    d = params.delta_eff
    t_lo = float(np.min(t_pos))
    peak = math.exp(abs(d)) + 1.0

    def term(n):
        e = np.exp(-mode_rates(n, params, d)[:, None] * t_pos[None, :])
        return np.stack([_b_coeffs(n, d)[:, None] * e, _s_coeffs(n, d)[:, None] * e], axis=1)

    def envelope(n):
        return peak / (n * math.pi) ** 2 * np.exp(-mode_rates(n, params, d) * t_lo)

    res = sum_series(term, envelope, tol.series_tol / max(amp, 1.0), n_max=tol.series_n_max)
    return res.value[0], res.value[1]


def available_capacity(t, params: SpatialParams, rate: float, tol: ToleranceConfig | None = None):
    """``u(t, 0)`` under constant current from full charge.

    ``N (omega + rho E0) + 4 mu N sum b_n e^{-a_n t} - omega rate t / ell
    - rate / (kappa ell) (S - sum s_n e^{-a_n t})`` with
    ``E0 = (omega - 1) / delta`` and ``S = sum s_n``; at ``t = 0`` both sums take
    their closed-form values and the expression collapses to ``N``.
    """
    tol = resolve_tolerances(tol)
    if rate < 0:
        raise ModelError("discharge rate must be non-negative")
    t_arr = np.asarray(t, dtype=float)
    ta = np.atleast_1d(t_arr)
    if np.any(ta < 0):
        raise ModelError("time must be non-negative")
    d = params.delta_eff
    N, mu, rho, ell, kap = params.N, params.mu, params.rho, params.ell, params.kappa
    w = omega(d)
    e0 = float(migration_offset(d, 0.0))
    s_total = 0.5 * float(load_kernel_h(d, 0.0))
    t1 = np.full_like(ta, -0.25 * e0)
    t2 = np.full_like(ta, s_total)
    pos = ta > 0
    if np.any(pos):
        amp = max(4 * abs(mu) * N, rate / (kap * ell))
        t1[pos], t2[pos] = _boundary_sums(ta[pos], params, tol, amp)
    u = N * (w + rho * e0) + 4 * mu * N * t1 - w * rate * ta / ell - rate / (kap * ell) * (s_total - t2)
    return _out(t_arr, u)


def remaining_capacity(t, params: SpatialParams, rate: float, tol: ToleranceConfig | None = None):
    """``v(t) = u(t, 0) + N ell - rate t``."""
    u = available_capacity(t, params, rate, tol)
    return u + params.N * params.ell - rate * np.asarray(t, dtype=float)


def phase_plane_residual(v: float, u: float, params: SpatialParams, rate: float, tol=None) -> float:
    """``u - u(t, 0)`` at the time ``t = (u - v + N ell) / rate`` implied by ``(v, u)``."""
    t = (u - v + params.N * params.ell) / rate
    return float(u - available_capacity(max(t, 0.0), params, rate, tol))


def phase_plane_solve(v: float, params: SpatialParams, rate: float, tol: ToleranceConfig | None = None) -> float:
    """Available charge ``u`` on the constant-current curve through remaining charge ``v``.

    Raises:
        NoBracketError: no sign change on the admissible range, i.e. the
            battery has no physical state with this remaining charge.
    """
    tol = resolve_tolerances(tol)
    T, N, ell = params.battery.T, params.N, params.ell
    if not rate > 0:
        raise ModelError("phase-plane relation needs a positive discharge rate")
    if not 0 < v <= T:
        raise ModelError("remaining capacity must lie in (0, T]")
    lo = max(0.0, v - N * ell)
    if v == T:
        return N
    f = lambda u: phase_plane_residual(v, u, params, rate, tol)  # noqa: E731
    try:
        return brent_root(f, lo, N, tol.root_tol)
    except NoBracketError as exc:
        raise NoBracketError(f"no physical solution at v={v}: battery already dead ({exc})") from None


def end_of_life(params: SpatialParams, rate: float, tol: ToleranceConfig | None = None, t_max: float | None = None,
                n_scan: int = 256) -> tuple[float, float]:
    """First time ``u(t, 0) = 0`` and the remaining charge ``v`` there.

    The remaining charge at end of life may be negative for strongly
    migrating configurations; it is reported as computed.
    """
    tol = resolve_tolerances(tol)
    if not rate > 0:
        raise ModelError("end of life needs a positive discharge rate")
    t_max = 2.0 * params.battery.T / rate if t_max is None else t_max
    grid = np.linspace(0.0, t_max, n_scan + 1)
    vals = available_capacity(grid, params, rate, tol)
    below = np.nonzero(vals <= 0)[0]
    if len(below) == 0:
        raise NoBracketError(f"available capacity stays positive up to t={t_max}")
    i = int(below[0])
    t_eol = brent_root(lambda s: float(available_capacity(s, params, rate, tol)), grid[i - 1], grid[i], tol.root_tol)
    return t_eol, float(params.N * params.ell - rate * t_eol)


def phase_plane_curve(params: SpatialParams, rate: float, n_points: int = 200,
                      tol: ToleranceConfig | None = None, t_end: float | None = None) -> CapacityTrace:
    """``(v(t), u(t, 0))`` from the fresh battery to end of life (or ``t_end``)."""
    if t_end is None:
        t_end, _ = end_of_life(params, rate, tol)
    t = np.linspace(0.0, t_end, n_points)
    u = available_capacity(t, params, rate, tol)
    v = u + params.N * params.ell - rate * t
    return CapacityTrace(t, v, u, params.battery)


def profile_to_csv(path, t_grid, x_grid, values) -> Path:
    """Long-format export of ``values[i, j] = u(t_i, x_j)``."""
    t_grid, x_grid = np.asarray(t_grid, float), np.asarray(x_grid, float)
    values = np.asarray(values, float).reshape(len(t_grid), len(x_grid))
    tt, xx = np.meshgrid(t_grid, x_grid, indexing="ij")
    return write_csv(path, ["t_hours", "x", "u_Ah"], [tt.ravel(), xx.ravel(), values.ravel()])


def phase_plane_to_csv(path, curves: Mapping[str, CapacityTrace]) -> Path:
    v, u, ids = [], [], []
    for key, curve in curves.items():
        v.extend(curve.v)
        u.extend(curve.x)
        ids.extend([key] * len(curve.v))
    return write_csv(path, ["v_Ah", "u_Ah", "param_set_id"], [np.array(v), np.array(u), ids])

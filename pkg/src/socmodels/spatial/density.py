"""Transition density of reflected drifted Brownian motion on ``[0, ell]``.

The process has variance parameter ``4 kappa ell^2`` and drift
``-4 kappa ell delta``. With ``z = x / ell`` and ``w = y / ell`` its density is
the stationary law plus the spectral series

    (2/ell) e^{-delta (z - w)} sum_n phi_n(z) phi_n(w) e^{-a_n t} / (1 + (delta/(n pi))^2),

where ``phi_n(z) = cos(n pi z) - delta/(n pi) sin(n pi z)`` and
``a_n = 2 kappa (delta^2 + n^2 pi^2)``. Since
``|phi_n(z) phi_n(w)| <= 1 + (delta/(n pi))^2`` the series is dominated by
``(2/ell) e^{|delta|} e^{-a_n t}``, which drives truncation.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import ModelError, SlowConvergenceError
from ..numerics import ToleranceConfig, resolve_tolerances, sum_series
from .params import SpatialParams, omega


def t_min(params: SpatialParams) -> float:
    """Smallest time accepted by :func:`transition_density` (``2 kappa pi^2 t = 0.05``)."""
    return 0.05 / (2.0 * params.kappa * math.pi ** 2)


def mode_rates(n, params: SpatialParams, delta: float | None = None):
    d = params.delta_eff if delta is None else delta
    return 2.0 * params.kappa * (d * d + (np.asarray(n) * math.pi) ** 2)


def phi(n, z, delta: float):
    """Eigenfunctions ``cos(n pi z) - delta/(n pi) sin(n pi z)``, shape ``(len(n), len(z))``."""
    npi = np.asarray(n, dtype=float)[:, None] * math.pi
    arg = npi * np.asarray(z, dtype=float)[None, :]
    if delta == 0.0:
        return np.cos(arg)
    return np.cos(arg) - (delta / npi) * np.sin(arg)


def _check_positions(params: SpatialParams, *arrays):
    ell = params.ell
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if np.any(a < -1e-12 * ell) or np.any(a > ell * (1 + 1e-12)):
            raise ModelError(f"positions must lie in [0, {ell}]")


def stationary_density(x, params: SpatialParams):
    """``(omega / ell) e^{-2 delta x / ell}``; uniform ``1/ell`` when ``delta = 0``."""
    _check_positions(params, x)
    x = np.asarray(x, dtype=float)
    d = params.delta_eff
    out = omega(d) / params.ell * np.exp(-2.0 * d * x / params.ell)
    return float(out) if out.ndim == 0 else out


def density_series(t: float, y: float, x, params: SpatialParams, tol: float, n_max: int = 100_000):
    """Transient part of the density (no ``t_min`` check); returns a :class:`SeriesResult`."""
    d = params.delta_eff
    ell = params.ell
    z = np.atleast_1d(np.asarray(x, dtype=float)) / ell
    w = float(y) / ell
    pref = (2.0 / ell) * np.exp(-d * (z - w))
    env_c = (2.0 / ell) * math.exp(abs(d))

    def term(n):
        npi = n * math.pi
        weight = np.exp(-mode_rates(n, params, d) * t) / (1.0 + (d / npi) ** 2)
        return phi(n, z, d) * phi(n, np.array([w]), d) * weight[:, None] * pref[None, :]

    def envelope(n):
        return env_c * np.exp(-mode_rates(n, params, d) * t)

    return sum_series(term, envelope, tol, n_max=n_max)


def _density(t, y, x, params, tol, n_max):
    x_arr = np.asarray(x, dtype=float)
    res = density_series(t, y, x_arr, params, tol, n_max)
    out = stationary_density(np.atleast_1d(x_arr), params) + res.value
    return (float(out[0]) if x_arr.ndim == 0 else out), res


def transition_density(t: float, y: float, x, params: SpatialParams, tol: ToleranceConfig | None = None,
                       return_info: bool = False):
    """``p(t, y, x)`` per unit length; ``x`` may be an array.

    Raises:
        SlowConvergenceError: ``t <= t_min(params)``, where the spectral series
            needs too many terms to be trusted.
    """
    tol = resolve_tolerances(tol)
    if not t > t_min(params):
        raise SlowConvergenceError(
            f"t={t} is below t_min={t_min(params):.4g}: the spectral series converges too slowly "
            "in this small-time regime"
        )
    _check_positions(params, y, x)
    value, res = _density(t, y, x, params, tol.series_tol, tol.series_n_max)
    return (value, res) if return_info else value

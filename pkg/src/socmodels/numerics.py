"""Shared numerical kernels.

Everything here is model-agnostic: tail-bounded series summation, adaptive
Simpson quadrature, fixed-step RK4 with jump handling, the affine matrix
exponential propagator, a bracketing root finder and the seeded RNG contract.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import ModelError, NoBracketError, SlowConvergenceError

RNG_ALGORITHM = "numpy.random.Philox(4x64-10) keyed by SeedSequence(seed, spawn_key=stream)"


@dataclass(frozen=True)
class ToleranceConfig:
    """Accuracy knobs threaded through every model.

    Modules take ``tol: ToleranceConfig | None`` and fall back to
    :data:`DEFAULT_TOLERANCES`; use :meth:`replace` for per-call overrides.
    """

    series_tol: float = 1e-10
    quad_tol: float = 1e-10
    rk4_step: float = 1e-4
    root_tol: float = 1e-10
    series_n_max: int = 100_000
    quad_max_intervals: int = 1_000_000

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if not getattr(self, f.name) > 0:
                raise ModelError(f"tolerance {f.name} must be strictly positive")

    def replace(self, **changes) -> "ToleranceConfig":
        return dataclasses.replace(self, **changes)


DEFAULT_TOLERANCES = ToleranceConfig()


def resolve_tolerances(tol: ToleranceConfig | None) -> ToleranceConfig:
    return DEFAULT_TOLERANCES if tol is None else tol


# --------------------------------------------------------------------------
# series


class SeriesResult(NamedTuple):
    value: np.ndarray | float
    terms_used: int
    tail_bound: float


def sum_series(
    term: Callable[[np.ndarray], np.ndarray],
    envelope: Callable[[np.ndarray], np.ndarray],
    tol: float,
    n_start: int = 1,
    n_max: int = 100_000,
) -> SeriesResult:
    """Sum ``term(n)`` for ``n = n_start, n_start+1, ...`` with a tail guarantee.

    ``term`` receives an integer array of indices and returns an array whose
    leading axis runs over those indices; the remaining axes are summed
    independently, so a whole grid of evaluation points can be handled at
    once. ``envelope(n)`` must bound ``|term(n)|`` uniformly over those axes
    and have non-increasing successive ratios (Gaussian or geometric decay).

    Truncation happens at the first omitted index ``n_c`` where
    ``envelope(n_c) <= tol / 10`` and the geometric tail bound
    ``envelope(n_c) / (1 - r)`` with ``r = envelope(n_c + 1) / envelope(n_c)``
    is at most ``tol``. At least one term is always summed.

    Raises:
        SlowConvergenceError: no admissible cut-off up to ``n_max``.
    """
    cutoff = None
    tail = 0.0
    lo = n_start + 1
    block = 32
    while cutoff is None:
        if lo > n_max + 1:
            raise SlowConvergenceError(
                f"series did not reach tail bound {tol:g} within {n_max} terms"
            )
        hi = min(lo + block, n_max + 2)
        ns = np.arange(lo, hi + 1)
        env = np.abs(np.asarray(envelope(ns), dtype=float))
        for i in range(len(ns) - 1):
            e0 = env[i]
            if e0 > tol / 10:
                continue
            if e0 == 0.0:
                cutoff, tail = int(ns[i]), 0.0
                break
            r = env[i + 1] / e0
            if r < 1.0 and e0 / (1.0 - r) <= tol:
                cutoff, tail = int(ns[i]), e0 / (1.0 - r)
                break
        lo = hi
        block *= 2

    total = None
    chunk = 4096
    for a in range(n_start, cutoff, chunk):
        ns = np.arange(a, min(a + chunk, cutoff))
        part = np.sum(term(ns), axis=0)
        total = part if total is None else total + part
    return SeriesResult(total, cutoff - n_start, tail)


# --------------------------------------------------------------------------
# quadrature


class QuadResult(NamedTuple):
    value: float
    error: float


def adaptive_simpson(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-10,
    max_intervals: int = 1_000_000,
    initial_panels: int = 16,
) -> QuadResult:
    """Adaptive Simpson quadrature with Richardson-corrected panels.

    The interval is pre-split into ``initial_panels`` equal panels so narrow
    features are not missed by the first Simpson estimate; each panel is then
    bisected until ``|S_left + S_right - S_whole| <= 15 * tol_local`` where the
    local tolerance is proportional to the panel width.

    Returns the integral and the summed error estimate.
    """
    if a == b:
        return QuadResult(0.0, 0.0)
    if b < a:
        res = adaptive_simpson(f, b, a, tol, max_intervals, initial_panels)
        return QuadResult(-res.value, res.error)

    width = b - a
    edges = np.linspace(a, b, initial_panels + 1)
    stack = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        lo, hi = float(lo), float(hi)
        mid = 0.5 * (lo + hi)
        flo, fmid, fhi = f(lo), f(mid), f(hi)
        whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)
        stack.append((lo, hi, flo, fmid, fhi, whole))

    total = 0.0
    err = 0.0
    n_intervals = len(stack)
    while stack:
        lo, hi, flo, fmid, fhi, whole = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi)
        delta = left + right - whole
        local_tol = tol * (hi - lo) / width
        if abs(delta) <= 15.0 * local_tol or (hi - lo) <= 1e-14 * width:
            total += left + right + delta / 15.0
            err += abs(delta) / 15.0
            continue
        n_intervals += 1
        if n_intervals > max_intervals:
            raise SlowConvergenceError(
                f"adaptive Simpson exceeded {max_intervals} intervals on [{a}, {b}]"
            )
        stack.append((lo, mid, flo, flm, fmid, left))
        stack.append((mid, hi, fmid, frm, fhi, right))
    return QuadResult(total, err)


# --------------------------------------------------------------------------
# ODE integration


@dataclass
class Trajectory:
    """States ``y[i]`` at times ``t[i]``; ``error`` is a Richardson estimate when computed."""

    t: np.ndarray
    y: np.ndarray
    error: np.ndarray | None = None


def rk4_integrate(
    rhs: Callable[[float, np.ndarray | float], np.ndarray | float],
    x0,
    t_grid: Sequence[float],
    step: float,
    jumps: Iterable[tuple[float, object]] = (),
    breakpoints: Iterable[float] = (),
    segment_aware: bool = False,
) -> Trajectory:
    """Classical RK4 between breakpoints, sampled on ``t_grid``.

    ``jumps`` are ``(time, increment)`` pairs added to the state at ``time``;
    states are right-continuous, so a grid point at a jump time reports the
    post-jump value. ``breakpoints`` are extra times (e.g. pulse edges) where
    ``rhs`` may be discontinuous; the stepper never straddles one. Each
    inter-event gap is covered by equal substeps no longer than ``step``.

    With ``segment_aware=True`` the call is ``rhs(t, x, t_mid)`` where
    ``t_mid`` is the midpoint of the current inter-event gap, so piecewise
    inputs can be looked up unambiguously even at the gap end points.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) == 0 or np.any(np.diff(t_grid) < 0):
        raise ModelError("t_grid must be a non-empty non-decreasing 1-D sequence")
    t0, t_end = float(t_grid[0]), float(t_grid[-1])

    jump_list = sorted(((float(s), inc) for s, inc in jumps), key=lambda p: p[0])
    jump_list = [(s, inc) for s, inc in jump_list if t0 <= s <= t_end]
    events = {t0, t_end}
    events.update(float(s) for s in t_grid)
    events.update(s for s, _ in jump_list)
    events.update(float(s) for s in breakpoints if t0 < s < t_end)
    events = sorted(events)

    scalar = np.ndim(x0) == 0
    x = float(x0) if scalar else np.array(x0, dtype=float)
    out = np.empty((len(t_grid),) if scalar else (len(t_grid),) + np.shape(x), dtype=float)
    gi = 0
    ji = 0

    def record(t, x):
        nonlocal gi
        while gi < len(t_grid) and t_grid[gi] == t:
            out[gi] = x
            gi += 1

    t = t0
    while ji < len(jump_list) and jump_list[ji][0] == t:
        x = x + jump_list[ji][1]
        ji += 1
    record(t, x)
    for t_next in events[1:]:
        span = t_next - t
        n_sub = max(1, math.ceil(span / step - 1e-9))
        h = span / n_sub
        f = rhs
        if segment_aware:
            t_mid = 0.5 * (t + t_next)
            f = lambda tt, xx, _m=t_mid: rhs(tt, xx, _m)  # noqa: E731
        for k in range(n_sub):
            tk = t + k * h
            k1 = f(tk, x)
            k2 = f(tk + 0.5 * h, x + 0.5 * h * k1)
            k3 = f(tk + 0.5 * h, x + 0.5 * h * k2)
            k4 = f(tk + h, x + h * k3)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t_next
        while ji < len(jump_list) and jump_list[ji][0] == t:
            x = x + jump_list[ji][1]
            ji += 1
        record(t, x)
    return Trajectory(t_grid, out)


def rk4_richardson(rhs, x0, t_grid, step, **kwargs) -> Trajectory:
    """Run RK4 at ``step`` and ``step / 2``; return the finer run with an error estimate.

    For a fourth-order method the error of the finer run is approximately
    ``|y_h - y_{h/2}| / 15``.
    """
    coarse = rk4_integrate(rhs, x0, t_grid, step, **kwargs)
    fine = rk4_integrate(rhs, x0, t_grid, step / 2.0, **kwargs)
    fine.error = np.abs(coarse.y - fine.y) / 15.0
    return fine


def affine_propagator(A: np.ndarray, b: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact flow map of ``x' = A x + b`` over ``dt``: ``x(dt) = Phi @ x0 + phi``.

    Computed as the exponential of the augmented matrix ``[[A, b], [0, 0]]``
    (scaling and squaring with Pade order 13), which needs no inverse of
    ``A`` and so handles singular system matrices directly.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ModelError("system matrix must be square")
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = b
    E = scipy.linalg.expm(M * dt)
    return E[:n, :n], E[:n, n]


def expm_affine(A, b, dt: float, x0) -> np.ndarray:
    Phi, phi = affine_propagator(A, b, dt)
    return Phi @ np.asarray(x0, dtype=float) + phi


# --------------------------------------------------------------------------
# roots


def brent_root(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12) -> float:
    """Root of ``f`` on ``[lo, hi]`` by Brent's method.

    Raises:
        NoBracketError: ``f(lo)`` and ``f(hi)`` have the same strict sign.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return float(lo)
    if fhi == 0.0:
        return float(hi)
    if np.sign(flo) == np.sign(fhi):
        raise NoBracketError(f"no sign change on [{lo}, {hi}]: f={flo:g}, {fhi:g}")
    return float(scipy.optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))


# --------------------------------------------------------------------------
# randomness


def rng_stream(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``(seed, stream...)``.

    Streams are addressed by value, so any task can rebuild its generator
    without coordination; see :data:`RNG_ALGORITHM`.
    """
    if seed < 0:
        raise ModelError("seed must be a non-negative integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))

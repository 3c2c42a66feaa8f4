"""Slotted bivariate Markov chain for (remaining, available) charge.

In each slot the cell is discharged by one unit with probability ``q``;
otherwise one unit is recovered with probability
``g(v, x) = (1 - e^{-beta v}) (1 - e^{-alpha q (N - x)})``. At scaling level
``m`` there are ``m`` slots per hour and the unit is ``unit_charge / m``.

Simulation keeps integer counts of discharges and of net deficit so states
are exact multiples of the unit. Every path owns two Philox substreams, one
for the slot (discharge) draw and one for the recovery draw, so a path is
reproducible on its own and the coupled down-move of ``V`` and ``X`` comes
from a single shared draw.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import BatterySpec, CapacityTrace
from .errors import ModelError
from .io import write_csv
from .numerics import rk4_integrate, rng_stream

SLOT_STREAM = 0
RECOVERY_STREAM = 1
NOISE_STREAMS = (2, 3)
CORRELATION_STREAM = 4


@dataclass(frozen=True)
class MarkovParams:
    alpha: float
    beta: float
    q: float
    unit_charge: float
    battery: BatterySpec
    level: int = 1

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ModelError("channel parameters alpha and beta must be positive")
        if not 0 <= self.q < 1:
            raise ModelError("slot discharge probability q must lie in [0, 1)")
        if not self.unit_charge > 0:
            raise ModelError("unit charge must be positive")
        if int(self.level) != self.level or self.level < 1:
            raise ModelError("scaling level m must be a positive integer")
        for name, cap in (("N", self.battery.N), ("T", self.battery.T)):
            ratio = cap / self.unit_charge
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                raise ModelError(f"{name}={cap} is not an integer multiple of the unit charge {self.unit_charge}")

    @property
    def rate(self) -> float:
        """Average discharge current ``unit_charge * q`` in Ah per hour."""
        return self.unit_charge * self.q

    @property
    def sigma2(self) -> float:
        return self.q * (1 - self.q) * self.unit_charge ** 2

    @property
    def step_charge(self) -> float:
        return self.unit_charge / self.level

    def at_level(self, m: int) -> "MarkovParams":
        return replace(self, level=int(m))


# --------------------------------------------------------------------------
# transition law


def recovery_probability(v, x, params: MarkovParams):
    N = params.battery.N
    return -np.expm1(-params.beta * np.asarray(v, float)) * -np.expm1(-params.alpha * params.q * (N - np.asarray(x, float)))


def _check_state(v, x, params):
    if np.any(np.asarray(v) < 0) or np.any(np.asarray(v) > params.battery.T):
        raise ModelError("remaining capacity v must lie in [0, T]")
    if np.any(np.asarray(x) < 0) or np.any(np.asarray(x) > params.battery.N):
        raise ModelError("available capacity x must lie in [0, N]")


def transition_probabilities(v, x, params: MarkovParams):
    """``(p_down, p_up, p_stay)`` for one unscaled slot from ``(v, x)``."""
    _check_state(v, x, params)
    g = recovery_probability(v, x, params)
    p_down = np.full_like(g, params.q) if np.ndim(g) else params.q
    p_up = (1 - params.q) * g
    p_stay = 1.0 - p_down - p_up
    if np.ndim(g) == 0:
        return float(p_down), float(p_up), float(p_stay)
    return p_down, p_up, p_stay


def recovery_drift(v, x, params: MarkovParams):
    """``f(v, x) = unit (1 - q) g(v, x)``: expected recovered charge per slot."""
    return params.unit_charge * (1 - params.q) * recovery_probability(v, x, params)


def drift(v, x, params: MarkovParams):
    """``E[X_{n+1} - X_n | (v, x)] = -q unit + f(v, x)``."""
    return -params.q * params.unit_charge + recovery_drift(v, x, params)


def recovery_drift_gradient(v, x, params: MarkovParams):
    """Analytic ``(df/dv, df/dx)``."""
    a, b, q, N, d = params.alpha, params.beta, params.q, params.battery.N, params.unit_charge
    ev = np.exp(-b * np.asarray(v, float))
    ex = np.exp(-a * q * (N - np.asarray(x, float)))
    fv = d * (1 - q) * b * ev * (1 - ex)
    fx = -d * (1 - q) * (1 - ev) * a * q * ex
    return fv, fx


# --------------------------------------------------------------------------
# simulation


class PathStreams:
    """Per-path generators for one substream; draws come in ``(n_paths, k)`` blocks."""

    def __init__(self, seed: int, path_ids: Sequence[int], substream: int):
        self.gens = [rng_stream(seed, int(p), substream) for p in path_ids]

    def uniform(self, k: int) -> np.ndarray:
        return np.stack([g.random(k) for g in self.gens])

    def normal(self, k: int) -> np.ndarray:
        return np.stack([g.standard_normal(k) for g in self.gens])


@dataclass
class ChainPath:
    """One realization: ``V[n], X[n]`` after ``n`` slots."""

    slot: np.ndarray
    V: np.ndarray
    X: np.ndarray
    level: int = 1
    seed: int | None = None

    @property
    def t(self) -> np.ndarray:
        return self.slot / self.level

    def to_csv(self, path) -> Path:
        return write_csv(path, ["slot", "V_Ah", "X_Ah"], [self.slot, self.V, self.X])


def _slot_step(v, x, u_slot, u_rec, params: MarkovParams):
    """Shared transition kernel: ``(down, up)`` indicators from the two uniforms."""
    g = recovery_probability(v, x, params)
    down = u_slot < params.q
    up = ~down & (u_rec < g)
    return down, up


def _run_chain(params: MarkovParams, n_slots: int, seed: int, path_ids, record_slots, block: int = 1024,
               start: tuple[float, float] | None = None):
    """Vectorized chain over paths; returns ``(V, X)`` arrays of shape ``(n_paths, len(record_slots))``."""
    record_slots = np.asarray(record_slots, dtype=np.int64)
    if np.any(np.diff(record_slots) < 0) or (len(record_slots) and (record_slots[0] < 0 or record_slots[-1] > n_slots)):
        raise ModelError("record slots must be sorted and within [0, n_slots]")
    h = params.step_charge
    T, N = params.battery.T, params.battery.N
    v0, x0 = (T, N) if start is None else start
    n_paths = len(path_ids)
    slot_rng = PathStreams(seed, path_ids, SLOT_STREAM)
    rec_rng = PathStreams(seed, path_ids, RECOVERY_STREAM)
    dv = np.zeros(n_paths, dtype=np.int64)
    dx = np.zeros(n_paths, dtype=np.int64)
    V = np.empty((n_paths, len(record_slots)))
    X = np.empty((n_paths, len(record_slots)))
    ri = 0
    while ri < len(record_slots) and record_slots[ri] == 0:
        V[:, ri], X[:, ri] = v0, x0
        ri += 1
    n = 0
    while n < n_slots and ri < len(record_slots):
        k = min(block, n_slots - n)
        u1 = slot_rng.uniform(k)
        u2 = rec_rng.uniform(k)
        for j in range(k):
            v = v0 - dv * h
            x = x0 - dx * h
            down, up = _slot_step(v, x, u1[:, j], u2[:, j], params)
            dv += down
            dx += down.astype(np.int64) - up
            n += 1
            while ri < len(record_slots) and record_slots[ri] == n:
                V[:, ri] = v0 - dv * h
                X[:, ri] = x0 - dx * h
                ri += 1
    return V, X


def simulate_chain(params: MarkovParams, n_slots: int, seed: int, path_id: int = 0) -> ChainPath:
    """Single seeded path of the chain at ``params.level`` started from ``(T, N)``."""
    if n_slots < 1:
        raise ModelError("n_slots must be at least 1")
    slots = np.arange(n_slots + 1)
    V, X = _run_chain(params, n_slots, seed, [path_id], slots)
    return ChainPath(slots, V[0], X[0], params.level, seed)


def scaled_chain(params: MarkovParams, horizon: float, seed: int, path_id: int = 0) -> CapacityTrace:
    """Path of ``X^{(m)}(t) = X^m_{[m t]}`` sampled at every slot up to ``horizon``."""
    m = params.level
    n_slots = int(np.floor(m * horizon + 1e-9))
    path = simulate_chain(params, max(n_slots, 1), seed, path_id)
    keep = path.slot <= n_slots
    return CapacityTrace(path.slot[keep] / m, path.V[keep], path.X[keep], params.battery)


@dataclass
class Ensemble:
    t: np.ndarray
    V: np.ndarray
    X: np.ndarray
    seed: int

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    def mean_x(self):
        return self.X.mean(axis=0)

    def var_x(self):
        return self.X.var(axis=0, ddof=1)

    def se_x(self):
        return np.sqrt(self.var_x() / self.n_paths)

    def to_csv(self, path) -> Path:
        return write_csv(
            path, ["t_hours", "mean_X", "var_X", "n_paths", "seed"],
            [self.t, self.mean_x(), self.var_x(), self.n_paths, self.seed],
        )


def chain_ensemble(params: MarkovParams, t_grid, n_paths: int, seed: int, first_path: int = 0) -> Ensemble:
    """``n_paths`` independent scaled paths recorded at ``t_grid`` (hours)."""
    t_grid = np.asarray(t_grid, dtype=float)
    slots = np.floor(params.level * t_grid + 1e-9).astype(np.int64)
    V, X = _run_chain(params, int(slots[-1]), seed, range(first_path, first_path + n_paths), slots)
    return Ensemble(t_grid, V, X, seed)


def one_step_frequencies(params: MarkovParams, v: float, x: float, n_steps: int, seed: int):
    """Empirical one-slot statistics from the fixed state ``(v, x)``.

    Draws ``n_steps`` independent slot/recovery uniform pairs from the two
    substreams of path 0 and applies the chain's transition kernel to each.
    Returns frequencies of down/up/stay and the unscaled increments ``dV``,
    ``dX`` of every step.
    """
    _check_state(v, x, params)
    u1 = rng_stream(seed, 0, SLOT_STREAM).random(n_steps)
    u2 = rng_stream(seed, 0, RECOVERY_STREAM).random(n_steps)
    down, up = _slot_step(v, x, u1, u2, params)
    d = params.unit_charge
    dV = -d * down
    dX = d * (up.astype(float) - down)
    return {
        "down": down.mean(), "up": up.mean(), "stay": (~down & ~up).mean(),
        "dV": dV, "dX": dX,
    }


# --------------------------------------------------------------------------
# fluid limit and fluctuations


def fluid_trajectory(params: MarkovParams, t_grid, step: float = 1e-3):
    """RK4 solution of ``dx = -rate dt + f(T - rate t, x) dt`` from ``x(0) = N``.

    Returns ``(v, x)`` on ``t_grid``.
    """
    T, lam = params.battery.T, params.rate
    t_grid = np.asarray(t_grid, dtype=float)
    rhs = lambda t, x: -lam + recovery_drift(T - lam * t, x, params)  # noqa: E731
    full = np.concatenate([[0.0], t_grid]) if t_grid[0] > 0 else t_grid
    traj = rk4_integrate(rhs, params.battery.N, full, step)
    return T - lam * t_grid, traj.y[len(full) - len(t_grid):]


@dataclass
class FluctuationCoeffs:
    """Coefficients of ``dX = (a W1 + b X) dt + c dW2`` along the fluid path."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    sigma2: float


def fluctuation_coeffs(params: MarkovParams, v, x) -> FluctuationCoeffs:
    """``a = f_v sigma``, ``b = f_x``, ``c = sqrt(rate unit + unit f)``."""
    fv, fx = recovery_drift_gradient(v, x, params)
    sigma = np.sqrt(params.sigma2)
    c = np.sqrt(params.rate * params.unit_charge + params.unit_charge * recovery_drift(v, x, params))
    return FluctuationCoeffs(fv * sigma, fx, c, params.sigma2)


def exact_noise(params: MarkovParams, v, x):
    """Per-hour covariance of the chain increments: ``(sd of X noise, corr(V, X))``.

    From the one-slot law: ``Var dX = d^2 [q + (1-q) g - (-q + (1-q) g)^2]``
    and ``Cov(dV, dX) = d^2 q (1 - q) (1 + g)``.
    """
    d, q = params.unit_charge, params.q
    g = recovery_probability(v, x, params)
    var_x = d * d * (q + (1 - q) * g - (-q + (1 - q) * g) ** 2)
    cov = d * d * q * (1 - q) * (1 + g)
    c = np.sqrt(var_x)
    return c, cov / (np.sqrt(params.sigma2) * c)


def estimate_noise_correlation(params: MarkovParams, t_grid, v, x, n_samples: int = 20_000, seed: int = 0):
    """Empirical correlation of one-slot ``(dV, dX)`` at points of the fluid path.

    ``W1`` is the normalized fluctuation of ``V`` and ``W2`` the noise of
    ``X``; their correlation is measured from chain increments rather than
    assumed.
    """
    out = np.empty(len(t_grid))
    for i, (vi, xi) in enumerate(zip(v, x)):
        xi = min(float(xi), params.battery.N)
        st = one_step_frequencies(params, float(vi), max(xi, 0.0), n_samples, seed * 7919 + CORRELATION_STREAM * 1000 + i)
        dV, dX = st["dV"], st["dX"]
        if np.std(dV) == 0 or np.std(dX) == 0:
            out[i] = 0.0
        else:
            out[i] = float(np.corrcoef(dV, dX)[0, 1])
    return out


def ou_fluctuation(params: MarkovParams, t_fluid, v_fluid, x_fluid, horizon: float, n_paths: int, step: float,
                   seed: int, record_times, noise: str = "formula", correlation=None, block: int = 1000):
    """Euler-Maruyama ensemble variance of the fluctuation process.

    ``noise="formula"`` uses ``c = sqrt(rate unit + unit f)`` and a W1/W2
    correlation that is either given (float or array over ``t_fluid``) or
    estimated from chain increments. ``noise="exact"`` uses the one-slot
    covariance of the chain for both.

    Returns ``(record_times, variance)``.
    """
    if step > 1e-3:
        raise ModelError("Euler-Maruyama step must be at most 1e-3 hours")
    if noise not in ("formula", "exact"):
        raise ModelError("noise must be 'formula' or 'exact'")
    record_times = np.asarray(record_times, dtype=float)
    if np.any(record_times > horizon + 1e-12) or np.any(record_times < 0):
        raise ModelError("record times must lie in [0, horizon]")
    t_fluid = np.asarray(t_fluid, float)
    n_steps = int(round(horizon / step))
    h = horizon / n_steps
    ts = np.arange(n_steps) * h
    v = np.interp(ts, t_fluid, v_fluid)
    x = np.interp(ts, t_fluid, x_fluid)
    co = fluctuation_coeffs(params, v, x)
    if noise == "exact":
        c, rho = exact_noise(params, v, x)
    else:
        c = co.c
        if correlation is None:
            probe_t = np.linspace(0.0, horizon, 9)
            probe = estimate_noise_correlation(
                params, probe_t, np.interp(probe_t, t_fluid, v_fluid), np.interp(probe_t, t_fluid, x_fluid), seed=seed
            )
            rho = np.interp(ts, probe_t, probe)
        elif np.ndim(correlation) == 0:
            rho = np.full(n_steps, float(correlation))
        else:
            rho = np.interp(ts, t_fluid, correlation)
    rho = np.clip(rho, -1.0, 1.0)
    rec_steps = np.rint(record_times / h).astype(np.int64)
    var = np.zeros(len(record_times))
    ids = range(n_paths)
    s1 = PathStreams(seed, ids, NOISE_STREAMS[0])
    s2 = PathStreams(seed, ids, NOISE_STREAMS[1])
    W1 = np.zeros(n_paths)
    Xf = np.zeros(n_paths)
    sqh = np.sqrt(h)
    order = np.argsort(rec_steps, kind="stable")
    ri = 0
    while ri < len(order) and rec_steps[order[ri]] == 0:
        var[order[ri]] = 0.0
        ri += 1
    i = 0
    while i < n_steps and ri < len(order):
        k = min(block, n_steps - i)
        z1 = s1.normal(k)
        z2 = s2.normal(k)
        for j in range(k):
            dW1 = sqh * z1[:, j]
            dW2 = rho[i] * dW1 + np.sqrt(1 - rho[i] ** 2) * sqh * z2[:, j]
            Xf = Xf + (co.a[i] * W1 + co.b[i] * Xf) * h + c[i] * dW2
            W1 = W1 + dW1
            i += 1
            while ri < len(order) and rec_steps[order[ri]] == i:
                var[order[ri]] = Xf.var(ddof=1)
                ri += 1
    return record_times, var

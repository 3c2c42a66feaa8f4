"""Acceptance criteria as callable checks.

Each criterion returns a :class:`CriterionResult` with the measured value,
the tolerance it is compared against, the seeds it used and its runtime.
``FAST`` holds the deterministic criteria; ``FULL`` adds the Monte Carlo ones.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .core import BatterySpec, ConstantCurrent, PoissonTrain, PulseTrain, discharge_trace, sample_poisson_trace
from .kibam import KibamParams, kibam_general_u, kibam_constant_u, kibam_poisson_path
from .nlode import (
    NlodeSpec,
    RecoveryFunction,
    expode_poisson_paths,
    expode_solve,
    fluid_limit_closed,
    fluid_rhs,
    onoff_closed,
    onoff_rhs,
)
from .numerics import rk4_integrate, rng_stream
from .spatial import (
    SpatialParams,
    available_capacity,
    compartment_available_capacity,
    end_of_life,
    phase_plane_curve,
    phase_plane_solve,
    stationary_density,
    transition_density,
)
from .stochastic import MarkovParams, chain_ensemble, fluid_trajectory, ou_fluctuation

REF_BATTERY = BatterySpec(nominal_capacity=100.0, theoretical_capacity=1000.0)
PHASE_RATE = 1000.0
PHASE_KAPPA = 0.5
PHASE_UPPER = ((0.0, 0.0), (0.0, 0.1), (0.0, 0.2), (0.0, 0.5))
PHASE_LOWER = ((-0.1, 0.1), (0.1, 0.0), (0.25, -0.1), (0.4, -0.2))
CHAIN = dict(alpha=0.05, beta=0.01, q=0.3, unit_charge=20.0)


@dataclass
class CriterionResult:
    cid: int
    name: str
    passed: bool
    measured: float
    tolerance: float
    comparison: str
    runtime_s: float
    runtime_limit_s: float | None = None
    seeds: list = field(default_factory=list)
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        limit = f" (limit {self.runtime_limit_s:g} s)" if self.runtime_limit_s else ""
        extra = f"; {self.detail['checks']}" if "checks" in self.detail else ""
        return (f"[{status}] {self.cid:2d} {self.name}: measured {self.measured:.6g} {self.comparison} "
                f"{self.tolerance:.6g}{extra}; runtime {self.runtime_s:.2f} s{limit}")

    def to_dict(self) -> dict:
        return asdict(self)


def _result(cid, name, measured, tolerance, comparison, t0, limit=None, seeds=(), **detail) -> CriterionResult:
    runtime = time.perf_counter() - t0
    ok = measured < tolerance if comparison == "<" else measured >= tolerance
    if limit is not None and runtime >= limit:
        ok = False
        detail["runtime_exceeded"] = True
    return CriterionResult(cid, name, bool(ok), float(measured), float(tolerance), comparison, runtime, limit,
                           list(seeds), detail)


def _spatial(delta, kappa=PHASE_KAPPA):
    return SpatialParams(kappa=kappa, mu=delta, rho=0.0, battery=REF_BATTERY)


# --------------------------------------------------------------------------
# density


def density_normalization() -> CriterionResult:
    t0 = time.perf_counter()
    worst = 0.0
    for d in (-0.5, 0.0, 0.5, 2.0):
        p = _spatial(d)
        for t in (0.1, 0.5, 5.0):
            for y in (0.0, p.ell / 2):
                mass, _ = quad(lambda x: transition_density(t, y, x, p), 0.0, p.ell, epsabs=1e-11, epsrel=1e-11,
                               limit=200)
                worst = max(worst, abs(mass - 1.0))
    return _result(1, "density normalization", worst, 1e-6, "<", t0, limit=5.0)


def chapman_kolmogorov(seed: int = 11) -> CriterionResult:
    t0 = time.perf_counter()
    rng = rng_stream(seed, 0)
    worst = 0.0
    triples = []
    for _ in range(6):
        delta = float(rng.uniform(-1.0, 1.0))
        p = _spatial(delta)
        y, x = (float(v) for v in rng.uniform(0.0, p.ell, 2))
        triples.append((y, x, delta))
        # p(t, z, x) via detailed balance: pi(z) p(t, z, x) = pi(x) p(t, x, z)
        zs = np.linspace(0.0, p.ell, 2001)
        left = transition_density(0.5, y, zs, p)
        right = transition_density(0.5, x, zs, p) * stationary_density(x, p) / stationary_density(zs, p)
        w = np.full(len(zs), 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        integral = float(np.sum(w * left * right) * (zs[1] - zs[0]) / 3.0)
        direct = transition_density(1.0, y, x, p)
        worst = max(worst, abs(integral - direct) / abs(direct))
    return _result(2, "Chapman-Kolmogorov", worst, 1e-5, "<", t0, limit=30.0, seeds=[seed], triples=triples)


def stationary_limit() -> CriterionResult:
    t0 = time.perf_counter()
    worst = 0.0
    for d in (0.0, 0.7):
        p = _spatial(d)
        xs = np.linspace(0.0, p.ell, 201)
        for y in (0.0, p.ell / 2, p.ell):
            worst = max(worst, float(np.max(np.abs(transition_density(50.0, y, xs, p) - stationary_density(xs, p)))))
    return _result(3, "stationary limit", worst, 1e-8, "<", t0, limit=2.0)


def delta_continuity() -> CriterionResult:
    t0 = time.perf_counter()
    p0, p1 = _spatial(0.0), _spatial(1e-4)
    xs = np.linspace(0.0, p0.ell, 201)
    worst = 0.0
    for y in np.linspace(0.0, p0.ell, 11):
        worst = max(worst, float(np.max(np.abs(transition_density(1.0, y, xs, p1) - transition_density(1.0, y, xs, p0)))))
    return _result(4, "delta continuity", worst, 1e-3, "<", t0)


# --------------------------------------------------------------------------
# kibam


def _kibam_rk4_batch(params: list[KibamParams], trace, t_grid, step):
    """RK4 over all parameter sets at once; state is ``[u_1..u_n, y_1..y_n]``."""
    n = len(params)
    c = np.array([q.battery.c for q in params])
    kc = np.array([q.kc for q in params])
    p = np.array([q.p for q in params])
    N = np.array([q.battery.N for q in params])
    T = np.array([q.battery.T for q in params])

    def rhs(t, s, t_mid):
        u, y = s[:n], s[n:]
        flow = kc * (c * y - (1 - c) * u + p * (N - u))
        return np.concatenate([-trace.rate_at(t_mid) + flow, -flow])

    jumps = []
    for sj, a in zip(trace.jump_times, trace.jump_sizes):
        inc = np.zeros(2 * n)
        inc[:n] = -a
        jumps.append((float(sj), inc))
    traj = rk4_integrate(rhs, np.concatenate([N, T - N]), t_grid, step, jumps=jumps, breakpoints=trace.times,
                         segment_aware=True)
    return traj.y[:, :n]


def kibam_vs_rk4(seed: int = 5) -> CriterionResult:
    t0 = time.perf_counter()
    rng = rng_stream(seed, 0)
    params = []
    for _ in range(20):
        N = float(rng.uniform(50, 150))
        T = N * float(rng.uniform(2.0, 12.0))
        params.append(KibamParams.from_kc(float(rng.uniform(0.2, 5.0)), float(rng.uniform(-0.5, 1.5)),
                                          BatterySpec(N, T)))
    horizon = 2.0
    t_grid = np.linspace(0.0, horizon, 41)
    profiles = {
        "constant": discharge_trace(ConstantCurrent(15.0), horizon),
        "pulse": discharge_trace(PulseTrain(40.0, 0.07, 0.13), horizon),
        "poisson": sample_poisson_trace(PoissonTrain(0.5, 30.0, seed=seed), horizon, 0),
    }
    worst = {}
    for name, trace in profiles.items():
        oracle = _kibam_rk4_batch(params, trace, t_grid, 1e-4)
        closed = np.stack([kibam_general_u(q, trace, t_grid).u for q in params], axis=1)
        worst[name] = float(np.max(np.abs(closed - oracle)))
    return _result(5, "KiBaM closed form vs RK4", max(worst.values()), 1e-6, "<", t0, limit=30.0, seeds=[seed],
                   per_profile=worst)


# --------------------------------------------------------------------------
# spatial


def compartment_convergence() -> CriterionResult:
    t0 = time.perf_counter()
    p = SpatialParams(PHASE_KAPPA, 0.1, 0.1, REF_BATTERY)
    tg = np.linspace(0.0, 0.4, 81)
    ref = available_capacity(tg, p, PHASE_RATE)
    errs = {m: float(np.max(np.abs(compartment_available_capacity(p, m, PHASE_RATE, tg) - ref))) for m in (10, 20, 40)}
    return _result(6, "compartment to PDE convergence", errs[10] / errs[40], 2.0, ">=", t0, limit=60.0,
                   errors=errs)


def phase_plane_reproduction() -> CriterionResult:
    t0 = time.perf_counter()
    T, N = REF_BATTERY.T, REF_BATTERY.N
    endpoint = 0.0
    v_eol = {}
    for mu, rho in PHASE_UPPER + PHASE_LOWER:
        p = SpatialParams(PHASE_KAPPA, mu, rho, REF_BATTERY)
        curve = phase_plane_curve(p, PHASE_RATE, n_points=50)
        endpoint = max(endpoint, abs(curve.v[0] - T), abs(curve.x[0] - N),
                       abs(phase_plane_solve(T, p, PHASE_RATE) - N))
        v_eol[(mu, rho)] = end_of_life(p, PHASE_RATE)[1]
    upper = [v_eol[k] for k in PHASE_UPPER]
    lower = np.array([v_eol[k] for k in PHASE_LOWER])
    decreasing = all(a > b for a, b in zip(upper, upper[1:]))
    spread = float((lower.max() - lower.min()) / abs(lower.mean()))
    res = _result(7, "phase-plane curve set (endpoint distance)", endpoint, 1e-4, "<", t0, limit=120.0,
                  upper_v_eol=upper, lower_v_eol=lower.tolist(), upper_decreasing=decreasing,
                  lower_relative_spread=spread,
                  checks=f"upper v_eol decreasing={decreasing}, lower spread {spread:.2%} < 5%")
    res.passed = res.passed and decreasing and spread < 0.05
    return res


# --------------------------------------------------------------------------
# Markov chain


def _chain_params(level=1) -> MarkovParams:
    return MarkovParams(battery=REF_BATTERY, level=level, **CHAIN)


def fluid_limit_check(seed: int = 1) -> CriterionResult:
    t0 = time.perf_counter()
    params = _chain_params(200)
    grid = np.linspace(1.0, 20.0, 20)
    ens = chain_ensemble(params, grid, 2000, seed)
    x = fluid_limit_closed(params, grid)
    z = np.abs(ens.mean_x() - x) / ens.se_x()
    return _result(8, "fluid limit (max |mean - x| / SE)", float(z.max()), 3.0, "<", t0, limit=60.0, seeds=[seed])


def closed_forms_vs_rk4() -> CriterionResult:
    t0 = time.perf_counter()
    params = _chain_params()
    tg = np.linspace(0.0, 5.0, 11)
    rhs = fluid_rhs(params)
    ode = rk4_integrate(lambda t, x: np.array([rhs(t, x[0])]), np.array([REF_BATTERY.N]), tg, 1e-4).y[:, 0]
    err_fluid = float(np.max(np.abs(fluid_limit_closed(params, tg) - ode)))

    on = MarkovParams(0.05, 0.01, 0.5, 20.0, REF_BATTERY)
    pulse = PulseTrain(20.0, 0.05, 0.05)
    tg2 = np.linspace(0.0, 1.0, 21)
    traj = rk4_integrate(onoff_rhs(on, pulse), np.array([REF_BATTERY.T, REF_BATTERY.N]), tg2, 1e-4,
                         breakpoints=discharge_trace(pulse, 1.0).times, segment_aware=True)
    err_onoff = float(np.max(np.abs(onoff_closed(on, pulse, tg2) - traj.y[:, 1])))
    return _result(9, "fluid and on-off closed forms vs RK4", max(err_fluid, err_onoff), 1e-7, "<", t0,
                   fluid=err_fluid, onoff=err_onoff)


# --------------------------------------------------------------------------
# nonlinear recovery class


def load_invariance() -> CriterionResult:
    t0 = time.perf_counter()
    spec = NlodeSpec(RecoveryFunction.exponential(0.01), a=0.05, rate=50.0, battery=REF_BATTERY)
    fast = spec.with_rate(10 * spec.rate)
    v = np.linspace(0.0, REF_BATTERY.T, 50)
    x1 = expode_solve(spec, (REF_BATTERY.T - v) / spec.rate)
    x10 = expode_solve(fast, (REF_BATTERY.T - v) / fast.rate)
    return _result(10, "load invariance of (v, x(v))", float(np.max(np.abs(x1 - x10))), 1e-9, "<", t0)


def fluctuation_scaling(seed: int = 3) -> CriterionResult:
    t0 = time.perf_counter()
    m, horizon = 400, 80.0
    params = _chain_params(m)
    t_f = np.linspace(0.0, horizon, 8001)
    v_f, x_f = fluid_trajectory(params, t_f, step=1e-3)
    times = np.array([20.0, 40.0, 60.0])
    ens = chain_ensemble(params, times, 5000, seed)
    chain_var = m * ens.var_x()
    _, ou_var = ou_fluctuation(params, t_f, v_f, x_f, horizon, 5000, 1e-3, seed, times)
    rel = np.abs(ou_var / chain_var - 1.0)
    return _result(11, "fluctuation scaling (max relative variance gap)", float(rel.max()), 0.15, "<", t0,
                   limit=180.0, seeds=[seed], chain_var=chain_var.tolist(), ou_var=ou_var.tolist())


def poisson_kibam_mean(seed: int = 7) -> CriterionResult:
    t0 = time.perf_counter()
    params = KibamParams.from_kc(1.0, 0.3, REF_BATTERY)
    train = PoissonTrain(jump_charge=0.5, event_rate=20.0, seed=seed)
    grid = np.linspace(0.5, 5.0, 10)
    U = np.stack([kibam_poisson_path(params, sample_poisson_trace(train, 5.0, i), grid).u for i in range(5000)])
    exact = kibam_constant_u(params, train.jump_charge * train.event_rate, grid).u
    z = np.abs(U.mean(0) - exact) / (U.std(0, ddof=1) / math.sqrt(len(U)))
    return _result(12, "Poisson KiBaM mean identity (max |z|)", float(z.max()), 3.0, "<", t0, seeds=[seed])


ENSEMBLE = dict(a=0.01, beta=0.01, rate=50.0, jump=0.1, event_rate=500.0, n_paths=5000, seed=1)


def poisson_ensemble_reproduction(seed: int = ENSEMBLE["seed"]) -> CriterionResult:
    t0 = time.perf_counter()
    spec = NlodeSpec(RecoveryFunction.exponential(ENSEMBLE["beta"]), a=ENSEMBLE["a"], rate=ENSEMBLE["rate"], battery=REF_BATTERY)
    train = PoissonTrain(ENSEMBLE["jump"], ENSEMBLE["event_rate"], seed=seed)
    assert math.isclose(train.jump_charge * train.event_rate, spec.rate)
    grid = np.linspace(0.3, 3.3, 10)
    _, X = expode_poisson_paths(spec, train, grid, ENSEMBLE["n_paths"])
    det = expode_solve(spec, grid)
    bracket = bool(np.all(X.min(0) < det) and np.all(X.max(0) > det))
    z = np.abs(X.mean(0) - det) / (X.std(0, ddof=1) / math.sqrt(X.shape[0]))
    res = _result(13, "Poisson-load ensemble (max |z| of ensemble mean)", float(z.max()), 3.0, "<", t0, seeds=[seed],
                  bracketed=bracket, checks=f"paths bracket deterministic curve={bracket}")
    res.passed = res.passed and bracket
    return res


FAST: dict[int, Callable[[], CriterionResult]] = {
    1: density_normalization,
    2: chapman_kolmogorov,
    3: stationary_limit,
    4: delta_continuity,
    5: kibam_vs_rk4,
    6: compartment_convergence,
    7: phase_plane_reproduction,
    9: closed_forms_vs_rk4,
    10: load_invariance,
}
MONTE_CARLO: dict[int, Callable[[], CriterionResult]] = {
    8: fluid_limit_check,
    11: fluctuation_scaling,
    12: poisson_kibam_mean,
    13: poisson_ensemble_reproduction,
}
FULL = dict(sorted({**FAST, **MONTE_CARLO}.items()))
SUITES = {"fast": FAST, "full": FULL}


def run_suite(name: str, echo: Callable[[str], None] | None = None) -> list[CriterionResult]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    results = []
    for fn in SUITES[name].values():
        res = fn()
        results.append(res)
        if echo is not None:
            echo(res.line())
    return results

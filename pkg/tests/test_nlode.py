import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import rk4_scalar
from socmodels.core import BatterySpec, ConstantCurrent, PoissonTrain, PulseTrain, discharge_trace, duty_indicator, sample_poisson_trace
from socmodels.errors import ModelError
from socmodels.nlode import (
    NlodeSpec,
    RecoveryFunction,
    expode_curve,
    expode_end_of_life,
    expode_poisson_paths,
    expode_solve,
    fluid_end_of_life,
    fluid_limit_closed,
    generic_ode_solve,
    onoff_closed,
    recovery_from_config,
)
from socmodels.numerics import rk4_integrate
from socmodels.stochastic import MarkovParams

BAT = BatterySpec(100.0, 1000.0)


def chain(alpha=0.05, beta=0.01, q=0.3, unit=20.0):
    return MarkovParams(alpha, beta, q, unit, BAT)


def fluid_ode(p):
    a, b, q, d, N, T = p.alpha, p.beta, p.q, p.unit_charge, p.battery.N, p.battery.T

    def f(t, x):
        v = T - d * q * t
        return -q * d + (1 - q) * d * (1 - math.exp(-b * v)) * (1 - math.exp(-a * q * (N - x)))

    return f


def expode_spec(a=0.05, g=0.01, rate=50.0):
    return NlodeSpec(RecoveryFunction.exponential(g), a, rate, BAT)


def expode_ode(spec):
    a, lam, N, T = spec.a, spec.rate, spec.battery.N, spec.battery.T
    g = spec.G.params[0]

    def f(t, x):
        v = T - lam * t
        return -lam + lam * (1 - math.exp(-a * (N - x))) * (1 - math.exp(-g * v))

    return f


def test_fluid_start_and_weak_recovery():
    assert fluid_limit_closed(chain(), 0.0) == 100.0
    p = chain(alpha=1e-8)
    assert abs(fluid_limit_closed(p, 1.0) - (100.0 - 6.0)) < 1e-6


def test_fluid_vs_rk4():
    p = chain()
    ref = rk4_scalar(fluid_ode(p), 100.0, 2.0, 1e-5)
    assert abs(fluid_limit_closed(p, 2.0) - ref) < 1e-8


def test_fluid_end_of_life_residual():
    p = chain()
    t0 = fluid_end_of_life(p)
    assert 0 < t0 < 1000.0 / 6.0
    assert abs(fluid_limit_closed(p, t0)) < 1e-8
    assert fluid_limit_closed(p, 0.99 * t0) > 0


def test_fluid_never_exceeds_nominal():
    x = fluid_limit_closed(chain(alpha=2.0, q=0.05), np.linspace(0.0, 100.0, 21))
    assert np.all(x <= 100.0)


def test_onoff_always_on():
    # first on-period: J = 1 throughout, X = N - unit t
    pulse = PulseTrain(20.0, 1.0, 1e-6)
    p = chain(q=0.5)
    for t in (0.1, 0.5, 0.9):
        assert onoff_closed(p, pulse, t) == pytest.approx(100.0 - 20.0 * t, abs=1e-10)


def test_onoff_almost_never_on():
    pulse = PulseTrain(20.0, 1e-12, 0.5)
    assert abs(onoff_closed(chain(q=0.5), pulse, 3.0) - 100.0) < 1e-9


def test_onoff_requires_matching_current():
    with pytest.raises(ModelError):
        onoff_closed(chain(), PulseTrain(10.0, 0.1, 0.1), 1.0)


def onoff_rk4(p, pulse, t_grid, step):
    a, b, q, d, N, T = p.alpha, p.beta, p.q, p.unit_charge, p.battery.N, p.battery.T

    def f(t, y, tm):
        J = duty_indicator(pulse, tm)
        rec = (1 - J) * d * (1 - math.exp(-a * q * (N - y[1]))) * (1 - math.exp(-b * y[0]))
        return np.array([-d * J, -d * J + rec])

    tr = discharge_trace(pulse, float(t_grid[-1]))
    return rk4_integrate(f, np.array([T, N]), t_grid, step, breakpoints=tr.times, segment_aware=True).y


def test_onoff_vs_rk4():
    p = chain(q=0.5)
    pulse = PulseTrain(20.0, 0.05, 0.05)
    grid = np.array([0.0, 0.37, 1.0])
    ref = onoff_rk4(p, pulse, grid, 1e-5)
    np.testing.assert_allclose(onoff_closed(p, pulse, grid), ref[:, 1], atol=1e-8)


def test_expode_vs_rk4():
    spec = expode_spec()
    ref = rk4_scalar(expode_ode(spec), 100.0, 4.0, 1e-4)
    assert abs(expode_solve(spec, 4.0) - ref) < 1e-8


def test_expode_no_load():
    spec = expode_spec(rate=1e-9)
    assert abs(expode_solve(spec, 5.0) - 100.0) < 1e-6


def test_load_invariance():
    spec = expode_spec(rate=50.0)
    fast = spec.with_rate(500.0)
    v = np.linspace(1000.0, 850.0, 50)
    x_slow = expode_solve(spec, (1000.0 - v) / 50.0)
    x_fast = expode_solve(fast, (1000.0 - v) / 500.0)
    assert np.max(np.abs(x_slow - x_fast)) < 1e-9
    assert np.max(np.abs(expode_curve(spec, v) - x_slow)) < 1e-9


def test_expode_end_of_life():
    spec = expode_spec(a=0.01, g=0.01, rate=50.0)
    t0 = expode_end_of_life(spec)
    assert abs(expode_solve(spec, t0)) < 1e-8
    assert t0 > 100.0 / 50.0


def test_zero_gain_is_pure_discharge():
    zero = RecoveryFunction("zero", lambda u: np.zeros_like(u), lambda w: np.zeros_like(w))
    spec = NlodeSpec(RecoveryFunction.exponential(0.01), 0.05, 10.0, BAT, F=zero)
    grid = np.linspace(0.0, 2.0, 11)
    for profile in (ConstantCurrent(10.0), PulseTrain(20.0, 0.1, 0.1), PoissonTrain(0.5, 20.0, seed=1)):
        tr = discharge_trace(profile, 2.0)
        out = generic_ode_solve(spec, tr, grid, step=1e-3)
        np.testing.assert_allclose(out.x, 100.0 - tr.cumulative(grid), atol=1e-10)
        np.testing.assert_allclose(out.v, 1000.0 - tr.cumulative(grid), atol=1e-10)


def test_generic_matches_closed_form():
    spec = expode_spec()
    grid = np.linspace(0.0, 4.0, 9)
    out = generic_ode_solve(spec, ConstantCurrent(50.0), grid, step=1e-3)
    np.testing.assert_allclose(out.x, expode_solve(spec, grid), atol=1e-8)


def test_poisson_exact_vs_rk4():
    spec = expode_spec(a=0.01, g=0.01, rate=50.0)
    train = PoissonTrain(0.1, 500.0, seed=1)
    grid = np.linspace(0.05, 1.0, 8)
    V, X = expode_poisson_paths(spec, train, grid, 3)
    for p in range(3):
        tr = sample_poisson_trace(train, 1.0, p)
        ref = generic_ode_solve(spec, tr, grid, step=1e-3)
        np.testing.assert_allclose(X[p], ref.x, atol=1e-9)
        np.testing.assert_allclose(V[p], ref.v, atol=1e-9)


def test_recovery_functions():
    f = RecoveryFunction.exponential(0.5)
    w = np.linspace(0.0, 10.0, 5)
    np.testing.assert_allclose(f(w), 1 - np.exp(-0.5 * w))
    np.testing.assert_allclose(f.integral(w), w - (1 - np.exp(-0.5 * w)) / 0.5)
    lin = RecoveryFunction.linear_capped(0.2)
    np.testing.assert_allclose(lin([0.0, 2.0, 10.0]), [0.0, 0.4, 1.0])
    tab = RecoveryFunction.table([0.0, 1.0, 5.0], [0.0, 0.5, 0.9])
    assert tab(0.0) == pytest.approx(0.0) and tab(1.0) == pytest.approx(0.5)
    assert tab(50.0) == pytest.approx(0.9)
    assert float(tab.integral(5.0)) == pytest.approx(
        float(np.trapezoid(tab(np.linspace(0, 5, 20001)), np.linspace(0, 5, 20001))), abs=1e-6)
    with pytest.raises(ModelError):
        RecoveryFunction.table([0.0, 1.0, 2.0], [0.0, 0.8, 0.3])
    with pytest.raises(ModelError):
        RecoveryFunction.table([0.0, 1.0], [0.0, 1.5])
    assert recovery_from_config({"kind": "linear-capped", "slope": 0.2}).name == "linear-capped"
    with pytest.raises(ModelError):
        recovery_from_config({"kind": "cubic"})


def test_closed_form_needs_exponential_f():
    spec = NlodeSpec(RecoveryFunction.exponential(0.01), 0.05, 10.0, BAT, F=RecoveryFunction.linear_capped(0.1))
    with pytest.raises(ModelError):
        expode_solve(spec, 1.0)


@settings(max_examples=15)
@given(st.sampled_from(["exp", "linear-capped", "table"]), st.sampled_from(["pulse", "poisson"]),
       st.integers(0, 500))
def test_dominance_and_upper_bound(gkind, load, seed):
    G = {"exp": RecoveryFunction.exponential(0.01), "linear-capped": RecoveryFunction.linear_capped(0.002),
         "table": RecoveryFunction.table([0.0, 300.0, 1000.0], [0.0, 0.6, 1.0])}[gkind]
    spec = NlodeSpec(G, 0.05, 10.0, BAT, F=RecoveryFunction.linear_capped(0.05) if gkind == "table" else None)
    profile = PulseTrain(30.0, 0.1, 0.2) if load == "pulse" else PoissonTrain(0.5, 20.0, seed=seed)
    tr = discharge_trace(profile, 3.0)
    grid = np.linspace(0.0, 3.0, 31)
    out = generic_ode_solve(spec, tr, grid, step=1e-3)
    assert np.all(out.x >= 100.0 - tr.cumulative(grid) - 1e-9)
    assert np.all(out.x <= 100.0 + 1e-9)


@settings(max_examples=10)
@given(st.floats(0.005, 0.2), st.floats(0.002, 0.05), st.floats(0.1, 0.8), st.floats(0.5, 5.0))
def test_fluid_closed_form_vs_rk4_random(alpha, beta, q, t):
    p = chain(alpha=alpha, beta=beta, q=q)
    ref = rk4_scalar(fluid_ode(p), 100.0, t, 2e-4)
    assert abs(fluid_limit_closed(p, t) - ref) < 1e-7


@settings(max_examples=10)
@given(st.floats(0.005, 0.2), st.floats(0.002, 0.05), st.floats(5.0, 60.0), st.floats(0.2, 1.5))
def test_expode_closed_form_vs_rk4_random(a, g, rate, t):
    spec = expode_spec(a=a, g=g, rate=rate)
    ref = rk4_scalar(expode_ode(spec), 100.0, t, 2e-4)
    assert abs(expode_solve(spec, t) - ref) < 1e-7

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from socmodels.core import BatterySpec, ConstantCurrent, DischargeTrace, PoissonTrain, PulseTrain, discharge_trace
from socmodels.errors import ModelError
from socmodels.numerics import rk4_integrate
from socmodels.spatial import (
    CompartmentSystem,
    SpatialParams,
    available_capacity,
    compartment_available_capacity,
    simulate_compartments,
)

BAT = BatterySpec(100.0, 1000.0)


def idle(horizon):
    return DischargeTrace(np.array([0.0, horizon]), np.zeros(1))


def test_scaled_weights():
    sys = CompartmentSystem.from_spatial(SpatialParams(0.5, 0.2, 0.1, BAT), 10)
    assert sys.c == pytest.approx(0.51)
    assert sys.p == pytest.approx(0.01)
    assert sys.k == pytest.approx(50.0)
    assert sys.mu_c == pytest.approx(0.02)


def test_rejects_large_mu():
    with pytest.raises(ModelError):
        CompartmentSystem.from_spatial(SpatialParams(0.5, 3.0, 0.0, BAT), 3)
    with pytest.raises(ModelError):
        CompartmentSystem(m=1, c=0.5, p=0.0, k=1.0, N=1.0)


def test_symmetric_uniform_state_is_stationary():
    sys = CompartmentSystem(m=5, c=0.5, p=0.0, k=2.0, N=100.0)
    u = simulate_compartments(sys, idle(10.0), np.linspace(0.5, 10.0, 20))
    np.testing.assert_allclose(u, 100.0, atol=1e-10)


@settings(max_examples=25)
@given(st.integers(2, 12), st.floats(0.05, 0.95), st.floats(-0.8, 0.8), st.floats(0.1, 20.0),
       st.lists(st.floats(0.0, 200.0), min_size=12, max_size=12))
def test_conservation_without_load(m, c, p, k, init):
    sys = CompartmentSystem(m=m, c=c, p=p, k=k, N=100.0, u0=np.array(init[:m]))
    u = simulate_compartments(sys, idle(50.0), [1.0, 10.0, 50.0])
    assert np.max(np.abs(u.sum(axis=1) - sum(init[:m]))) < 1e-9 * max(1.0, sum(init[:m]))


def test_load_drains_first_compartment():
    sys = CompartmentSystem(m=4, c=0.4, p=0.2, k=1.0, N=100.0)
    u = simulate_compartments(sys, ConstantCurrent(3.0), [2.0])
    assert u.sum() == pytest.approx(400.0 - 6.0, abs=1e-9)


def _rk4(sys, trace, grid, step):
    A, b = sys.system_matrix()
    f = lambda t, u, tm: A @ u + b - trace.rate_at(tm) * np.eye(sys.m)[0] * sys.load_scale  # noqa: E731
    jumps = [(s, -a * sys.load_scale * np.eye(sys.m)[0]) for s, a in zip(trace.jump_times, trace.jump_sizes)]
    return rk4_integrate(f, sys.u0, grid, step, jumps=jumps, breakpoints=trace.times, segment_aware=True).y


def test_three_compartments_vs_rk4():
    prm = SpatialParams(0.5, 0.2, 0.1, BAT)
    sys = CompartmentSystem.from_spatial(prm, 3)
    grid = [0.0, 0.25, 0.5]
    exact = simulate_compartments(sys, ConstantCurrent(1.0), grid)
    ref = _rk4(sys, discharge_trace(ConstantCurrent(1.0), 0.5), grid, 1e-6)
    assert np.max(np.abs(exact - ref)) < 1e-8


def test_pulse_and_poisson_vs_rk4():
    sys = CompartmentSystem(m=4, c=0.45, p=0.1, k=3.0, N=50.0)
    grid = np.linspace(0.0, 1.0, 6)
    for profile in (PulseTrain(5.0, 0.13, 0.07), PoissonTrain(0.4, 12.0, seed=2)):
        tr = discharge_trace(profile, 1.0)
        exact = simulate_compartments(sys, tr, grid)
        ref = _rk4(sys, tr, grid, 1e-4)
        assert np.max(np.abs(exact - ref)) < 1e-8


def test_converges_to_series():
    prm = SpatialParams(0.5, 0.1, 0.1, BAT)
    t = np.linspace(0.0, 0.4, 21)
    series = available_capacity(t, prm, 1000.0)
    errs = [np.max(np.abs(compartment_available_capacity(prm, m, 1000.0, t) - series)) for m in (10, 20, 40)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[0] / errs[2] >= 2.0

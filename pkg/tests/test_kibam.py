import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from socmodels.core import BatterySpec, ConstantCurrent, DischargeTrace, PoissonTrain, PulseTrain, discharge_trace, sample_poisson_trace
from socmodels.errors import ModelError
from socmodels.io import read_csv
from socmodels.kibam import (
    KibamParams,
    kibam_autonomous_curve,
    kibam_constant_u,
    kibam_general_u,
    kibam_poisson_path,
)
from socmodels.numerics import rk4_integrate

BAT = BatterySpec(100.0, 1000.0)


def two_well_rk4(params, trace, t_grid, step=1e-4):
    """Independent RK4 of du = -I + kc (c y - (1-c) u + p (N - u)), dy = -kc (...)."""
    c, kc, p, N = params.battery.c, params.kc, params.p, params.battery.N

    def rhs(t, s, t_mid):
        flow = kc * (c * s[1] - (1 - c) * s[0] + p * (N - s[0]))
        return np.array([-trace.rate_at(t_mid) + flow, -flow])

    jumps = [(s, np.array([-a, 0.0])) for s, a in zip(trace.jump_times, trace.jump_sizes)]
    y0 = np.array([N, params.battery.T - N])
    return rk4_integrate(rhs, y0, t_grid, step, jumps=jumps, breakpoints=trace.times, segment_aware=True).y


def test_kc_roundtrip():
    prm = KibamParams.from_kc(1.0, 0.0, BAT)
    assert prm.kc == pytest.approx(1.0)
    assert prm.k == pytest.approx(0.09)


@pytest.mark.parametrize("p", [-1.0, -2.0])
def test_rejects_nondecaying_kernel(p):
    with pytest.raises(ModelError):
        KibamParams(0.1, p, BAT)


def test_rejects_c_equal_one():
    with pytest.raises(ModelError):
        KibamParams(0.1, 0.0, BatterySpec(10.0, 10.0))


def test_no_discharge():
    prm = KibamParams.from_kc(1.0, 0.0, BAT)
    s = kibam_constant_u(prm, 0.0, 3.7)
    assert s.u == 100.0 and s.v == 1000.0


def test_constant_current_value_and_rk4():
    prm = KibamParams.from_kc(1.0, 0.0, BAT)
    s = kibam_constant_u(prm, 10.0, 1.0)
    # 100 - 1 - 9 (1 - e^-1)
    assert s.u == pytest.approx(100 - 1 - 9 * (1 - math.exp(-1)), abs=1e-12)
    assert s.u == pytest.approx(93.31091, abs=1e-5)
    ref = two_well_rk4(prm, discharge_trace(ConstantCurrent(10.0), 1.0), [0.0, 1.0])
    assert abs(ref[-1, 0] - s.u) < 1e-6


def test_large_p_recovers_everything():
    # c / (1 + p) -> 0 and the kernel decays immediately: u -> N
    prm = KibamParams.from_kc(1.0, 1e6, BAT)
    s = kibam_constant_u(prm, 10.0, 1.0)
    assert abs(s.u - 100.0) < 1e-4


def test_large_p_ode_limit():
    # the ODE itself pulls u to N at rate kc p; check against RK4 at a moderate p
    prm = KibamParams.from_kc(1.0, 200.0, BAT)
    s = kibam_constant_u(prm, 10.0, 1.0)
    ref = two_well_rk4(prm, discharge_trace(ConstantCurrent(10.0), 1.0), [0.0, 1.0], step=1e-5)
    assert abs(ref[-1, 0] - s.u) < 1e-6
    assert abs(s.u - 100.0) < 0.1


def _jump_trace(t1, size, horizon):
    return DischargeTrace(np.array([0.0, horizon]), np.zeros(1), np.array([t1]), np.array([size]), kind="poisson")


def test_single_jump_drop_and_permanent_loss():
    prm = KibamParams.from_kc(1.0, 0.0, BAT)
    tr = _jump_trace(0.3, 5.0, 100.0)
    before = kibam_general_u(prm, tr, 0.3 - 1e-12).u
    at = kibam_general_u(prm, tr, 0.3).u
    assert before - at == pytest.approx(5.0, abs=1e-9)
    late = kibam_general_u(prm, tr, 100.0).u
    assert 100.0 - late == pytest.approx(0.1 * 5.0, abs=1e-12)


def test_jump_permanent_loss_uses_effective_weight():
    prm = KibamParams.from_kc(1.0, 0.5, BAT)
    tr = _jump_trace(0.3, 5.0, 100.0)
    late = kibam_general_u(prm, tr, 100.0).u
    assert 100.0 - late == pytest.approx(prm.c_eff * 5.0, abs=1e-12)
    ref = two_well_rk4(prm, tr, [0.0, 20.0], step=1e-3)
    assert abs(ref[-1, 0] - kibam_general_u(prm, tr, 20.0).u) < 1e-8


def test_pulse_vs_rk4():
    prm = KibamParams.from_kc(1.0, 0.0, BAT)
    tr = discharge_trace(PulseTrain(20.0, 0.1, 0.1), 1.0)
    grid = np.linspace(0.0, 1.0, 11)
    ref = two_well_rk4(prm, tr, grid)
    assert np.max(np.abs(ref[:, 0] - kibam_general_u(prm, tr, grid).u)) < 1e-6


def test_general_rejects_short_trace():
    prm = KibamParams.from_kc(1.0, 0.0, BAT)
    with pytest.raises(ModelError):
        kibam_general_u(prm, discharge_trace(ConstantCurrent(1.0), 1.0), 2.0)


def test_poisson_path_basics():
    prm = KibamParams.from_kc(1.0, 0.0, BAT)
    empty = DischargeTrace(np.array([0.0, 2.0]), np.zeros(1), kind="poisson")
    np.testing.assert_array_equal(kibam_poisson_path(prm, empty, [0.0, 1.0, 2.0]).u, 100.0)
    tr = _jump_trace(0.0, 0.7, 2.0)
    assert kibam_poisson_path(prm, tr, [0.0]).u[0] == pytest.approx(100.0 - 0.7, abs=1e-12)
    with pytest.raises(ModelError):
        kibam_poisson_path(prm, discharge_trace(ConstantCurrent(1.0), 1.0), [0.5])


def test_poisson_path_equals_general():
    prm = KibamParams.from_kc(2.0, 0.3, BAT)
    tr = sample_poisson_trace(PoissonTrain(0.5, 30.0, seed=9), 2.0)
    grid = np.linspace(0.0, 2.0, 21)
    np.testing.assert_allclose(kibam_poisson_path(prm, tr, grid).u, kibam_general_u(prm, tr, grid).u, atol=1e-11)


def test_campbell_mean():
    prm = KibamParams.from_kc(1.0, 0.0, BAT)
    pulse = PulseTrain(20.0, 0.1, 0.1)
    train = PoissonTrain.from_pulse(pulse, seed=21)
    u1 = np.array([kibam_poisson_path(prm, sample_poisson_trace(train, 1.0, i), [1.0]).u[0] for i in range(5000)])
    target = kibam_constant_u(prm, 10.0, 1.0).u
    se = u1.std(ddof=1) / np.sqrt(len(u1))
    assert abs(u1.mean() - target) < 3 * se


def test_autonomous_curve():
    prm = KibamParams.from_kc(1.0, 0.0, BAT)
    assert kibam_autonomous_curve(prm, 10.0, 1000.0) == pytest.approx(100.0, abs=1e-12)
    assert abs(kibam_autonomous_curve(prm, 10.0, 990.0) - kibam_constant_u(prm, 10.0, 1.0).u) < 1e-12
    assert kibam_autonomous_curve(prm, 20.0, 950.0) != kibam_autonomous_curve(prm, 10.0, 950.0)
    assert prm.gamma(20.0) == pytest.approx(2 * prm.gamma(10.0))
    with pytest.raises(ModelError):
        kibam_autonomous_curve(prm, 0.0, 900.0)
    with pytest.raises(ModelError):
        kibam_autonomous_curve(prm, 10.0, 1001.0)


def test_autonomous_curve_with_migration_matches_time_form():
    prm = KibamParams.from_kc(1.5, 0.8, BAT)
    t = np.linspace(0.0, 5.0, 11)
    s = kibam_constant_u(prm, 10.0, t)
    np.testing.assert_allclose(kibam_autonomous_curve(prm, 10.0, s.v), s.u, atol=1e-11)
    # dividing by kc alone (no 1 + p) does not reproduce the solution
    c = BAT.c
    wrong = 100 - c * 10 * t - 10 * (1 - c) * (1 - np.exp(-prm.decay * t)) / prm.kc
    assert np.max(np.abs(wrong - s.u)) > 1.0


def test_recovery_after_load_stops():
    prm = KibamParams.from_kc(1.0, 0.2, BAT)
    tr = DischargeTrace(np.array([0.0, 1.0, 30.0]), np.array([10.0, 0.0]))
    s = kibam_general_u(prm, tr, np.linspace(1.0, 8.0, 200))
    s0 = kibam_general_u(prm, tr, 1.0)
    c, N = BAT.c, BAT.N
    assert c * s0.y - (1 - c) * s0.u + prm.p * (N - s0.u) > 0
    assert np.all(np.diff(s.u) > 0)
    assert kibam_general_u(prm, tr, 30.0).u == pytest.approx(N - prm.c_eff * 10.0, abs=1e-9)


def test_csv_export(tmp_path):
    prm = KibamParams.from_kc(1.0, 0.0, BAT)
    s = kibam_constant_u(prm, 10.0, np.linspace(0, 1, 5))
    path = s.to_csv(tmp_path / "k.csv")
    assert path.read_text().splitlines()[0] == "t_hours,v_Ah,u_Ah,y_Ah"
    np.testing.assert_allclose(read_csv(path)["u_Ah"], s.u)


profiles = st.sampled_from(["constant", "pulse", "poisson"])


@settings(max_examples=12)
@given(st.floats(math.log(0.1), math.log(10.0)), st.floats(-0.9, 5.0), st.floats(0.05, 0.95), profiles,
       st.integers(0, 10_000))
def test_closed_form_vs_rk4_property(log_kc, p, c, kind, seed):
    bat = BatterySpec(100.0 * c, 100.0)
    prm = KibamParams.from_kc(math.exp(log_kc), p, bat)
    profile = {"constant": ConstantCurrent(15.0), "pulse": PulseTrain(40.0, 0.07, 0.13),
               "poisson": PoissonTrain(0.5, 30.0, seed=seed)}[kind]
    tr = discharge_trace(profile, 2.0)
    grid = np.linspace(0.0, 2.0, 9)
    ref = two_well_rk4(prm, tr, grid, step=2e-4)
    s = kibam_general_u(prm, tr, grid)
    assert np.max(np.abs(ref[:, 0] - s.u)) < 1e-6
    # bookkeeping u + y = T - Lambda
    assert np.max(np.abs(s.u + s.y - (bat.T - tr.cumulative(grid)))) < 1e-10

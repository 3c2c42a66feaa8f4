import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from socmodels.core import BatterySpec, CapacityTrace
from socmodels.errors import ModelError
from socmodels.io import read_csv
from socmodels.kibam import KibamParams, kibam_constant_u
from socmodels.metrics import (
    PerformanceReport,
    VoltageModel,
    cutoff_threshold,
    performance_from_curve,
    performance_report,
    state_of_charge,
    voltage,
)
from socmodels.nlode import NlodeSpec, RecoveryFunction, expode_curve, expode_solve
from socmodels.spatial import SpatialParams, available_capacity, phase_plane_curve

BAT = BatterySpec(100.0, 1000.0)


def test_state_of_charge():
    assert state_of_charge(100.0, 100.0) == 1.0
    assert state_of_charge(0.0, 100.0) == 0.0
    assert state_of_charge(84.311, 100.0) == pytest.approx(0.84311, abs=1e-15)
    u = kibam_constant_u(KibamParams.from_kc(1.0, 0.0, BAT), 10.0, 1.0).u
    assert state_of_charge(u, 100.0) == pytest.approx(0.9331091, abs=1e-7)
    np.testing.assert_allclose(state_of_charge(np.array([50.0, 25.0]), 100.0), [0.5, 0.25])
    with pytest.raises(ModelError):
        state_of_charge(1.0, 0.0)


def test_nernst_constants():
    m = VoltageModel(E0=1.5, r=0.1, E_cut=1.0)
    assert m.K_e == pytest.approx(0.025691, abs=5e-7)
    assert m.voltage(1.0) == 1.5
    assert m.voltage(0.5) == pytest.approx(1.5 - 0.01781, abs=5e-6)
    assert voltage(m, 1.0, 2.0) == pytest.approx(1.5 - 0.2)


def test_voltage_domain_and_validation():
    m = VoltageModel(E0=1.5, r=0.1, E_cut=1.0)
    with pytest.raises(ModelError, match="end of life"):
        m.voltage(0.0)
    with pytest.raises(ModelError):
        VoltageModel(E0=1.0, r=0.1, E_cut=1.2)
    with pytest.raises(ModelError):
        VoltageModel(E0=1.5, r=-0.1, E_cut=1.0)


def test_cutoff_threshold_hits_cut_voltage():
    m = VoltageModel(E0=1.5, r=0.01, E_cut=1.4)
    x0 = cutoff_threshold(m, 100.0, current=2.0)
    assert voltage(m, x0 / 100.0, 2.0) == pytest.approx(1.4, abs=1e-13)


@given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0), st.floats(0.0, 50.0))
def test_voltage_monotone(s1, s2, current):
    m = VoltageModel(E0=1.5, r=0.05, E_cut=1.0)
    lo, hi = sorted((s1, s2))
    if hi - lo > 1e-9:
        assert m.voltage(hi, current) > m.voltage(lo, current)
    assert m.voltage(lo, current + 1.0) < m.voltage(lo, current)


def test_pure_discharge_report():
    t = np.linspace(0.0, 15.0, 31)
    trace = CapacityTrace(t, 1000.0 - 10.0 * t, 100.0 - 10.0 * t, BAT)
    rep = performance_report(trace, 0.0)
    assert rep.t0_hours == pytest.approx(10.0)
    assert rep.v0_Ah == pytest.approx(900.0)
    assert rep.D_Ah == pytest.approx(100.0)
    assert rep.gain_Ah == pytest.approx(0.0, abs=1e-12)
    assert rep.status == "dead" and not rep.alive


def test_alive_at_horizon():
    t = np.linspace(0.0, 1.0, 5)
    rep = performance_report(CapacityTrace(t, 1000.0 - t, 100.0 - t, BAT), 0.0)
    assert rep.alive and rep.t0_hours is None and rep.D_Ah is None


def test_kibam_life_exceeds_naive():
    prm = KibamParams.from_kc(1.0, 0.0, BAT)
    t = np.linspace(0.0, 100.0, 201)
    s = kibam_constant_u(prm, 10.0, t)
    trace = CapacityTrace(t, s.v, s.u, BAT)
    rep = performance_report(trace, 0.0, evaluator=lambda x: kibam_constant_u(prm, 10.0, x).u,
                             v_of_t=lambda x: 1000.0 - 10.0 * x)
    assert rep.t0_hours > 100.0 / 10.0
    assert abs(kibam_constant_u(prm, 10.0, rep.t0_hours).u) < 1e-8
    assert rep.gain_Ah == pytest.approx(rep.D_Ah - 100.0)


def test_expode_delivered_capacity_two_ways():
    spec = NlodeSpec(RecoveryFunction.exponential(0.01), 0.05, 50.0, BAT)
    t = np.linspace(0.0, 19.0, 39)
    x = expode_solve(spec, t)
    trace = CapacityTrace(t, 1000.0 - 50.0 * t, x, BAT)
    by_time = performance_report(trace, 0.0, evaluator=lambda s: expode_solve(spec, s),
                                 v_of_t=lambda s: 1000.0 - 50.0 * s)
    by_curve = performance_from_curve(lambda v: expode_curve(spec, v), 1000.0, 100.0, 0.0)
    assert by_time.status == by_curve.status == "dead"
    assert abs(by_time.D_Ah - by_curve.D_Ah) < 1e-6
    assert abs(expode_solve(spec, by_time.t0_hours)) < 1e-8


def test_delivered_capacity_grows_with_migration():
    D = []
    for rho in (0.0, 0.1, 0.2, 0.5):
        prm = SpatialParams(0.5, 0.0, rho, BAT)
        curve = phase_plane_curve(prm, 1000.0, n_points=40, t_end=1.5)
        rep = performance_report(curve, 0.0, evaluator=lambda s: float(available_capacity(s, prm, 1000.0)),
                                 v_of_t=lambda s: float(available_capacity(s, prm, 1000.0)) + 900.0 - 1000.0 * s)
        D.append(rep.D_Ah)
        assert rep.gain_Ah == pytest.approx(rep.D_Ah - 100.0)
    assert all(a < b for a, b in zip(D, D[1:]))


def test_report_export(tmp_path):
    rep = PerformanceReport(3.4, 828.2, 171.8, 71.8, 0.0, "dead")
    c = read_csv(rep.to_csv(tmp_path / "r.csv"))
    assert list(c) == ["t0_hours", "v0_Ah", "D_Ah", "gain_Ah", "threshold"]
    assert json.loads(rep.to_json(tmp_path / "r.json").read_text())["D_Ah"] == 171.8
    alive = PerformanceReport(None, None, None, None, 1.0, "alive at horizon")
    assert math.isnan(read_csv(alive.to_csv(tmp_path / "a.csv"))["t0_hours"][0])

import csv
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_cofc.drivecycle import DriveCycle, nedc
from robust_cofc.powertrain import (
    BatchEnv,
    SocEnvelope,
    StepDone,
    VehicleParams,
    demand_power,
    env_step,
    fuel_rate,
    observe,
    reset,
    soc_lower_limit,
    soc_upper_limit,
    step_cost,
)

GOLDEN = Path(__file__).parent / "data" / "golden_nedc_const03.csv"
ENV = SocEnvelope(H=0.8, L=0.4, B=0.6, bl=10, br=90, Ts=100)


def test_limit_examples():
    assert soc_upper_limit(ENV, 0) == pytest.approx(0.6)
    assert soc_upper_limit(ENV, 50) == pytest.approx(0.8)
    assert soc_upper_limit(ENV, 100) == pytest.approx(0.6)
    assert soc_lower_limit(ENV, 0) == pytest.approx(0.6)
    assert soc_lower_limit(ENV, 50) == pytest.approx(0.4)
    assert soc_lower_limit(ENV, 5) == pytest.approx(0.5)


@pytest.mark.parametrize("soc, expected", [(0.6, 0.0), (0.85, 0.05), (0.35, 0.05)])
def test_cost_examples(soc, expected):
    assert step_cost(soc, ENV, 50) == pytest.approx(expected, abs=1e-15)


def test_limit_out_of_range():
    with pytest.raises(ValueError):
        soc_upper_limit(ENV, -1)
    with pytest.raises(ValueError):
        soc_lower_limit(ENV, 101)


def test_envelope_validation():
    with pytest.raises(ValueError):
        SocEnvelope(H=0.5, L=0.4, B=0.6, bl=10, br=90, Ts=100)
    with pytest.raises(ValueError):
        SocEnvelope(H=0.8, L=0.4, B=0.6, bl=90, br=10, Ts=100)
    e = SocEnvelope.default(200)
    assert (e.H, e.L, e.B, e.bl, e.br, e.Ts) == (0.7, 0.5, 0.6, 20, 180, 200)


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 500), st.data())
def test_envelope_continuity(ts, data):
    bl = data.draw(st.integers(1, ts - 2))
    br = data.draw(st.integers(bl + 1, ts - 1))
    env = SocEnvelope(H=0.75, L=0.45, B=0.6, bl=bl, br=br, Ts=ts)
    t = np.arange(ts + 1)
    for f in (soc_upper_limit, soc_lower_limit):
        assert np.max(np.abs(np.diff(f(env, t)))) <= env.max_slope() + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.integers(0, 100))
def test_cost_zero_iff_inside(soc, t):
    inside = soc_lower_limit(ENV, t) <= soc <= soc_upper_limit(ENV, t)
    c = step_cost(soc, ENV, t)
    assert c >= 0
    assert (c == 0) == inside


def test_demand_examples():
    p = VehicleParams()
    assert demand_power(p, 0.0, 0.0) == 0.0
    assert demand_power(p, 10.0, 0.0) == pytest.approx(1783.5)
    # braking at 10 m/s, -2 m/s^2, worked by hand with the default vehicle
    expected = 1500 * -2 * 10 + 0.5 * 1.2 * 0.26 * 2.0 * 1000 + 1500 * 9.81 * 0.01 * 10
    assert demand_power(p, 10.0, -2.0) == pytest.approx(expected)
    assert expected < 0


def test_fuel_examples():
    p = VehicleParams()
    assert fuel_rate(p, 0.0) == 0.0
    assert fuel_rate(p, 15480.0) == pytest.approx(1.15)
    with pytest.raises(ValueError):
        fuel_rate(p, p.engine_power_max_W * 1.001)
    with pytest.raises(ValueError):
        fuel_rate(p, -1.0)


def test_vehicle_validation():
    with pytest.raises(ValueError):
        VehicleParams(mass_kg=0.0)
    with pytest.raises(ValueError):
        VehicleParams(engine_eff=1.2)
    with pytest.raises(ValueError):
        VehicleParams(driveline_eff=-0.5)


def test_idle_step_keeps_soc():
    cycle = DriveCycle(np.zeros(11))
    env = SocEnvelope.default(10)
    s = reset(cycle, VehicleParams(), env)
    s2, tr = env_step(s, 0.0, cycle, VehicleParams(), env)
    assert tr.r == 0.0
    assert s2.soc == s.soc


def test_wide_plateau_never_costs():
    cycle = nedc().window(0, 300)
    env = SocEnvelope.default(300, H=0.999, L=0.001, B=0.6)
    p = VehicleParams()
    s = reset(cycle, p, env)
    rng = np.random.default_rng(0)
    while s.t < env.Ts:
        s, tr = env_step(s, float(rng.uniform(0, 0.1)), cycle, p, env)
        if env.bl <= s.t <= env.br:  # the corridor pinches back to B at both ends
            assert tr.c == 0.0


def test_reset_contract():
    cycle = nedc()
    env = SocEnvelope.default(cycle.n_steps)
    s = reset(cycle, VehicleParams(), env)
    assert (s.t, s.soc, s.fuel_g_cum) == (0, env.B, 0.0)
    with pytest.raises(ValueError):
        reset(cycle, VehicleParams(), env, 1.5)
    _, tr = env_step(s, 0.1, cycle, VehicleParams(), env)
    np.testing.assert_array_equal(tr.s, observe(env.B, cycle.speeds[0], VehicleParams()))


def test_step_after_done_and_bad_action():
    env = SocEnvelope.default(10)
    cycle = DriveCycle(np.linspace(0, 5, 11))
    p = VehicleParams()
    s = reset(cycle, p, env)
    with pytest.raises(ValueError):
        env_step(s, 1.5, cycle, p, env)
    for _ in range(10):
        s, tr = env_step(s, 0.2, cycle, p, env)
    assert tr.done
    with pytest.raises(StepDone):
        env_step(s, 0.2, cycle, p, env)


def _golden_rows():
    with open(GOLDEN) as f:
        return list(csv.DictReader(f))


def test_golden_nedc_constant_action():
    """Full NEDC episode at action 0.3 against the independent scalar trace."""
    rows = _golden_rows()
    cycle = nedc()
    env = SocEnvelope.default(cycle.n_steps)
    p = VehicleParams()
    s = reset(cycle, p, env)
    total = 0.0
    for row in rows:
        assert s.t == int(row["t"])
        assert s.soc == pytest.approx(float(row["soc"]), abs=1e-12)
        s, tr = env_step(s, float(row["action"]), cycle, p, env)
        assert tr.s[1] == pytest.approx(float(row["velocity"]), abs=1e-12)
        assert tr.r == pytest.approx(float(row["reward"]), abs=1e-12)
        assert tr.c == pytest.approx(float(row["cost"]), abs=1e-12)
        total += tr.r
    assert len(rows) == cycle.n_steps
    # cumulative fuel is exactly minus the reward sum
    assert s.fuel_g_cum == pytest.approx(-total, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=40, max_size=40), st.floats(0.4, 0.8))
def test_signs_soc_range_and_batch_agreement(actions, soc0):
    cycle = nedc().window(950, 40)
    env = SocEnvelope.default(40)
    p = VehicleParams()
    s = reset(cycle, p, env, soc0)
    batch = BatchEnv(cycle, p, env, 2)
    batch.reset(np.array([soc0, soc0]))
    for a in actions:
        s, tr = env_step(s, a, cycle, p, env)
        obs, r, c, _ = batch.step(np.array([a, a]))
        assert tr.r <= 0 and tr.c >= 0
        assert 0.0 <= s.soc <= 1.0
        assert r[0] == tr.r and c[0] == tr.c and batch.soc[1] == s.soc
    assert batch.done and s.t == 40


def test_determinism():
    cycle = nedc().window(900, 5)
    env = SocEnvelope.default(5)
    s = reset(cycle, VehicleParams(), env)
    a = env_step(s, 0.37, cycle, VehicleParams(), env)
    b = env_step(s, 0.37, cycle, VehicleParams(), env)
    assert a == (b[0], a[1]) and np.array_equal(a[1].s_next, b[1].s_next)


def test_engine_on_threshold_knob():
    p = VehicleParams(engine_on_threshold=0.05)
    cycle = nedc().window(900, 3)
    env = SocEnvelope.default(3)
    _, tr = env_step(reset(cycle, p, env), 0.04, cycle, p, env)
    assert tr.r == 0.0
    _, tr = env_step(reset(cycle, VehicleParams(), env), 0.04, cycle, VehicleParams(), env)
    assert tr.r == pytest.approx(-(0.15 + 0.04 * 56000 / (0.36 * 43000)))
    assert math.isfinite(tr.c)

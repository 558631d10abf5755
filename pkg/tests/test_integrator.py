import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delayflock import _kernels
from delayflock.diagnostics import diameter_series
from delayflock.errors import ConfigurationError, IntegrationBlowUp, OutOfRangeError
from delayflock.influence import InfluenceFunction
from delayflock.integrator import (
    HistoryBuffer,
    IntegratorConfig,
    integrate,
    sample_history,
    step_euler,
    step_rk4,
)
from delayflock.particles import SystemState

from conftest import const_history, random_history

# w = v1 - v2 for two agents obeys w' = -w(t - tau) - w(t).  With tau = 1 and
# w = 2 on [-1, 0], integrating exactly interval by interval (symbolic method of
# steps) gives the value below at t = 4.
W_AT_4_TAU1 = 0.05932775390598271

needs_compiled = pytest.mark.skipif(_kernels.compiled_backend is None, reason="compiled kernels not built")


def w_first_interval(t):
    # on [0, tau]: w' = -2 - w, w(0) = 2
    return -2.0 + 4.0 * math.exp(-t)


def test_dt_snaps_to_divisor_of_tau():
    lag, dt = IntegratorConfig(dt=0.03).resolve(0.25)
    assert lag == 9 and dt == pytest.approx(0.25 / 9)
    assert IntegratorConfig().resolve(1.0) == (100, 0.01)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        IntegratorConfig(scheme="rk45")
    with pytest.raises(ConfigurationError):
        IntegratorConfig(t_max=-1)
    with pytest.raises(ConfigurationError):
        IntegratorConfig(record_stride=0)


def test_history_segment_is_reproduced():
    h = const_history([1.0, -1.0, 0.5], 0.5)
    tr = integrate(h, InfluenceFunction.exponential(), IntegratorConfig(t_max=1.0))
    for k in range(tr.lag + 1):
        x, v = h.sample(tr.times[k])
        assert np.array_equal(tr.positions[k], x)
        assert np.array_equal(tr.velocities[k], v)
    assert tr.times[0] == -0.5 and tr.times[tr.zero_index] == 0.0


def test_recording_grid_and_stride():
    h = const_history([1.0, -1.0], 0.25)
    tr = integrate(h, InfluenceFunction.exponential(), IntegratorConfig(t_max=1.0, record_stride=5))
    post = tr.times[tr.zero_index:]
    assert np.allclose(np.diff(post), 5 * tr.dt, rtol=0, atol=1e-14)
    assert tr.t_end == pytest.approx(1.0)


def test_consensus_datum_stays_put():
    h = const_history([0.7, 0.7, 0.7], 0.5, anchors=[[0.0], [1.0], [3.0]], anchor_time=0.0)
    for scheme in ("euler", "rk4"):
        tr = integrate(h, InfluenceFunction.cucker_smale(2), IntegratorConfig(t_max=3.0, scheme=scheme))
        assert np.all(tr.velocities == 0.7)
        expected = np.array([0.0, 1.0, 3.0])[None, :] + 0.7 * tr.times[:, None]
        assert np.allclose(tr.positions[:, :, 0], expected, atol=1e-12)


def test_single_euler_step_two_agents():
    tau, dt = 1.0, 0.01
    h = const_history([1.0, -1.0], tau)
    buf = HistoryBuffer.from_history(h, dt)
    new = step_euler(buf, InfluenceFunction.exponential())
    assert new.velocities[0, 0] == pytest.approx(1.0 + dt * (-1.0 - 1.0), abs=1e-15)
    assert new.t == pytest.approx(dt)


def test_first_interval_matches_closed_form():
    h = const_history([1.0, -1.0], 1.0)
    tr = integrate(h, InfluenceFunction.exponential(), IntegratorConfig(t_max=1.0, dt=1 / 64, scheme="rk4"))
    w = tr.velocities[:, 0, 0] - tr.velocities[:, 1, 0]
    ts = tr.times[tr.zero_index:]
    exact = np.array([w_first_interval(t) for t in ts])
    assert np.max(np.abs(w[tr.zero_index:] - exact)) < 1e-9


def _w_error(scheme, n, backend=None):
    h = const_history([1.0, -1.0], 1.0)
    tr = integrate(h, InfluenceFunction.exponential(), IntegratorConfig(t_max=4.0, dt=1.0 / n, scheme=scheme), backend)
    return abs(tr.velocities[-1, 0, 0] - tr.velocities[-1, 1, 0] - W_AT_4_TAU1)


def test_euler_is_first_order():
    errs = [_w_error("euler", n) for n in (40, 80, 160)]
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    assert all(1.8 < r < 2.2 for r in ratios)


def test_rk4_is_fourth_order():
    errs = [_w_error("rk4", n) for n in (40, 80, 160)]
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    assert all(13.0 < r < 17.5 for r in ratios)
    assert errs[-1] < 1e-9


def test_schemes_agree_as_dt_shrinks():
    # Richardson-style: the Euler/RK4 gap halves with dt
    h = const_history([1.0, -1.0], 1.0)
    psi = InfluenceFunction.exponential()
    gaps = []
    for n in (50, 100, 200):
        a = integrate(h, psi, IntegratorConfig(t_max=4.0, dt=1 / n, scheme="euler"))
        b = integrate(h, psi, IntegratorConfig(t_max=4.0, dt=1 / n, scheme="rk4"))
        gaps.append(np.max(np.abs(a.velocities - b.velocities)))
    assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=0.1)
    assert gaps[1] / gaps[2] == pytest.approx(2.0, rel=0.1)


def test_two_agent_momentum_is_conserved():
    tau = 0.5
    h = const_history([1.3, -0.4], tau)
    tr = integrate(h, InfluenceFunction.exponential(), IntegratorConfig(t_max=50 * tau, dt=tau / 64, scheme="rk4"))
    u = tr.velocities[:, 0, 0] + tr.velocities[:, 1, 0]
    assert np.max(np.abs(u - 0.9)) <= 1e-10


def test_fig1_rows():
    psi = InfluenceFunction.exponential()
    tr = integrate(const_history([1.0, -1.0], 0.25), psi, IntegratorConfig(t_max=20.0))
    dv = diameter_series(tr)[1][tr.zero_index:]
    assert np.all(np.diff(dv[dv > 1e-300]) < 0)
    tr = integrate(const_history([1.0, -1.0], 1.0), psi, IntegratorConfig(t_max=20.0))
    w = tr.velocities[tr.zero_index:, 0, 0] - tr.velocities[tr.zero_index:, 1, 0]
    assert np.count_nonzero(np.diff(np.sign(w)) != 0) >= 1


def test_blow_up_reports_last_valid_time():
    h = const_history([1e308, -1e308], 0.5)
    with pytest.raises(IntegrationBlowUp) as info:
        integrate(h, InfluenceFunction.exponential(), IntegratorConfig(t_max=1.0))
    assert info.value.last_valid_time >= 0


def test_sample_history_nodes_and_interpolation():
    tau, dt = 1.0, 0.25
    states = [SystemState(-1.0 + k * dt, [[k * 1.0], [0.0]], [[2.0 * k * dt], [1.0]]) for k in range(5)]
    buf = HistoryBuffer(tau, dt, states)
    assert sample_history(buf, -0.5) is states[2]
    mid = sample_history(buf, -0.375)
    assert mid.velocities[0, 0] == pytest.approx(2.0 * 0.625, abs=1e-15)
    assert sample_history(buf, buf.t - tau) is states[0]
    with pytest.raises(OutOfRangeError):
        sample_history(buf, -1.5)
    with pytest.raises(OutOfRangeError):
        sample_history(buf, 0.1)


def test_stepper_matches_integrate():
    h = const_history([-0.1, 0.0, 0.5, 0.6], 1.0)
    psi = InfluenceFunction.cucker_smale(4)
    for scheme, stepper in (("euler", step_euler), ("rk4", step_rk4)):
        tr = integrate(h, psi, IntegratorConfig(t_max=5.0, scheme=scheme))
        buf = HistoryBuffer.from_history(h, tr.dt)
        for _ in range(500):
            stepper(buf, psi)
        assert np.max(np.abs(buf.current.velocities - tr.velocities[-1])) <= 1e-14


def test_state_at_interpolates():
    tr = integrate(const_history([1.0, -1.0], 0.5), InfluenceFunction.exponential(), IntegratorConfig(t_max=1.0))
    s = tr.state_at(0.5025)
    k = tr.zero_index + 100
    assert np.allclose(s.velocities, 0.5 * (tr.velocities[k] + tr.velocities[k + 1]))
    with pytest.raises(OutOfRangeError):
        tr.state_at(2.0)


@needs_compiled
@pytest.mark.parametrize("scheme", ["euler", "rk4"])
@pytest.mark.parametrize("psi", [InfluenceFunction.exponential(), InfluenceFunction.cucker_smale(1.5),
                                 InfluenceFunction.constant(),
                                 InfluenceFunction.tabulated([0, 1, 3], [1.0, 0.4, 0.05])])
def test_backends_agree(scheme, psi):
    rng = np.random.default_rng(11)
    h = random_history(rng, 6, 2, 0.4)
    cfg = IntegratorConfig(t_max=4.0, scheme=scheme, record_stride=3)
    a = integrate(h, psi, cfg, backend="python")
    b = integrate(h, psi, cfg, backend="compiled")
    assert np.array_equal(a.times, b.times)
    assert np.max(np.abs(a.velocities - b.velocities)) <= 1e-13
    assert np.max(np.abs(a.positions - b.positions)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(1, 3), st.floats(0.05, 1.5), st.integers(0, 2**32 - 1))
def test_velocities_stay_in_initial_ball(n, d, tau, seed):
    # Euler velocity updates are convex combinations for dt <= 1
    rng = np.random.default_rng(seed)
    h = random_history(rng, n, d, tau)
    tr = integrate(h, InfluenceFunction.exponential(), IntegratorConfig(t_max=3.0))
    speeds = np.linalg.norm(tr.velocities, axis=2)
    assert np.max(speeds) <= h.max_speed() * (1 + 1e-12)

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import lambertw

from delayflock import diagnostics as D
from delayflock.errors import DomainError, OutOfRangeError, PartialResultWarning
from delayflock.influence import InfluenceFunction
from delayflock.integrator import IntegratorConfig, integrate
from delayflock.particles import InitialHistory, SystemState
from delayflock.scenarios import builtin

from conftest import const_history, random_flock_config

# root of 1 - C = 0.5 e^C, frozen from the Lambert-W form C = 1 - W(tau (1 - a) e^tau) / tau
C_HALF_TAU1 = 0.3149230578454061
# dominant roots of lambda + exp(-lambda tau) + 1 = 0, frozen from lambda = W_k(-tau e^tau)/tau - 1
DOMINANT_TAU1 = complex(-0.6050209172927067, 1.7881880413836293)
DOMINANT_TAU025 = -3.2581064727843385


def lambert_roots(tau, count):
    out = []
    for k in range(-count - 3, count + 4):
        lam = complex(lambertw(-tau * math.exp(tau), k)) / tau - 1.0
        if lam.imag >= -1e-12 and all(abs(lam - r) > 1e-9 for r in out):
            out.append(complex(lam.real, abs(lam.imag)))
    out.sort(key=lambda z: -z.real)
    return out[:count]


def run(history, psi, **kw):
    return integrate(history, psi, IntegratorConfig(**kw))


def test_diameters():
    s = SystemState(0.0, [[0.0], [0.0]], [[1.0], [-1.0]])
    assert D.spatial_diameter(s) == 0.0
    assert D.velocity_diameter(s) == 2.0
    s3 = SystemState(0.0, [[0.0], [1.0], [2.0]], [[-10.0], [0.0], [20.0]])
    assert D.velocity_diameter(s3) == 30.0
    assert D.diameter([[3.0, 4.0]]) == 0.0


def test_max_speed():
    assert D.max_speed_Rv(const_history([-10.0, 0.0, 20.0], 1.0)) == 20.0
    assert D.max_speed_Rv(const_history([0.0, 0.0], 1.0), dt=0.1) == 0.0
    times = [-1.0, -0.3, 0.0]
    v = np.array([[[1.0], [0.0]], [[3.5], [0.0]], [[0.2], [0.0]]])
    h = InitialHistory.tabulated(1.0, times, np.zeros_like(v), v)
    assert D.max_speed_Rv(h, dt=0.25) == 3.5


def test_decay_rate_oracles():
    assert D.solve_decay_rate(0.5, 1.0) == pytest.approx(C_HALF_TAU1, abs=1e-14)
    assert 1 - float(lambertw(0.5 * math.e).real) == pytest.approx(C_HALF_TAU1, abs=1e-15)
    assert D.solve_decay_rate(1.0, 3.0) == 1.0
    assert D.solve_decay_rate(0.3, 0.0) == pytest.approx(0.3, abs=1e-13)
    with pytest.raises(DomainError):
        D.solve_decay_rate(0.0, 1.0)
    with pytest.raises(DomainError):
        D.solve_decay_rate(0.5, -1.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(0.0, 5.0))
def test_decay_rate_residual_property(a, tau):
    c = D.solve_decay_rate(a, tau)
    assert 0 < c <= 1
    assert abs(1 - c - (1 - a) * math.exp(c * tau)) <= 1e-13
    if tau > 1e-6 and a < 1:
        oracle = 1 - float(lambertw(tau * (1 - a) * math.exp(tau)).real) / tau
        assert c == pytest.approx(oracle, abs=1e-9)


@pytest.mark.parametrize("tau", [0.25, 0.5, 1.0, 2.0])
def test_characteristic_roots_match_lambert_branches(tau):
    roots = D.characteristic_roots(tau, 5)
    oracle = lambert_roots(tau, 5)
    assert len(roots) == 5
    for r, z in zip(roots, oracle):
        assert r.residual <= 1e-12 and r.mu <= 0 and r.sigma >= 0
        assert abs(r.value - z) <= 1e-9 * max(1.0, abs(z))


def test_characteristic_roots_frozen_values():
    assert D.characteristic_roots(1.0, 1)[0].value == pytest.approx(DOMINANT_TAU1, abs=1e-12)
    r = D.characteristic_roots(0.25, 1)[0]
    assert r.sigma == 0.0 and r.mu == pytest.approx(DOMINANT_TAU025, abs=1e-12)
    assert D.characteristic_roots(1e-8, 1)[0].value == pytest.approx(-2.0, abs=1e-6)


def test_no_real_root_at_unit_delay():
    mu = np.linspace(-50, 10, 600001)
    g = mu + 1 + np.exp(-mu)
    assert np.all(g > 0)
    assert D.characteristic_roots(1.0, 3)[0].sigma > 0


def test_partial_roots_warn():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        roots = D.characteristic_roots(0.25, 60)
    assert any(issubclass(w.category, PartialResultWarning) for w in caught) or len(roots) == 60


def test_dominant_root_agrees_with_simulated_oscillation():
    psi = InfluenceFunction.exponential()
    for tau, oscillates in ((0.25, False), (1.0, True)):
        tr = run(const_history([1.0, -1.0], tau), psi, t_max=20.0)
        w = tr.velocities[tr.zero_index:, 0, 0] - tr.velocities[tr.zero_index:, 1, 0]
        w = w[np.abs(w) > 1e-200]
        changes = np.count_nonzero(np.diff(np.sign(w)) != 0)
        assert (D.characteristic_roots(tau, 1)[0].sigma > 0) == oscillates
        assert (changes > 0) == oscillates


def test_certificate_hand_example():
    # d_V = 0.1, R_v = 1, all agents at the origin at s = -tau
    h = const_history([1.0, 0.9], 0.1)
    c = D.check_flocking_condition(h, InfluenceFunction.exponential())
    assert c.lhs == pytest.approx(0.11, abs=1e-14)
    assert c.rhs == pytest.approx(math.exp(-0.1), abs=1e-15)
    assert c.satisfied
    psi = InfluenceFunction.exponential()
    assert psi.integral(0.1, c.d_star) == pytest.approx(0.11, abs=1e-11)
    assert c.psi_star == pytest.approx(psi(c.d_star))
    assert c.decay_rate_C == D.solve_decay_rate(c.psi_star, 0.1)


def test_certificate_heavy_tail_and_failures():
    c = D.check_flocking_condition(const_history([50.0, -50.0, 3.0], 2.0), InfluenceFunction.constant())
    assert c.satisfied and math.isinf(c.rhs)
    assert c.to_dict()["rhs"] == "inf"
    for name in ("fig3_tau025", "fig3_tau1"):
        cfg = builtin(name)
        assert not D.check_flocking_condition(cfg.build_history(), cfg.psi).satisfied


def test_certificate_json_round_trip():
    c = D.check_flocking_condition(const_history([1.0, 0.9], 0.1), InfluenceFunction.exponential())
    assert D.FlockingCertificate.from_dict(c.to_dict()) == c
    keys = set(c.to_dict())
    assert {"lhs", "rhs", "satisfied", "d_star", "psi_star", "decay_rate_C", "R_v"} <= keys


def test_lyapunov_consensus_and_initial_value():
    h = const_history([0.4, 0.4, 0.4], 0.5, anchors=[[0.0], [1.0], [2.0]], anchor_time=0.0)
    tr = run(h, InfluenceFunction.exponential(), t_max=2.0)
    assert D.lyapunov(tr, 0.0) == 0.0
    assert D.lyapunov(tr, 2.0) == pytest.approx(0.0, abs=1e-12)
    # positions x_i(s) = v_i s shrink towards s = 0, so the middle term is zero only at t = 0
    h = const_history([1.0, -1.0], 0.5, anchor_time=0.0)
    tr = run(h, InfluenceFunction.exponential(), t_max=1.0)
    assert D.lyapunov(tr, 0.0) == pytest.approx(2.0 * 1.5, abs=1e-12)
    with pytest.raises(OutOfRangeError):
        D.lyapunov(tr, 5.0)


def test_lyapunov_nonincreasing_on_three_agent_scenario():
    cfg = builtin("fig2_tau025")
    tr = integrate(cfg.build_history(), cfg.psi, cfg.integrator)
    _, L = D.lyapunov_series(tr)
    assert np.max(L - np.minimum.accumulate(L)) <= 1e-9


def test_lyapunov_can_rise_with_zero_self_weight():
    # two agents: d_V' = d_V(t - tau) - d_V(t) can exceed the dissipation the
    # functional assumes, and the rise does not vanish under refinement
    psi = InfluenceFunction.exponential()
    rises = []
    for n in (100, 400):
        tr = run(const_history([1.0, -1.0], 1.0), psi, t_max=20.0, dt=1.0 / n)
        _, L = D.lyapunov_series(tr)
        rises.append(np.max(L - np.minimum.accumulate(L)))
    assert rises[1] > 0.5 * rises[0] > 0.01


def test_lyapunov_rise_with_certificate_satisfied():
    # with zero self-weight the functional is not monotone even for certified data;
    # the rise converges to a positive limit as dt shrinks
    h, psi = random_flock_config(112)
    assert h.N == 3 and D.check_flocking_condition(h, psi).satisfied
    rises = []
    for n in (50, 400):
        tr = integrate(h, psi, IntegratorConfig(t_max=10.0, dt=h.tau / n))
        _, L = D.lyapunov_series(tr)
        rises.append(np.max(L - np.minimum.accumulate(L)))
    assert min(rises) > 0.015 and abs(rises[1] - rises[0]) < 0.005


def test_velocity_inequality_overlap_form():
    psi = InfluenceFunction.exponential()
    for name in ("fig2_tau025", "fig2_tau1", "fig3_tau025", "fig3_tau1"):
        cfg = builtin(name)
        excess = []
        for n in (100, 400):
            tr = integrate(cfg.build_history(), psi if name.startswith("fig2") else cfg.psi,
                           IntegratorConfig(t_max=cfg.integrator.t_max, dt=cfg.tau / n))
            excess.append(D.velocity_inequality_violation(tr))
        # positive excess is discretization error and shrinks with dt
        assert excess[1] <= max(0.3 * excess[0], 1e-12)


def test_velocity_inequality_uniform_form_fails_for_two_agents():
    tr = run(const_history([1.0, -1.0], 1.0), InfluenceFunction.exponential(), t_max=20.0, dt=1 / 400)
    assert D.velocity_inequality_violation(tr, form="uniform") > 0.1


def test_fit_decay_rate_synthetic_and_flags():
    t = np.linspace(0, 10, 501)
    fit = D.fit_log_slope(t, np.exp(-0.5 * t))
    assert fit.rate == pytest.approx(0.5, abs=1e-6) and not fit.truncated
    assert D.fit_log_slope(t, np.full_like(t, 3.0)).rate == pytest.approx(0.0, abs=1e-12)
    y = np.exp(-0.5 * t)
    y[300:] = 0.0
    fit = D.fit_log_slope(t, y)
    assert fit.truncated and fit.n_points == 300 and fit.rate == pytest.approx(0.5, abs=1e-6)


def test_fit_rate_exceeds_certified_rate():
    h = const_history([1.0, 0.9, 0.95], 0.1)
    psi = InfluenceFunction.exponential()
    cert = D.check_flocking_condition(h, psi)
    assert cert.satisfied
    tr = run(h, psi, t_max=10.0)
    assert D.fit_decay_rate(tr, (0.0, 10.0)).rate >= cert.decay_rate_C


def test_classification_of_builtins():
    expected = {"fig1_tau025": "flocking", "fig2_tau025": "flocking", "fig2_tau1": "flocking",
                "fig3_tau025": "flocking", "fig3_tau1": "nonflocking"}
    for name, kind in expected.items():
        cfg = builtin(name)
        tr = integrate(cfg.build_history(), cfg.psi, cfg.integrator)
        got = D.classify_behavior(tr, eps_flock_rel=cfg.diagnostics.eps_flock_rel)
        assert got.kind == kind, name


def test_classification_consensus_and_oscillation():
    h = const_history([0.3, 0.3], 0.5, anchors=[[0.0], [1.0]])
    tr = run(h, InfluenceFunction.exponential(), t_max=5.0)
    assert D.classify_behavior(tr).kind == "flocking"
    # synthetic sustained oscillation: fake a trajectory with periodic d_V
    tr = run(const_history([1.0, -1.0], 1.0), InfluenceFunction.exponential(), t_max=20.0)
    t = tr.times
    v = np.zeros_like(tr.velocities)
    v[:, 0, 0] = np.sin(2 * t) + 2.0
    osc = type(tr)(t, tr.positions, v, tr.tau, tr.dt, tr.lag, tr.psi, tr.config, tr.history)
    res = D.classify_behavior(osc)
    assert res.kind == "oscillatory" and res.n_local_maxima >= 3


def test_hull_contraction_examples():
    v = [[0.0], [1.0]]
    assert D.verify_hull_contraction(v, [0.25, 0.75], [0.75, 0.25], 0.25)
    assert D.verify_hull_contraction(np.eye(3), [1 / 3] * 3, [1 / 3] * 3, 1 / 3)
    with pytest.raises(DomainError):
        D.verify_hull_contraction(v, [0.1, 0.9], [0.5, 0.5], 0.25)


@settings(max_examples=500, deadline=None)
@given(st.integers(1, 8), st.integers(1, 3), st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_hull_contraction_property(n, d, frac, seed):
    rng = np.random.default_rng(seed)
    kappa = max(frac / n, 1e-12)
    v = rng.normal(size=(n, d))
    a = kappa + (1 - n * kappa) * rng.dirichlet(np.ones(n))
    b = kappa + (1 - n * kappa) * rng.dirichlet(np.ones(n))
    assert D.verify_hull_contraction(v, a / a.sum(), b / b.sum(), kappa)


def test_envelope_holds_when_certified():
    h = const_history([1.0, 0.9, 0.95, 0.92], 0.2)
    psi = InfluenceFunction.cucker_smale(1.0)
    cert = D.check_flocking_condition(h, psi)
    assert cert.satisfied
    tr = run(h, psi, t_max=10.0)
    assert D.envelope_violation(tr, cert) <= 1e-9
    dx, _ = D.diameter_series(tr)
    assert np.max(dx + cert.R_v * h.tau) <= cert.d_star + 1e-9

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delayflock.errors import ConfigurationError, ConvergenceError, DomainError
from delayflock.influence import (
    InfluenceFunction,
    QuadratureConfig,
    eval_psi,
    tail_integral,
    validate_influence,
)

# int_1^inf (1+s^2)^-4 ds, frozen from the regularized incomplete beta closed form
CS4_TAIL_AT_1 = 0.016270259395035933


def simpson(f, a, b, n):
    x = np.linspace(a, b, n + 1)
    y = f(x)
    h = (b - a) / n
    return h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())


def test_psi_at_zero_is_one():
    assert eval_psi(InfluenceFunction.exponential(), 0.0) == 1.0
    assert eval_psi(InfluenceFunction.cucker_smale(4), 0.0) == 1.0
    assert eval_psi(InfluenceFunction.constant(), 0.0) == 1.0


def test_exponential_at_one():
    assert eval_psi(InfluenceFunction.exponential(), 1.0) == pytest.approx(math.exp(-1), abs=1e-15)


def test_negative_distance_rejected():
    with pytest.raises(DomainError):
        eval_psi(InfluenceFunction.exponential(), -0.1)


def test_underflow_is_clamped_positive():
    psi = InfluenceFunction.exponential()
    assert psi(1e4) > 0
    assert InfluenceFunction.cucker_smale(50)(1e10) > 0


def test_tail_exponential_from_zero():
    assert tail_integral(InfluenceFunction.exponential(), 0.0).value == pytest.approx(1.0, abs=1e-15)


def test_tail_constant_divergent():
    t = tail_integral(InfluenceFunction.constant(), 5.0)
    assert math.isinf(t.value) and t.divergent


def test_cs_tail_matches_two_resolution_simpson():
    # s = tan(theta) maps [1, inf) onto [pi/4, pi/2] with integrand cos^(2 beta - 2)
    f = lambda th: np.cos(th) ** 6
    coarse = simpson(f, math.pi / 4, math.pi / 2, 200)
    fine = simpson(f, math.pi / 4, math.pi / 2, 400)
    assert abs(coarse - fine) < 1e-8
    psi = InfluenceFunction.cucker_smale(4)
    assert tail_integral(psi, 1.0).value == pytest.approx(fine, abs=1e-12)
    assert tail_integral(psi, 1.0).value == pytest.approx(CS4_TAIL_AT_1, abs=1e-15)
    q = tail_integral(psi, 1.0, QuadratureConfig(method="quadrature"))
    assert q.method == "quadrature"
    assert q.value == pytest.approx(CS4_TAIL_AT_1, abs=1e-10)


def test_cs_with_small_beta_is_heavy_tailed():
    assert InfluenceFunction.cucker_smale(0.5).heavy_tailed
    assert math.isinf(tail_integral(InfluenceFunction.cucker_smale(0.25), 3.0).value)
    assert not InfluenceFunction.cucker_smale(0.51).heavy_tailed


def test_quadrature_budget_exhaustion_reports_partial():
    cfg = QuadratureConfig(method="quadrature", abs_tol=1e-300, limit=2)
    with pytest.raises(ConvergenceError) as info:
        tail_integral(InfluenceFunction.cucker_smale(4), 0.0, cfg)
    assert info.value.partial is not None


def test_definite_integral_exact_forms():
    psi = InfluenceFunction.exponential()
    assert psi.integral(1.0, 2.0) == pytest.approx(math.exp(-1) - math.exp(-2), rel=1e-14)
    assert psi.integral(2.0, 1.0) == pytest.approx(-(math.exp(-1) - math.exp(-2)), rel=1e-14)
    tab = InfluenceFunction.tabulated([0, 1, 2], [1.0, 0.5, 0.25])
    assert tab.integral(0, 2) == pytest.approx(0.75 + 0.375, abs=1e-15)
    assert tab.integral(0, 3) == pytest.approx(0.75 + 0.375 + 0.25, abs=1e-15)
    assert tab.heavy_tailed


def test_validate_passes_builtin_families():
    assert validate_influence(InfluenceFunction.exponential(), np.arange(0, 10.05, 0.1)) == []
    assert validate_influence(InfluenceFunction.cucker_smale(4), np.linspace(0, 50, 501)) == []


def test_validate_flags_increasing_pair():
    tab = InfluenceFunction.tabulated([0, 1, 2, 3], [1.0, 0.5, 0.7, 0.2])
    rep = validate_influence(tab, [0, 1, 2, 3])
    kinds = [(v.kind, v.index) for v in rep]
    assert ("monotonicity", 1) in kinds


def test_tabulated_validation_of_inputs():
    with pytest.raises(ConfigurationError):
        InfluenceFunction.tabulated([0, 1, 1], [1, 0.5, 0.2])
    with pytest.raises(ConfigurationError):
        InfluenceFunction.tabulated([0, 1], [1, 0.0])


def test_config_round_trip():
    for psi in (InfluenceFunction.exponential(), InfluenceFunction.cucker_smale(2.5),
                InfluenceFunction.constant(), InfluenceFunction.tabulated([0, 1, 4], [1, 0.3, 0.1])):
        again = InfluenceFunction.from_dict(psi.to_dict())
        s = np.linspace(0, 6, 13)
        assert np.array_equal(again(s), psi(s))
    with pytest.raises(ConfigurationError):
        InfluenceFunction.from_dict({"family": "gaussian"})


def test_lipschitz_bound_of_cucker_smale():
    beta = 4.0
    psi = InfluenceFunction.cucker_smale(beta)
    s = np.linspace(0, 5, 200001)
    slope = np.max(np.abs(np.diff(psi(s)) / np.diff(s)))
    assert slope <= psi.lipschitz_bound * (1 + 1e-9)
    assert slope == pytest.approx(psi.lipschitz_bound, rel=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.51, 20.0), st.floats(0.0, 50.0))
def test_cs_tail_is_nonincreasing_and_consistent(beta, a):
    psi = InfluenceFunction.cucker_smale(beta)
    t0 = tail_integral(psi, a).value
    t1 = tail_integral(psi, a + 0.5).value
    assert 0 <= t1 <= t0
    assert t0 - t1 == pytest.approx(psi.integral(a, a + 0.5), rel=1e-9, abs=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 700.0))
def test_exponential_values_positive_and_at_most_one(s):
    v = float(InfluenceFunction.exponential()(s))
    assert 0 < v <= 1

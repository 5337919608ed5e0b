import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from mobiflow.errors import (
    CaseBUnsupported,
    DimensionOne,
    IncompatibleThreshold,
    NonConcaveMobility,
)
from mobiflow.mobility import (
    Energy,
    Mobility,
    action_density,
    check_concavity,
    check_gmc,
    check_gmc_sufficient,
    finiteness_constant,
    load_spec,
    minimal_pressure,
    sample_grid,
)


def numeric_energy(mob, dP, d):
    """Energy with no closed forms, forcing the quadrature path."""
    return Energy.from_pressure(mob, dP=dP, dimension=d)


# --- mobilities ---------------------------------------------------------------


def test_power_law_values_and_derivatives():
    m = Mobility.power_law(0.5, coef=2.0)
    r = np.array([0.25, 1.0, 4.0])
    np.testing.assert_allclose(m(r), 2 * np.sqrt(r))
    np.testing.assert_allclose(m.d1(r), 1 / np.sqrt(r))
    np.testing.assert_allclose(m.d2(r), -0.5 * r**-1.5)
    assert m.case == "A"
    assert m.power_exponent == (2.0, 0.5)


def test_logistic_threshold():
    m = Mobility.logistic(2.0)
    assert m.case == "B" and m.M == 2.0
    assert m.M_up == 1.0
    assert m(np.array(1.0)) == 1.0


def test_derivatives_match_finite_differences():
    r = np.linspace(0.2, 0.8, 7)
    h = 1e-6
    for mob in (Mobility.saturating(2.0), Mobility.power_product(0.5, 0.5),
                Mobility.logistic(1.0), Mobility.shifted(Mobility.power_law(0.3), 0.5)):
        np.testing.assert_allclose(mob.d1(r), (mob(r + h) - mob(r - h)) / (2 * h), rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(mob.d2(r), (mob.d1(r + h) - mob.d1(r - h)) / (2 * h), rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("alpha", [-0.1, 1.5])
def test_power_law_rejects_nonconcave(alpha):
    with pytest.raises(NonConcaveMobility):
        Mobility.power_law(alpha)


def test_check_concavity_rejects_convex_table():
    r = np.linspace(0.0, 1.0, 11)
    mob = Mobility.tabulated(r, r + r**2)  # projected to concave
    check_concavity(mob)
    raw = Mobility("raw", {}, np.inf, lambda x: x + x**2, lambda x: 1 + 2 * x, lambda x: 2 + 0 * x)
    with pytest.raises(NonConcaveMobility):
        check_concavity(raw)


def test_tabulated_projection_is_concave_and_interpolates_concave_data():
    r = np.linspace(0.0, 2.0, 21)
    mob = Mobility.tabulated(r, np.sqrt(r + 0.01) - 0.1)
    np.testing.assert_allclose(mob(r), np.sqrt(r + 0.01) - 0.1, atol=1e-12)
    x = np.linspace(0.01, 1.99, 500)
    assert np.all(np.diff(mob(x), 2) <= 1e-12)
    # linear extension past the last abscissa
    assert mob(np.array(3.0)) > mob(np.array(2.0))


def test_tabulated_case_b():
    r = np.linspace(0.0, 1.0, 11)
    mob = Mobility.tabulated(r, r * (1 - r))
    assert mob.case == "B" and mob.M == 1.0


def test_serialization_round_trip():
    for mob in (Mobility.power_law(0.3, 2.0), Mobility.logistic(3.0), Mobility.constant(2.0),
                Mobility.saturating(0.5), Mobility.scaled(Mobility.shifted(Mobility.power_law(0.5), 1.0), 2.0)):
        spec = json.loads(json.dumps(mob.to_dict()))
        back = Mobility.from_dict(spec)
        r = np.array([0.1, 0.5, 0.9])
        np.testing.assert_allclose(back(r), mob(r))


def test_sample_grid_ranges():
    a = sample_grid(np.inf, 100)
    assert a[0] == pytest.approx(1e-8) and a[-1] == pytest.approx(1e6)
    b = sample_grid(2.0, 100)
    assert b[0] == pytest.approx(2e-8) and 2.0 - b[-1] == pytest.approx(2e-8)


# --- action density -----------------------------------------------------------


def test_action_density_conventions():
    m = Mobility.power_law(1.0)
    assert action_density(m, 0.0, 0.0) == 0.0
    assert action_density(m, 0.0, 1.0) == np.inf
    assert action_density(m, 2.0, 4.0) == 8.0
    assert action_density(m, -1.0, 0.0) == np.inf
    assert action_density(Mobility.logistic(1.0), 1.5, 0.0) == np.inf
    assert action_density(m, 2.0, np.array([3.0, 4.0])) == pytest.approx(12.5)


pair = st.tuples(st.floats(0.0, 0.99), st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))


@settings(max_examples=300, deadline=None)
@given(x1=pair, x2=pair, theta=st.floats(0.0, 1.0),
       kind=st.sampled_from(["power", "logistic", "saturating", "sqrt_product"]))
def test_action_density_joint_convexity(x1, x2, theta, kind):
    mob = {"power": Mobility.power_law(0.5), "logistic": Mobility.logistic(1.0),
           "saturating": Mobility.saturating(1.0), "sqrt_product": Mobility.power_product(0.5, 0.5)}[kind]
    r1, w1 = x1[0], np.array(x1[1:])
    r2, w2 = x2[0], np.array(x2[1:])
    f1, f2 = action_density(mob, r1, w1), action_density(mob, r2, w2)
    if not (np.isfinite(f1) and np.isfinite(f2)):
        return
    mid = action_density(mob, theta * r1 + (1 - theta) * r2, theta * w1 + (1 - theta) * w2)
    assert mid <= theta * f1 + (1 - theta) * f2 + 1e-10 * (1 + f1 + f2)


# --- energies -----------------------------------------------------------------


def test_pressure_of_entropy_with_linear_mobility_is_identity():
    e = Energy.entropy(Mobility.power_law(1.0))
    r = np.array([0.5, 1.0, 3.0])
    np.testing.assert_allclose(e.P(r), r)
    np.testing.assert_allclose(e.H(r), r)


def test_numeric_primitives_match_closed_forms():
    mob = Mobility.power_law(0.5)
    closed = Energy.pressure_power(mob, 1.5)
    num = numeric_energy(mob, closed.dP, 1)
    r = np.array([0.01, 0.3, 1.0, 2.5])
    np.testing.assert_allclose(num.P(r), closed.P(r), rtol=1e-9)
    np.testing.assert_allclose(num.H(r), closed.H(r), rtol=1e-9)
    # U is defined up to an affine function; compare second differences on a uniform grid
    x = np.linspace(0.1, 3.0, 9)
    np.testing.assert_allclose(np.diff(num.U(x), 2), np.diff(closed.U(x), 2), rtol=1e-7)


def test_mobility_entropy_saturating_closed_form():
    mob = Mobility.saturating(1.0)
    e = Energy.mobility_entropy(mob)
    r = np.array([0.2, 1.0, 5.0])
    np.testing.assert_allclose(e.d2U(r) * mob(r), 1.0)
    np.testing.assert_allclose(e.H(r), mob(r))


def test_functional_outside_range_is_infinite():
    e = Energy.entropy(Mobility.logistic(1.0))
    assert e.functional(np.array([0.5, 1.2])) == np.inf
    assert e.functional(np.array([-0.1, 0.5])) == np.inf


def test_load_spec():
    mob, energy, d = load_spec({"mobility": {"kind": "power_law", "alpha": 1.0},
                                "energy": {"kind": "pressure_power", "gamma": 0.5}, "dimension": 2})
    assert d == 2 and energy.pressure_power == (1.0, 0.5)
    assert check_gmc(energy).holds


# --- GMC ----------------------------------------------------------------------


def test_gmc_examples():
    r = Mobility.power_law(1.0)
    assert check_gmc(Energy.pressure_power(r, 0.5, 1.0, 2)).holds
    assert not check_gmc(Energy.pressure_power(r, 0.4, 1.0, 2)).holds
    assert check_gmc(Energy.entropy(r, 3)).holds


def test_gmc_numeric_path_matches_rule_on_a_small_sweep():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for a in (0.3, 0.7, 1.0):
            mob = Mobility.power_law(a)
            for g in (0.4, 0.8, 1.5):
                for d in (1, 2, 3):
                    if abs(g - (1 - a / d)) < 1e-12:
                        continue
                    e = numeric_energy(mob, lambda r, g=g: g * r ** (g - 1), d)
                    assert check_gmc(e, samples=2000).holds == (g >= 1 - a / d), (a, g, d)


def test_gmc_linear_combination():
    rng = np.random.default_rng(3)
    mob = Mobility.power_law(0.6)
    for _ in range(10):
        d = int(rng.integers(1, 4))
        g1, g2 = rng.uniform(0.2, 2.0, 2)
        e1 = Energy.pressure_power(mob, g1, 1.0, d)
        e2 = Energy.pressure_power(mob, g2, 1.0, d)
        if check_gmc(e1).holds and check_gmc(e2).holds:
            w1, w2 = rng.uniform(0, 3, 2)
            assert check_gmc(Energy.combination([(w1, e1), (w2, e2)])).holds


def test_gmc_shift_property():
    base = Mobility.power_law(0.5)
    for shift in (0.1, 1.0, 10.0):
        mob = Mobility.shifted(base, shift)
        for g, d in ((1.0, 2), (1.5, 3)):
            assert check_gmc(Energy.pressure_power(base, g, 1.0, d)).holds
            e = numeric_energy(mob, lambda r, g=g: g * r ** (g - 1), d)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                assert check_gmc(e, samples=3000).holds


def test_gmc_in_one_dimension_is_convexity_of_u():
    mob = Mobility.saturating(1.0)
    r = sample_grid(np.inf, 2000)
    for dP in (lambda z: 1.0 + 0 * z, lambda z: 2 * z, lambda z: -0.1 + 0 * z, lambda z: np.cos(z)):
        e = numeric_energy(mob, dP, 1)
        convex = bool(np.all(e.d2U(r) >= -1e-12))
        if convex:
            assert check_gmc(e, samples=2000).holds
        else:
            assert not check_gmc(e, samples=2000).holds


def test_gmc_constant_mobility_is_convexity_of_u():
    mob = Mobility.constant(2.0)
    for dP, convex in ((lambda z: 2.0 + 0 * z, True), (lambda z: 2.0 * np.cos(z), False)):
        e = numeric_energy(mob, dP, 1)
        for d in (1, 2, 5):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                assert check_gmc(e, samples=2000, dimension=d).holds == convex


def test_gmc_case_b_logistic_entropy():
    mob = Mobility.logistic(1.0)
    e = Energy.mobility_entropy(mob, 2)
    v = check_gmc(e)
    assert v.holds


def test_gmc_threshold_mismatch():
    e = Energy.entropy(Mobility.logistic(1.0))
    with pytest.raises(IncompatibleThreshold):
        check_gmc(e, mobility=Mobility.logistic(2.0))


def test_gmc_sufficient_criterion():
    mob = Mobility.power_law(1.0)
    assert check_gmc_sufficient(Energy.pressure_power(mob, 0.6, 1.0, 2))
    assert not check_gmc_sufficient(Energy.pressure_power(mob, 0.4, 1.0, 2))
    with pytest.raises(CaseBUnsupported):
        check_gmc_sufficient(Energy.entropy(Mobility.logistic(1.0)))


# --- minimal pressure and tail constant ---------------------------------------


def test_minimal_pressure_power_law_exponent():
    for a, d in ((1.0, 2), (0.5, 3)):
        e = minimal_pressure(Mobility.power_law(a), d)
        assert e.pressure_power[1] == pytest.approx(1 - a / d)
        assert check_gmc(e).holds


def test_minimal_pressure_constant_mobility_is_identity():
    e = minimal_pressure(Mobility.constant(1.0), 2)
    np.testing.assert_allclose(e.P(np.array([0.5, 2.0])), [0.5, 2.0])


def test_minimal_pressure_saturating_against_quad():
    mob = Mobility.saturating(1.0)
    e = minimal_pressure(mob, 2)
    for r in (0.5, 1.0, 2.0):
        ref, _ = integrate.quad(lambda z: (z / (1 + z)) ** -0.5, 0, r, epsabs=1e-13, epsrel=1e-12)
        assert float(e.P(np.array([r]))[0]) == pytest.approx(ref, rel=1e-9)
    # frozen values from scipy.integrate.quad
    np.testing.assert_allclose(e.P(np.array([0.5, 1.0, 2.0])), [1.52450435, 2.29558715, 3.59570558], rtol=1e-8)
    assert check_gmc(e, samples=3000).holds


def test_minimal_pressure_errors():
    with pytest.raises(DimensionOne):
        minimal_pressure(Mobility.power_law(1.0), 1)
    with pytest.raises(CaseBUnsupported):
        minimal_pressure(Mobility.logistic(1.0), 2)


def test_finiteness_constant():
    assert finiteness_constant(Mobility.power_law(1.0), 2, 1.0) == pytest.approx(2.0)
    assert finiteness_constant(Mobility.power_law(0.5), 2, 1.0) == np.inf
    assert finiteness_constant(Mobility.power_law(0.4), 2, 1.0) == np.inf
    assert np.isfinite(finiteness_constant(Mobility.power_law(0.6), 2, 1.0))
    assert finiteness_constant(Mobility.saturating(1.0), 2, 1.0) == np.inf
    # non-power mobility with power tail: m = r + sqrt(r) behaves like r at infinity
    tab = Mobility.shifted(Mobility.power_law(1.0), 1.0)
    ref, _ = integrate.quad(lambda z: (z**1.5 * (z + 1)) ** -0.5, 1, np.inf)
    assert finiteness_constant(tab, 2, 1.0) == pytest.approx(ref / 2, rel=1e-7)

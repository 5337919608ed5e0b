import numpy as np
import pytest

from mobiflow.quadrature import cumulative_integral, gauss_segments, integrate, integrate_from_singular


def test_gauss_segments_exact_for_polynomials():
    vals = gauss_segments(lambda x: x**19, np.array([0.0, 1.0]), np.array([1.0, 2.0]))
    np.testing.assert_allclose(vals, [1 / 20, (2**20 - 1) / 20], rtol=1e-13)


@pytest.mark.parametrize("p", [-0.5, -0.9, 0.3])
def test_integrable_power_singularity(p):
    val = integrate_from_singular(lambda x: x**p, 2.0, "left")
    assert val == pytest.approx(2.0 ** (p + 1) / (p + 1), rel=1e-9)


def test_non_integrable_singularity_is_infinite():
    assert integrate_from_singular(lambda x: 1 / x, 1.0, "left") == np.inf
    assert integrate_from_singular(lambda x: -(x**-1.5), 1.0, "left") == -np.inf


def test_right_singular_endpoint():
    # int_0^1 (1 - x)^(-1/2) dx = 2
    assert integrate(lambda x: (1 - x) ** -0.5, 0.0, 1.0, singular_hi=True) == pytest.approx(2.0, rel=1e-10)
    assert integrate(lambda x: x**-0.5 * (1 - x) ** -0.5, 0.0, 1.0, True, True) == pytest.approx(np.pi, rel=1e-9)


def test_cumulative_integral_from_zero_and_from_base():
    r = np.array([0.0, 0.25, 1.0, 4.0])
    np.testing.assert_allclose(cumulative_integral(lambda z: 0.5 * z**-0.5, r), np.sqrt(r), rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(cumulative_integral(lambda z: 1 / z, r[1:], base=1.0), np.log(r[1:]), atol=1e-12)
    # int_1^0 of sqrt-singular integrand
    val = cumulative_integral(lambda z: 0.5 * z**-0.5, np.array([0.0]), base=1.0)
    assert val[0] == pytest.approx(-1.0, rel=1e-10)


def test_cumulative_integral_near_threshold():
    r = np.array([0.5, 0.99, 1.0 - 1e-8])
    got = cumulative_integral(lambda z: (1 - z) ** -0.5, r, singular_hi=1.0)
    np.testing.assert_allclose(got, 2 - 2 * np.sqrt(1 - r), rtol=1e-10)

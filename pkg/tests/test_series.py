import math

import numpy as np
import pytest

from defsim import series
from defsim.series import Series, SeriesSingularity, conv, derive, eval_at, friction_coeff, recip


def test_conv_hand_value():
    assert conv([1.0, 2.0, 3.0], [4.0, 5.0, 6.0], 2) == 28.0


def test_conv_delta_identity():
    rng = np.random.default_rng(0)
    y = rng.normal(size=6)
    delta = np.zeros(6)
    delta[0] = 1.0
    for k in range(6):
        assert conv(delta, y, k) == pytest.approx(y[k])


def test_conv_symmetry():
    rng = np.random.default_rng(1)
    for _ in range(50):
        x, y = rng.normal(size=5), rng.normal(size=5)
        for k in range(5):
            assert conv(x, y, k) == pytest.approx(conv(y, x, k), rel=1e-12, abs=1e-12)


def test_recip_linear():
    r = recip(Series([2.0, 4.0]))
    np.testing.assert_allclose(r.coeffs, [0.5, -1.0])


def test_recip_of_one():
    r = recip(Series([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(r.coeffs, [1.0, 0.0, 0.0])


def test_recip_defining_identity():
    rng = np.random.default_rng(2)
    for _ in range(100):
        c = rng.normal(size=5)
        c[0] = rng.choice([-1, 1]) * rng.uniform(0.5, 2.0)
        r = recip(c)
        for k in range(5):
            expect = 1.0 if k == 0 else 0.0
            assert conv(c, r, k) == pytest.approx(expect, abs=1e-10)


def test_recip_zero_leading_raises():
    with pytest.raises(SeriesSingularity):
        recip([0.0, 1.0])


def test_recip_involution():
    rng = np.random.default_rng(3)
    for _ in range(50):
        c = rng.normal(size=6)
        c[0] = 1.0 + rng.uniform(0, 1)
        np.testing.assert_allclose(recip(recip(c)).coeffs, c, rtol=1e-12, atol=1e-12)


def test_derive_hand_value():
    np.testing.assert_allclose(derive([1.0, 1.0, 1.0]).coeffs, [1.0, 2.0, 0.0])


def test_derive_constant_is_zero():
    np.testing.assert_allclose(derive([7.0, 0.0, 0.0, 0.0]).coeffs, np.zeros(4))


def test_derive_exponential_shifts():
    exp = np.array([1.0, 1.0, 0.5, 1.0 / 6.0])
    d = derive(exp).coeffs
    np.testing.assert_allclose(d[:3], exp[:3])
    assert d[3] == 0.0


def test_eval_at_origin_and_constant():
    assert eval_at([5.0, 1.0, 2.0], 0.0) == 5.0
    assert eval_at([300e3, 0.0, 0.0], 120.0) == 300e3


def test_eval_hand_value():
    assert eval_at([1.0, 2.0, 3.0], 0.1) == pytest.approx(1.23, rel=1e-15)


def test_eval_reproduces_polynomial():
    rng = np.random.default_rng(4)
    c = rng.normal(size=6)
    for t in rng.uniform(-1, 1, size=10):
        direct = sum(ci * t**i for i, ci in enumerate(c))
        assert eval_at(c, t) == pytest.approx(direct, rel=1e-12, abs=1e-12)


def test_ring_properties_low_order():
    """Bilinearity, commutativity and associativity up to truncation, K <= 4."""
    rng = np.random.default_rng(5)

    def series_mul(x, y):
        return np.array([conv(x, y, k) for k in range(len(x))])

    for _ in range(200):
        n = rng.integers(2, 6)
        x, y, z = rng.normal(size=(3, n))
        a, b = rng.normal(size=2)
        for k in range(n):
            assert conv(a * x + b * y, z, k) == pytest.approx(
                a * conv(x, z, k) + b * conv(y, z, k), rel=1e-10, abs=1e-10
            )
        np.testing.assert_allclose(
            series_mul(series_mul(x, y), z),
            series_mul(x, series_mul(y, z)),
            rtol=1e-10,
            atol=1e-10,
        )


def test_friction_zero_flow():
    m = Series([0.0, 0.0, 0.0])
    pi = Series([3e5, 10.0, 1.0])
    for k in range(3):
        assert friction_coeff(m, pi, 0.0, k) == 0.0


def test_friction_constant_series():
    assert friction_coeff(Series([2.0, 0.0]), Series([4.0, 0.0]), 1.0, 0) == pytest.approx(1.0)


def test_friction_hand_convolution():
    assert friction_coeff(Series([1.0, 1.0]), Series([1.0, 0.0]), 1.0, 1) == pytest.approx(2.0)


def test_friction_negative_sign():
    # m(t) = -2 constant: m|m| = -4, over pi = 4 -> -1
    assert friction_coeff(Series([-2.0, 0.0]), Series([4.0, 0.0]), -1.0, 0) == pytest.approx(-1.0)


def test_friction_matches_divided_differences():
    """Numerical Taylor coefficients of m|m|/pi by central divided differences."""
    rng = np.random.default_rng(6)
    for _ in range(20):
        cm = rng.normal(size=4)
        cm[0] = rng.choice([-1, 1]) * rng.uniform(1.0, 2.0)
        cpi = rng.normal(size=4)
        cpi[0] = rng.uniform(2.0, 4.0)

        def f(t):
            m = eval_at(cm, t)
            pi = eval_at(cpi, t)
            return m * abs(m) / pi

        # 5-point stencils at h chosen for ~1e-8 accuracy on these scales
        h = 1e-3
        ts = np.array([-2, -1, 0, 1, 2]) * h
        vals = np.array([f(t) for t in ts])
        d0 = f(0.0)
        d1 = (vals[0] - 8 * vals[1] + 8 * vals[3] - vals[4]) / (12 * h)
        d2 = (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]) / (
            12 * h * h
        )
        expected = [d0, d1, d2 / 2.0]
        for k in range(3):
            got = friction_coeff(Series(cm), Series(cpi), cm[0], k)
            assert got == pytest.approx(expected[k], rel=1e-6, abs=1e-6)


def test_friction_requires_positive_pressure():
    with pytest.raises(SeriesSingularity):
        friction_coeff(Series([1.0]), Series([-1.0]), 1.0, 0)


def test_series_constant_builder():
    s = Series.constant(3.5, order=4, unit="Pa")
    assert s.coeffs.tolist() == [3.5, 0, 0, 0, 0]
    assert s.order == 4 and s.unit == "Pa"

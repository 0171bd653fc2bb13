"""Exact-calculus and sampling checks for the bump density family."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import polynomial as npoly
from numpy.testing import assert_allclose
from scipy.integrate import quad

from doslab.disorder import (
    SingleSiteDensity,
    density_eval,
    l1_norm_of_derivative,
    sample,
    sample_tilted,
)
from doslab.quadrature import panel_rule


def gl_integral(f, n_nodes=100, n_panels=100):
    # 1e4-point composite Gauss-Legendre on (0, 1)
    x, w = panel_rule(0.0, 1.0, n_nodes, n_panels)
    return float(np.sum(f(x) * w))


def test_normalization_is_exact():
    for p in range(1, 7):
        rho = SingleSiteDensity(p)
        assert abs(gl_integral(lambda x: rho.eval(x)) - 1.0) < 1e-12


def test_frozen_point_values():
    rho1 = SingleSiteDensity(1)
    assert rho1.eval(0.5) == pytest.approx(1.5, abs=1e-14)
    assert rho1.l1_norm(1) == pytest.approx(3.0, abs=1e-12)
    rho3 = SingleSiteDensity(3)
    assert rho3.eval(0.5, order=1) == pytest.approx(0.0, abs=1e-12)
    assert rho3.sup_derivative(0) == pytest.approx(140.0 / 64.0, rel=1e-12)


def test_derivative_integrals_vanish():
    # integral of rho^(j) over the support is 1 at j=0 and 0 for 1 <= j <= m
    for p in (2, 3, 4, 5):
        rho = SingleSiteDensity(p)
        for j in range(rho.continuity_order + 1):
            val = gl_integral(lambda x: rho.eval(x, j))
            assert abs(val - (1.0 if j == 0 else 0.0)) < 1e-10, (p, j)


def test_zero_extension_is_continuous():
    rho = SingleSiteDensity(3)
    for j in range(rho.continuity_order + 1):
        assert rho.eval(0.0, j) == 0.0
        assert rho.eval(1.0, j) == 0.0
        assert rho.eval(-0.3, j) == 0.0
        assert rho.eval(1.7, j) == 0.0
    # order p keeps a one-sided value at the edge
    assert rho.eval(0.0, order=3) != 0.0


def test_derivative_matches_finite_difference():
    rho = SingleSiteDensity(4)
    xs = np.linspace(0.05, 0.95, 19)
    h = 1e-6
    for j in range(1, 4):
        fd = (rho.eval(xs + h, j - 1) - rho.eval(xs - h, j - 1)) / (2 * h)
        assert_allclose(rho.eval(xs, j), fd, rtol=1e-5, atol=1e-4)


def test_cdf_exact_and_monotone():
    rho = SingleSiteDensity(2)
    xs = np.linspace(-0.2, 1.2, 57)
    c = rho.cdf(xs)
    assert c[0] == 0.0
    assert c[-1] == pytest.approx(1.0, abs=1e-14)
    assert np.all(np.diff(c) >= -1e-15)
    h = 1e-6
    mid = np.linspace(0.1, 0.9, 9)
    assert_allclose((rho.cdf(mid + h) - rho.cdf(mid - h)) / (2 * h),
                    rho.eval(mid), rtol=1e-6)


def sign_change_points(f, n_grid=4001):
    # locate the kinks of |f| by bisecting sign changes on a dense grid
    from scipy.optimize import brentq

    xs = np.linspace(0.0, 1.0, n_grid)
    vals = f(xs)
    idx = np.where(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    return [brentq(f, xs[i], xs[i + 1]) for i in idx]


def test_l1_norms_match_adaptive_quadrature():
    for p in (2, 3, 4):
        rho = SingleSiteDensity(p)
        for j in range(1, p + 1):
            kinks = sign_change_points(lambda t: rho.eval(t, j))
            ref, err = quad(
                lambda t: abs(rho.eval(t, j)), 0.0, 1.0,
                points=kinks, limit=200,
            )
            assert err < 1e-9
            assert_allclose(rho.l1_norm(j), ref, rtol=1e-8, err_msg=f"p={p} j={j}")


def test_sup_derivative_dominates_dense_grid():
    rho = SingleSiteDensity(5)
    xs = np.linspace(0.0, 1.0, 100001)
    for j in range(0, 6):
        grid_max = np.max(np.abs(rho.eval(xs, j)))
        sup = rho.sup_derivative(j)
        assert grid_max <= sup + 1e-9
        assert grid_max > 0.999 * sup


def test_derivative_sup_bound_covers_continuous_orders():
    rho = SingleSiteDensity(3)
    expect = max(rho.sup_derivative(j) for j in range(3))
    assert rho.derivative_sup_bound() == expect


def test_sampler_moments_and_support():
    rho = SingleSiteDensity(2)
    rng = np.random.default_rng(915)
    x = rho.sample(rng, size=20000)
    assert np.all((x > 0.0) & (x < 1.0))
    sigma = math.sqrt(rho.variance())
    assert abs(x.mean() - 0.5) < 4 * sigma / math.sqrt(x.size)
    assert abs(x.var() - rho.variance()) < 4 * rho.variance() / math.sqrt(x.size)


def test_sampler_matches_cdf():
    rho = SingleSiteDensity(3)
    rng = np.random.default_rng(62)
    n = 10000
    x = np.sort(rho.sample(rng, size=n))
    ecdf = np.arange(1, n + 1) / n
    ks = np.max(np.abs(ecdf - rho.cdf(x)))
    assert ks < 1.63 / math.sqrt(n)  # 1% KS band, fixed seed


def test_sampling_is_deterministic():
    rho = SingleSiteDensity(2)
    a = rho.sample(np.random.default_rng(7), size=64)
    b = rho.sample(np.random.default_rng(7), size=64)
    assert np.array_equal(a, b)
    xa, sa, wa = sample_tilted(rho, 1, np.random.default_rng(9), size=32)
    xb, sb, wb = sample_tilted(rho, 1, np.random.default_rng(9), size=32)
    assert np.array_equal(xa, xb) and np.array_equal(sa, sb) and wa == wb


def exact_moment_against_derivative(rho, j, k):
    # integral of x^k rho^(j)(x) dx via exact polynomial integration
    poly = rho._derivs[j]
    xk = np.zeros(k + 1)
    xk[k] = 1.0
    prod = npoly.polymul(poly, xk)
    anti = npoly.polyint(prod)
    return float(npoly.polyval(1.0, anti) - npoly.polyval(0.0, anti))


def test_tilted_sampling_is_unbiased():
    rho = SingleSiteDensity(3)
    rng = np.random.default_rng(2718)
    n = 20000
    for j in (1, 2):
        x, sgn, w = sample_tilted(rho, j, rng, size=n)
        assert w == pytest.approx(rho.l1_norm(j), rel=1e-12)
        assert set(np.unique(sgn)) <= {-1.0, 1.0}
        for k in (0, 1, 2):
            vals = w * sgn * x**k
            target = exact_moment_against_derivative(rho, j, k)
            stderr = vals.std(ddof=1) / math.sqrt(n)
            assert abs(vals.mean() - target) < 4 * stderr, (j, k)


def test_tilted_first_moment_frozen():
    # integrating x against rho' gives -1 for every p
    for p in (2, 3, 4):
        assert exact_moment_against_derivative(SingleSiteDensity(p), 1, 1) == \
            pytest.approx(-1.0, abs=1e-12)


def test_fisher_information_finite_for_p_at_least_two():
    rho = SingleSiteDensity(2)
    val, err = quad(lambda t: rho.eval(t, 1) ** 2 / rho.eval(t), 0.0, 1.0,
                    points=[0.5], limit=200)
    assert err < 1e-8
    assert val == pytest.approx(40.0, rel=1e-9)  # p^2 c_p (B(p-1,p-1) - 4B(p,p)) = 40
    info3, _ = quad(lambda t: SingleSiteDensity(3).eval(t, 1) ** 2
                    / SingleSiteDensity(3).eval(t), 0.0, 1.0, limit=200)
    assert np.isfinite(info3)


def test_log_derivative_identities():
    rho = SingleSiteDensity(3)
    xs = np.linspace(0.07, 0.93, 25)
    assert_allclose(rho.log_derivative(xs), rho.eval(xs, 1) / rho.eval(xs), rtol=1e-10)
    got = rho.log_curvature(xs)
    want = rho.eval(xs, 2) / rho.eval(xs) - (rho.eval(xs, 1) / rho.eval(xs)) ** 2
    assert_allclose(got, want, rtol=1e-9)


def test_invalid_arguments_are_rejected():
    with pytest.raises(ValueError):
        SingleSiteDensity(0)
    with pytest.raises(ValueError):
        SingleSiteDensity(2).eval(0.5, order=3)
    with pytest.raises(ValueError):
        SingleSiteDensity(3).tilted(0)
    with pytest.raises(ValueError):
        SingleSiteDensity(3).tilted(3)  # order p is no longer continuous
    with pytest.raises(ValueError):
        l1_norm_of_derivative(SingleSiteDensity(2), 5)


def test_from_continuity_order():
    rho = SingleSiteDensity.from_continuity_order(2)
    assert rho.p == 3 and rho.continuity_order == 2


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=1, max_value=5),
       st.floats(min_value=-0.5, max_value=1.5, allow_nan=False))
def test_density_nonnegative_and_bounded(p, x):
    rho = SingleSiteDensity(p)
    v = density_eval(rho, 0, x)
    assert v >= 0.0
    assert v <= rho.sup_derivative(0) + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=1, max_value=5),
       st.floats(min_value=0.0, max_value=1.0, allow_nan=False))
def test_density_is_symmetric(p, x):
    rho = SingleSiteDensity(p)
    assert_allclose(rho.eval(x), rho.eval(1.0 - x), rtol=0, atol=1e-9)


def test_flat_sample_alias():
    rho = SingleSiteDensity(2)
    v = sample(rho, np.random.default_rng(4))
    assert isinstance(v, float) and 0.0 < v < 1.0

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from logkg.experiments import random_smooth_field
from logkg.radial import (
    STRAUSS_CONSTANT, FieldError, RadialGrid, dilate, gn_ratio, grad_l2_norm_sq, h1_norm_sq,
    integrate_volume, interpolate, l2_norm_sq, lp_norm, read_field_csv, strauss_ratio,
    write_field_csv,
)

PI32 = math.pi ** 1.5


def gauss(grid, s=1.0, c=1.0):
    return grid.sample(lambda r: c * np.exp(-r ** 2 / (2 * s * s)))


# -- grid and field ----------------------------------------------------------

def test_grid_validation():
    with pytest.raises(FieldError):
        RadialGrid(-1.0, 100)
    with pytest.raises(FieldError):
        RadialGrid(1.0, 4)
    g = RadialGrid(10.0, 101)
    assert g.r[0] == 0.0 and g.r[-1] == 10.0 and g.r.size == 102


def test_field_rejects_wrong_shape_and_nan():
    g = RadialGrid(1.0, 16)
    with pytest.raises(FieldError):
        g.field(np.zeros(5))
    vals = np.zeros(17)
    vals[3] = np.nan
    with pytest.raises(FieldError):
        g.field(vals)


def test_from_nodes_roundtrip_and_nonuniform():
    g = RadialGrid(5.0, 40)
    assert RadialGrid.from_nodes(g.r) == g
    r = g.r.copy()
    r[5] += 0.01
    with pytest.raises(FieldError):
        RadialGrid.from_nodes(r)


# -- quadrature --------------------------------------------------------------

@pytest.mark.parametrize("n", [400, 401])
@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_line_rule_exact_for_low_degree(n, k):
    g = RadialGrid(7.0, n)
    exact = 7.0 ** (k + 1) / (k + 1)
    assert abs(g.weights @ g.r ** k - exact) <= 1e-12 * exact


@pytest.mark.parametrize("k", [0, 1])
def test_volume_quadrature_exact_for_1_and_r(k):
    # r^2 f(r) is a polynomial of degree <= 3, integrated exactly by Simpson
    g = RadialGrid(3.0, 300)
    f = g.field(g.r ** k)
    exact = 4 * math.pi * 3.0 ** (k + 3) / (k + 3)
    assert abs(integrate_volume(f) - exact) <= 1e-12 * exact


def test_volume_quadrature_r_squared_is_fourth_order():
    errs = []
    for n in (100, 200):
        g = RadialGrid(3.0, n)
        exact = 4 * math.pi * 3.0 ** 5 / 5
        errs.append(abs(integrate_volume(g.field(g.r ** 2)) - exact) / exact)
    assert errs[1] < 1e-8
    assert 14 < errs[0] / errs[1] < 18


def test_unit_ball_volume():
    g = RadialGrid(2.0, 2000)
    ind = g.field((g.r <= 1.0 + 1e-12).astype(float))
    assert integrate_volume(ind) == pytest.approx(4 * math.pi / 3, rel=5e-3)


def test_gaussian_integral(grid):
    f = grid.sample(lambda r: np.exp(-r ** 2))
    # independent check: adaptive quadrature of the radial integrand
    from scipy.integrate import quad
    oracle = 4 * math.pi * quad(lambda r: r * r * math.exp(-r * r), 0, np.inf, epsabs=1e-14)[0]
    assert oracle == pytest.approx(PI32, rel=1e-12)
    assert integrate_volume(f) == pytest.approx(PI32, rel=1e-10)


def test_zero_field(grid):
    z = grid.zeros()
    assert integrate_volume(z) == 0.0
    assert l2_norm_sq(z) == grad_l2_norm_sq(z) == h1_norm_sq(z) == 0.0
    assert lp_norm(z, 3.0) == 0.0


# -- norms -------------------------------------------------------------------

def test_gaussian_norms(grid):
    u = gauss(grid)
    assert l2_norm_sq(u) == pytest.approx(PI32, rel=1e-10)
    assert grad_l2_norm_sq(u) == pytest.approx(1.5 * PI32, rel=1e-5)
    for a in (2.5, 3.0, 4.0):
        assert lp_norm(u, a) == pytest.approx((2 * math.pi / a) ** (1.5 / a), rel=1e-10)


def test_h1_additivity(grid, rng):
    u = random_smooth_field(grid, rng)
    assert h1_norm_sq(u) == l2_norm_sq(u) + grad_l2_norm_sq(u)


@settings(max_examples=25, deadline=None)
@given(c=st.floats(min_value=-50, max_value=50).filter(lambda x: abs(x) > 1e-3))
def test_norm_homogeneity(c):
    g = RadialGrid(10.0, 500)
    u = gauss(g)
    assert l2_norm_sq(u * c) == pytest.approx(c * c * l2_norm_sq(u), rel=1e-13)
    assert grad_l2_norm_sq(u * c) == pytest.approx(c * c * grad_l2_norm_sq(u), rel=1e-13)
    assert lp_norm(u * c, 3.5) == pytest.approx(abs(c) * lp_norm(u, 3.5), rel=1e-13)


# -- dilation ----------------------------------------------------------------

def test_dilate_identity_exact(grid, rng):
    u = random_smooth_field(grid, rng)
    assert np.array_equal(dilate(u, 1.0).values, u.values)


def test_dilate_rejects_nonpositive(grid):
    with pytest.raises(FieldError):
        dilate(gauss(grid), 0.0)
    with pytest.raises(FieldError):
        dilate(gauss(grid), -2.0)


def test_interpolation_is_cubic_exact():
    g = RadialGrid(4.0, 64)
    u = g.field(1 + g.r ** 2 - 0.1 * g.r ** 3)
    x = np.linspace(0.3, 3.5, 37)
    assert np.allclose(interpolate(u, x), 1 + x ** 2 - 0.1 * x ** 3, atol=1e-12)
    assert interpolate(u, np.array([4.5]))[0] == 0.0


def test_dilation_scaling_random_fields(grid):
    rng = np.random.default_rng(7)
    for _ in range(20):
        u = random_smooth_field(grid, rng)
        l2, gr = l2_norm_sq(u), grad_l2_norm_sq(u)
        for b in (0.5, 0.8, 1.25, 2.0):
            w = dilate(u, b)
            assert abs(l2_norm_sq(w) / (b ** 3 * l2) - 1) <= 1e-3
            assert abs(grad_l2_norm_sq(w) / (b * gr) - 1) <= 1e-3


# -- embedding diagnostics ---------------------------------------------------

def test_strauss_constant_value():
    assert STRAUSS_CONSTANT == pytest.approx(0.28209479177387814, rel=1e-15)


def test_strauss_gaussian(grid):
    u = gauss(grid)
    expected = math.exp(-0.5) / math.sqrt(2.5 * PI32)
    assert expected == pytest.approx(0.16256, abs=1e-5)
    assert strauss_ratio(u) == pytest.approx(expected, rel=1e-5)


def test_strauss_scalar_invariance_exact(grid, rng):
    u = random_smooth_field(grid, rng)
    s = strauss_ratio(u)
    for c in (-3.0, 0.5, 2.0, 1e3):
        assert strauss_ratio(u * c) == pytest.approx(s, rel=4e-16, abs=0)


def test_strauss_bound_random_fields(grid, rng):
    for _ in range(50):
        assert strauss_ratio(random_smooth_field(grid, rng)) <= STRAUSS_CONSTANT


def test_ratios_reject_zero(grid):
    with pytest.raises(FieldError):
        strauss_ratio(grid.zeros())
    with pytest.raises(FieldError):
        gn_ratio(grid.zeros(), 3.0)


@pytest.mark.parametrize("alpha", [2.0, 6.0, 7.0])
def test_gn_rejects_bad_exponent(grid, alpha):
    with pytest.raises(FieldError):
        gn_ratio(gauss(grid), alpha)


def test_gn_gaussian_closed_form(grid):
    u = gauss(grid)
    for a in (2.5, 3.0, 4.0, 5.0):
        th = 3 * (a - 2) / (2 * a)
        exact = (2 * math.pi / a) ** (1.5 / a) / (PI32 ** ((1 - th) / 2) * (1.5 * PI32) ** (th / 2))
        assert gn_ratio(u, a) == pytest.approx(exact, rel=1e-5)


def test_gn_scalar_invariance(grid, rng):
    u = random_smooth_field(grid, rng)
    g0 = gn_ratio(u, 3.0)
    for c in (-2.0, 0.1, 7.0):
        assert gn_ratio(u * c, 3.0) == pytest.approx(g0, rel=1e-14)


@pytest.mark.parametrize("alpha", [2.5, 3.0, 4.0, 5.0])
def test_gn_dilation_invariance(alpha):
    # wide profile on a fine grid: interpolation and stencil errors stay below 1e-6
    g = RadialGrid(60.0, 12000)
    u = gauss(g, s=3.0)
    g0 = gn_ratio(u, alpha)
    for b in (0.5, 2.0):
        assert abs(gn_ratio(dilate(u, b), alpha) / g0 - 1) <= 1e-6


# -- CSV ---------------------------------------------------------------------

def test_field_csv_roundtrip(tmp_path, grid, rng):
    u = random_smooth_field(grid, rng)
    v = u * -0.5
    p = write_field_csv(tmp_path / "f.csv", u, v)
    u2, v2 = read_field_csv(p)
    assert np.array_equal(u2.values, u.values) and np.array_equal(v2.values, v.values)
    p = write_field_csv(tmp_path / "g.csv", u)
    u3, v3 = read_field_csv(p)
    assert v3 is None and np.array_equal(u3.values, u.values)

import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import trapezoid
from scipy.optimize import brentq
from scipy.signal import argrelmax

from vtransport.diagnostics import DensityTable
from vtransport.ensemble import Gaussian, rng
from vtransport.functionals import constant, double_well, quadratic
from vtransport.oracle import (
    chi2_by_quadrature,
    chi2_gaussian_shift,
    gaussian_kl_shift,
    gibbs_grid_density,
    inverse_cdf_sampler,
    normal_pdf,
    pushforward_density_1d,
    table_cdf,
)

PRIOR = Gaussian([0.0], [2.0])


def test_gibbs_zero_potential_is_prior():
    t = gibbs_grid_density(constant(0.0), 0.5, PRIOR.log_density)
    x = t.axes[0]
    np.testing.assert_allclose(t.density, normal_pdf(x, 0.0, 2.0), rtol=1e-9, atol=1e-14)


def test_gibbs_large_tau_approaches_prior():
    x = np.linspace(-15, 15, 3001)
    t = gibbs_grid_density(double_well(), 1e9, PRIOR.log_density, grid=(x,))
    assert np.max(np.abs(t.density - normal_pdf(x, 0.0, 2.0))) < 1e-6


def test_gibbs_normalised_and_positive():
    t = gibbs_grid_density(double_well(), 0.5, PRIOR.log_density)
    assert abs(trapezoid(t.density, t.axes[0]) - 1.0) < 1e-10
    assert np.all(t.density > 0)
    assert len(t.axes[0]) == 4096


def test_gibbs_double_well_modes():
    t = gibbs_grid_density(double_well(), 0.5, PRIOR.log_density)
    x = t.axes[0]
    peaks = x[argrelmax(t.density)[0]]
    assert len(peaks) == 2
    # stationary points of -g/tau + log p0: -8x(x^2 - 1) - x/4 = 0
    root = brentq(lambda y: -8 * y * (y * y - 1) - y / 4, 0.5, 1.5)
    np.testing.assert_allclose(np.sort(peaks), [-root, root], atol=0.02)


def test_gibbs_constant_shift_invariance():
    a = gibbs_grid_density(double_well(), 0.5, PRIOR.log_density)
    g = double_well()
    shifted = type(g)(lambda x: g.value(x) + 7.5, g.grad, g.hess)
    b = gibbs_grid_density(shifted, 0.5, PRIOR.log_density, grid=a.axes)
    assert np.max(np.abs(a.density - b.density)) < 1e-12


def test_gibbs_2d():
    t = gibbs_grid_density(quadratic(), 1.0, Gaussian([0.0, 0.0], [1.0, 1.0]).log_density, dim=2)
    assert t.density.shape == (512, 512)
    x, y = t.axes
    assert abs(trapezoid(trapezoid(t.density, y, axis=1), x) - 1.0) < 1e-10


def test_gibbs_coverage_failure():
    with pytest.raises(ValueError):
        gibbs_grid_density(constant(0.0), 1.0, PRIOR.log_density, grid=(np.linspace(-1, 1, 101),))
    with pytest.raises(ValueError):
        gibbs_grid_density(constant(0.0), 0.0, PRIOR.log_density)


# --------------------------------------------------------------- sampling
def test_inverse_cdf_ks():
    t = gibbs_grid_density(double_well(), 0.5, PRIOR.log_density)
    n = 10_000
    s = inverse_cdf_sampler(t, n, seed=0)
    assert s.shape == (n, 1)
    res = stats.kstest(s[:, 0], lambda q: table_cdf(t, q))
    assert res.statistic < 1.63 / math.sqrt(n)


def test_inverse_cdf_one_hot():
    x = np.linspace(0, 1, 11)
    d = np.zeros(11)
    d[4] = 1.0
    s = inverse_cdf_sampler(DensityTable((x,), d), 1000, seed=1)
    assert np.all((s >= 0.35) & (s <= 0.45))


def test_inverse_cdf_uniform():
    x = np.linspace(0.05, 0.95, 10)
    s = inverse_cdf_sampler(DensityTable((x,), np.ones(10)), 10_000, seed=2)
    assert stats.kstest(s[:, 0], "uniform").pvalue > 0.001


def test_inverse_cdf_gaussian_variance():
    x = np.linspace(-8, 8, 4096)
    n = 20_000
    s = inverse_cdf_sampler(DensityTable((x,), normal_pdf(x)), n, seed=3)
    assert abs(s.var() - 1.0) < 3 * math.sqrt(2 / n)


def test_inverse_cdf_rejects_2d():
    with pytest.raises(ValueError):
        inverse_cdf_sampler(DensityTable((np.arange(3.0), np.arange(3.0)), np.ones((3, 3))), 5, 0)


# -------------------------------------------------------------- pushforward
def _lin(y):
    return 0.1 * y


def _lin_h(y):
    return 0.1


def test_pushforward_t0():
    x = np.linspace(-2, 2, 5)
    np.testing.assert_array_equal(pushforward_density_1d(normal_pdf, _lin, _lin_h, 0.0, x), normal_pdf(x))


def test_pushforward_gaussian_value():
    v = pushforward_density_1d(normal_pdf, _lin, _lin_h, 1.0, 0.0)[0]
    assert v == pytest.approx(1 / (1.1 * math.sqrt(2 * math.pi)), abs=1e-12)
    assert v == pytest.approx(0.36267, abs=1e-5)


def test_pushforward_mass_nonlinear():
    # u'(y) = 0.3 sin(y), |u''| <= 0.3
    x = np.linspace(-12, 12, 6001)
    p = pushforward_density_1d(normal_pdf, lambda y: 0.3 * math.sin(y), lambda y: 0.3 * math.cos(y), 1.5, x, hess_bound=0.3)
    assert np.all(p > 0)
    assert abs(trapezoid(p, x) - 1.0) < 1e-6


def test_pushforward_histogram_chi2():
    t = 1.5
    ug = lambda y: 0.3 * np.sin(y)  # noqa: E731
    y = rng(0, 6).standard_normal(1_000_000)
    z = y + t * ug(y)
    edges = np.linspace(-3.5, 3.5, 101)
    counts, _ = np.histogram(z, edges)
    fine = np.linspace(-3.5, 3.5, 100 * 40 + 1)
    dens = pushforward_density_1d(normal_pdf, lambda v: float(ug(v)), lambda v: 0.3 * math.cos(v), t, fine)
    cell = np.array([trapezoid(dens[i * 40:(i + 1) * 40 + 1], fine[i * 40:(i + 1) * 40 + 1]) for i in range(100)])
    expected = cell * len(y)
    stat = np.sum((counts - expected) ** 2 / expected)
    assert stats.chi2.sf(stat, df=99) > 0.001


def test_pushforward_invertibility_check():
    with pytest.raises(ValueError):
        pushforward_density_1d(normal_pdf, _lin, _lin_h, 20.0, [0.0], hess_bound=0.1)


# ------------------------------------------------------------- closed forms
def test_closed_forms():
    assert chi2_gaussian_shift(0.5) == pytest.approx(math.exp(0.25) - 1, rel=1e-15)
    q = chi2_by_quadrature(lambda x: normal_pdf(x, 0.5), normal_pdf, -12, 12)
    assert q == pytest.approx(chi2_gaussian_shift(0.5), abs=1e-9)
    assert gaussian_kl_shift(2.0) == 2.0

"""Brute-force references: grid densities, inverse-CDF sampling, 1D pushforward densities."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from .diagnostics import DensityTable
from .ensemble import STREAM_ORACLE, rng

GRID_1D = 4096
GRID_2D = 512
EDGE_REL = 1e-12
TAIL_MASS = 1e-8


def _as_field(f) -> Callable[[np.ndarray], np.ndarray]:
    fn = getattr(f, "value", f)
    return lambda x: np.asarray(fn(x), float).reshape(-1)


def _normalise(logp: np.ndarray, axes) -> np.ndarray:
    p = np.exp(logp - np.max(logp))
    z = p
    for a in reversed(axes):
        z = trapezoid(z, a, axis=-1)
    return p / float(z)


def _logp_on(axes, g, tau, prior_logpdf):
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    logp = -g(pts) / tau + prior_logpdf(pts)
    return logp.reshape(mesh[0].shape)


def _edge_max(p: np.ndarray) -> float:
    return max(float(np.max(np.take(p, [0, -1], axis=a))) for a in range(p.ndim))


def gibbs_grid_density(
    g,
    tau: float,
    prior_logpdf,
    grid=None,
    dim: int = 1,
    n: int | None = None,
    center=0.0,
    half_width: float = 4.0,
) -> DensityTable:
    """Normalised table of exp(-g/tau) * p0 on a tensor grid.

    ``grid`` is a tuple of axes.  Without it the square box around ``center``
    is widened until the edge values fall below ``1e-12`` of the peak.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    g = _as_field(g)
    lp = _as_field(prior_logpdf)
    if grid is not None:
        axes = tuple(np.asarray(a, float) for a in grid)
        p = _normalise(_logp_on(axes, g, tau, lp), axes)
        extent = np.prod([a[-1] - a[0] for a in axes])
        if _edge_max(p) * extent > TAIL_MASS:
            raise ValueError("grid does not cover the support: edge density too large")
        return DensityTable(axes, p)
    if dim not in (1, 2):
        raise ValueError("grid densities support d = 1 or 2")
    n = n or (GRID_1D if dim == 1 else GRID_2D)
    c = np.broadcast_to(np.asarray(center, float), (dim,))
    w = half_width
    for _ in range(60):
        axes = tuple(np.linspace(ci - w, ci + w, n) for ci in c)
        logp = _logp_on(axes, g, tau, lp)
        p = np.exp(logp - logp.max())
        if _edge_max(p) < EDGE_REL:
            return DensityTable(axes, _normalise(logp, axes))
        w *= 1.5
    raise ValueError("could not find a grid covering the support")


def inverse_cdf_sampler(table: DensityTable, n: int, seed: int, stream: int = STREAM_ORACLE) -> np.ndarray:
    """Draw from the piecewise-constant density with cells centred on the grid points."""
    if len(table.axes) != 1:
        raise ValueError("inverse_cdf_sampler needs a 1D table")
    x = table.axes[0]
    dx = x[1] - x[0]
    mass = np.clip(np.asarray(table.density, float), 0.0, None) * dx
    cdf = np.concatenate([[0.0], np.cumsum(mass)])
    cdf /= cdf[-1]
    u = rng(seed, stream).random(n)
    i = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, len(x) - 1)
    # guard bins of zero mass produced by ties at the boundaries
    frac = np.where(mass[i] > 0, (u - cdf[i]) / np.where(mass[i] > 0, cdf[i + 1] - cdf[i], 1.0), 0.5)
    return (x[i] - 0.5 * dx + np.clip(frac, 0.0, 1.0) * dx)[:, None]


def table_cdf(table: DensityTable, q) -> np.ndarray:
    """CDF of the piecewise-constant law used by :func:`inverse_cdf_sampler`."""
    x = table.axes[0]
    dx = x[1] - x[0]
    mass = np.clip(np.asarray(table.density, float), 0.0, None) * dx
    edges = np.concatenate([x - 0.5 * dx, [x[-1] + 0.5 * dx]])
    cdf = np.concatenate([[0.0], np.cumsum(mass)])
    return np.interp(np.asarray(q, float), edges, cdf / cdf[-1])


def pushforward_density_1d(p, u_grad, u_hess, t: float, x, hess_bound: float | None = None) -> np.ndarray:
    """Density of (y -> y + t u'(y))_# p at the query points ``x``.

    Each preimage solves the monotone equation y + t u'(y) = x; the density is
    p(y) / |1 + t u''(y)|.
    """
    if hess_bound is not None and t * hess_bound >= 1:
        raise ValueError(f"map is not invertible: t * sup|u''| = {t * hess_bound:.3g} >= 1")
    xs = np.atleast_1d(np.asarray(x, float))
    if t == 0:
        return np.asarray(p(xs), float)
    out = np.empty_like(xs)
    for i, xi in enumerate(xs):
        f = lambda y: y + t * float(u_grad(y)) - xi
        a, b = xi - 1.0, xi + 1.0
        while f(a) > 0:
            a -= 2 * (b - a)
        while f(b) < 0:
            b += 2 * (b - a)
        y = brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        jac = 1.0 + t * float(u_hess(y))
        if not jac > 0:
            raise ValueError(f"map is not invertible near y={y:.6g}")
        out[i] = float(p(y)) / jac
    return out


# ---------------------------------------------------------- closed forms
def chi2_gaussian_shift(shift: float, std: float = 1.0) -> float:
    """chi^2(N(m, s^2) || N(0, s^2)) = exp(m^2 / s^2) - 1."""
    return math.expm1((shift / std) ** 2)


def chi2_by_quadrature(p_pdf, q_pdf, lo: float, hi: float, n: int = 20001) -> float:
    """Grid evaluation of int p^2 / q - 1."""
    x = np.linspace(lo, hi, n)
    return float(trapezoid(p_pdf(x) ** 2 / q_pdf(x), x) - 1.0)


def gaussian_kl_shift(shift: float) -> float:
    """KL between unit Gaussians whose means differ by ``shift``."""
    return 0.5 * shift * shift


def normal_pdf(x, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    z = (np.asarray(x, float) - mean) / std
    return np.exp(-0.5 * z * z) / (std * math.sqrt(2 * math.pi))

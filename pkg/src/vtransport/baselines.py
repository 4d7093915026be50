"""Reference samplers: unadjusted Langevin and Stein variational gradient descent."""

from __future__ import annotations

import math

import numpy as np

from .ensemble import Ensemble, NumericalError, ScoreModel
from .kernel import Kernel, median_bandwidth


def _score_at(target: ScoreModel, x: np.ndarray) -> np.ndarray:
    s = np.asarray(target.score(x), float)
    bad = np.flatnonzero(~np.all(np.isfinite(s), axis=1))
    if bad.size:
        raise NumericalError(f"non-finite target score at particle index {int(bad[0])}")
    return s


def ula_step(e: Ensemble, target: ScoreModel, gamma: float, gen: np.random.Generator | None, noise: bool = True) -> Ensemble:
    """z <- z + gamma * score(z) + sqrt(2 gamma) * xi.

    ``gen`` supplies xi; with ``noise=False`` the step is plain gradient
    ascent on log pi and ``gen`` may be None.
    """
    if not (np.isfinite(gamma) and gamma > 0):
        raise ValueError(f"gamma must be positive, got {gamma!r}")
    x = e.positions
    v = gamma * _score_at(target, x)
    if noise:
        v = v + np.sqrt(2.0 * gamma) * gen.standard_normal(x.shape)
    return Ensemble(e.space.exp_map(x, v), e.space, e.seed_lineage)


def svgd_direction(x: np.ndarray, s: np.ndarray, k: Kernel) -> np.ndarray:
    """phi(x_i) = (1/N) sum_j [k(x_j, x_i) s(x_j) + grad_{x_j} k(x_j, x_i)]."""
    n = x.shape[0]
    K = k.gram(x)
    # grad_{x_j} k(x_j, x_i) summed over j is -sum_j grad_{x_i} k(x_i, x_j) for a shift-invariant kernel
    rep = -k.weighted_grad(x, x, np.ones(n))
    return (K @ s + rep) / n


def svgd_bandwidth(e: Ensemble) -> float:
    """Median heuristic: k = exp(-d^2 / (med^2 / log(N+1))) in the h-parametrisation."""
    h = median_bandwidth(e.space, e.positions) / math.sqrt(2.0 * math.log(e.n + 1.0))
    return h if h > 0 else 1.0


def svgd_step(e: Ensemble, target: ScoreModel, k: Kernel, eps: float) -> Ensemble:
    if not (np.isfinite(eps) and eps > 0):
        raise ValueError(f"eps must be positive, got {eps!r}")
    x = e.positions
    phi = svgd_direction(x, _score_at(target, x), k)
    return Ensemble(e.space.exp_map(x, eps * phi), e.space, e.seed_lineage)

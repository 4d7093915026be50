"""Dual witnesses: the scalar fields whose negative gradients move the particles.

A :class:`Witness` always has a batched ``grad``; ``value`` is present only when
the backend knows the field itself (kernel expansions, lifted potentials).
Score-based witnesses for KL-type objectives only know gradients because the
density normaliser of the particle law is unavailable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .ensemble import Ensemble, NumericalError, ScoreModel
from .kernel import Kernel

Field = Callable[[np.ndarray], np.ndarray]

DENSITY_FLOOR = 1e-300


@dataclass(frozen=True)
class Potential:
    """A smooth function g with gradient and (optionally) Hessian, batched over rows."""

    value: Field
    grad: Field
    hess: Field | None = None
    name: str = "custom"


@dataclass
class Witness:
    grad: Field
    value: Field | None = None
    hess: Field | None = None
    # certified Lipschitz bound for grad, when one is known
    hessian_bound: float | None = None
    rkhs_norm: float | None = None
    dual_value: float | None = None
    info: dict = field(default_factory=dict)

    def empirical_hessian_bound(self, points) -> float | None:
        """Largest spectral norm of the Hessian over ``points``."""
        if self.hess is None:
            return None
        H = np.asarray(self.hess(np.atleast_2d(points)))
        if not np.all(np.isfinite(H)):
            raise NumericalError("non-finite witness Hessian")
        return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (H + np.swapaxes(H, -1, -2))))))

    def stepsize_bound(self, points) -> float | None:
        """Lipschitz bound used by the stepsize safeguard (certified if available)."""
        if self.hessian_bound is not None:
            return self.hessian_bound
        return self.empirical_hessian_bound(points)

    def scaled(self, s: float) -> "Witness":
        s = float(s)
        return Witness(
            grad=lambda x: s * self.grad(x),
            value=None if self.value is None else (lambda x: s * self.value(x)),
            hess=None if self.hess is None else (lambda x: s * self.hess(x)),
            hessian_bound=None if self.hessian_bound is None else abs(s) * self.hessian_bound,
            rkhs_norm=None if self.rkhs_norm is None else abs(s) * self.rkhs_norm,
            dual_value=self.dual_value,
            info=dict(self.info, scale=s),
        )


class RepresenterWitness(Witness):
    """f(x) = sum_a c_a k(x, z_a)."""

    def __init__(self, basis, coeffs, kernel: Kernel, *, dual_value=None, info=None):
        self.basis = np.atleast_2d(np.asarray(basis, float))
        self.coeffs = np.asarray(coeffs, float).reshape(-1)
        if self.basis.shape[0] != self.coeffs.shape[0]:
            raise ValueError("basis and coefficient lengths differ")
        self.kernel = kernel
        self.grad = self._grad
        self.value = self._value
        self.hess = self._hess
        self.dual_value = dual_value
        self.info = info or {}

    def _value(self, x):
        return self.kernel.weighted_value(x, self.basis, self.coeffs)

    def _grad(self, x):
        return self.kernel.weighted_grad(x, self.basis, self.coeffs)

    def _hess(self, x):
        return self.kernel.weighted_hess(x, self.basis, self.coeffs)

    @cached_property
    def rkhs_norm(self) -> float:
        q = float(self.coeffs @ self.kernel.weighted_value(self.basis, self.basis, self.coeffs))
        return float(np.sqrt(max(q, 0.0)))

    @cached_property
    def hessian_bound(self) -> float:
        # ||Hess f(x)||_F <= d * C_{K,3} * ||f||_H by Cauchy-Schwarz in H
        return self.kernel.dim * self.kernel.rkhs_bounds().c3 * self.rkhs_norm

    def scaled(self, s: float) -> "RepresenterWitness":
        return RepresenterWitness(
            self.basis, s * self.coeffs, self.kernel, dual_value=self.dual_value, info=dict(self.info, scale=s)
        )


# ---------------------------------------------------------------- witnesses
def mmd_witness(P: Ensemble, Y: Ensemble, k: Kernel) -> RepresenterWitness:
    """Difference of kernel mean embeddings (1/N) sum k(., x_i) - (1/M) sum k(., y_j)."""
    if P.space != Y.space or P.space != k.space:
        raise ValueError("mmd_witness: ensembles and kernel must share one space")
    Z = np.vstack([P.positions, Y.positions])
    c = np.concatenate([np.full(P.n, 1.0 / P.n), np.full(Y.n, -1.0 / Y.n)])
    return RepresenterWitness(Z, c, k, info={"kind": "mmd"})


def lifted_witness(g: Potential) -> Witness:
    """The witness of the linear functional p -> E_p[g] is g itself."""
    return Witness(grad=g.grad, value=g.value, hess=g.hess, info={"kind": "lifted"})


def silverman_bandwidth(e: Ensemble) -> float:
    """Rule-of-thumb isotropic bandwidth from the pooled per-axis spread."""
    x = e.positions
    n, d = x.shape
    if e.space.is_torus:
        ang = 2 * np.pi * x / e.space.period
        R = np.hypot(np.cos(ang).mean(0), np.sin(ang).mean(0))
        sd = np.sqrt(-2 * np.log(np.clip(R, 1e-12, 1.0))) * e.space.period / (2 * np.pi)
    else:
        sd = x.std(axis=0, ddof=1) if n > 1 else np.ones(d)
    s = float(np.mean(sd))
    if not s > 0:
        s = 1.0
    return s * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))


def kde_score(e: Ensemble, k: Kernel, leave_one_out: bool = False) -> ScoreModel:
    """Score of the kernel density estimate sum_i k(x, x_i).

    With ``leave_one_out`` the particle's own kernel bump is removed whenever the
    query coincides exactly with a particle (the self-term otherwise inflates
    the denominator and weakens repulsion at the particles).
    """
    if e.n < 2:
        raise ValueError("kde_score needs at least two particles")
    if k.space != e.space:
        raise ValueError("kernel and ensemble live in different spaces")
    X = e.positions
    ones = np.ones(e.n)
    self_val = float(k.eval(X[0], X[0]))
    index = {row.tobytes(): i for i, row in enumerate(X)} if leave_one_out else None

    def _self_mask(x):
        return np.array([row.tobytes() in index for row in x], dtype=float)

    # one-slot memo: the transport loop asks for score, Jacobian and score again at the same points
    memo = {}

    def _sums(x, with_hess=False):
        x = np.atleast_2d(np.asarray(x, float))
        hit = memo.get("x")
        if hit is not None and hit.shape == x.shape and np.array_equal(hit, x) and (memo["H"] is not None or not with_hess):
            return x, memo["v"], memo["g"], memo["H"]
        H = None
        if with_hess:
            v, g, H = k.value_grad_hess(x, X, ones)
        else:
            v, g = k.value_and_grad(x, X, ones)
        if index is not None:
            mask = _self_mask(x)
            v = v - self_val * mask
            if H is not None:
                # self-term Hessian at zero displacement: diag(psi''(0) psi(0)^{d-1})
                H = H - mask[:, None, None] * k.hess1(X[0], X[0])[None]
        bad = np.flatnonzero(~(v > DENSITY_FLOOR))
        if bad.size:
            raise NumericalError(f"KDE density underflow at query {x[bad[0]].tolist()}")
        memo.update(x=x.copy(), v=v, g=g, H=H)
        return x, v, g, H

    def score(x):
        _, v, g, _ = _sums(x)
        return g / v[:, None]

    def log_density(x):
        _, v, _, _ = _sums(x)
        return np.log(v / (e.n - (1 if index is not None else 0)))

    def jac(x):
        x, v, g, H = _sums(x, with_hess=True)
        s = g / v[:, None]
        return H / v[:, None, None] - s[:, :, None] * s[:, None, :]

    return ScoreModel(score, log_density, jac)


def _sub_jac(a: ScoreModel, b: ScoreModel):
    if a.jac is None or b.jac is None:
        return None
    return lambda x: a.jac(x) - b.jac(x)


def entropy_kl_witness(
    e: Ensemble, g: Potential, tau: float, prior: ScoreModel | None, score_backend: ScoreModel
) -> Witness:
    """Gradient of g + tau * log(p / p0): grad g + tau * (s_p - s_{p0})."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    if prior is None:
        raise ValueError("entropy_kl_witness requires a prior score")

    def grad(x):
        x = np.atleast_2d(x)
        return g.grad(x) + tau * (score_backend.score(x) - prior.score(x))

    hess = None
    dj = _sub_jac(score_backend, prior)
    if dj is not None and g.hess is not None:
        hess = lambda x: g.hess(np.atleast_2d(x)) + tau * dj(np.atleast_2d(x))  # noqa: E731
    return Witness(grad=grad, hess=hess, info={"kind": "entropy_kl", "tau": tau})


def kl_witness(e: Ensemble, target: ScoreModel, score_backend: ScoreModel) -> Witness:
    """Gradient of log(p / target): s_p - s_target."""
    if target is None:
        raise ValueError("kl_witness requires a target score")

    def grad(x):
        x = np.atleast_2d(x)
        return score_backend.score(x) - target.score(x)

    return Witness(grad=grad, hess=_sub_jac(score_backend, target), info={"kind": "kl"})

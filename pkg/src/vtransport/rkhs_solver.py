"""Regularised empirical dual maximisation over a Gaussian RKHS.

Candidate witnesses are restricted to the span of kernel sections on a basis
set Z (particles together with the conjugate's support points), so each solve
is a finite-dimensional concave problem in the coefficient vector c:

* quadratic (chi^2) form: maximise 2 mean_p f - mean_q f^2 - lam ||f||^2,
  a single symmetric linear system;
* exponential form: maximise mean_p f - tau mean_{p0} exp((f - g)/tau) + tau
  - lam ||f||^2, solved by damped Newton with Armijo backtracking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla

from .ensemble import STREAM_BASIS, NumericalError, rng
from .kernel import Kernel
from .witness import Potential, RepresenterWitness

log = logging.getLogger(__name__)

BASIS_CAP = 2048
JITTER_REL = 1e-9
JITTER_RETRIES = 3
EXP_CLIP = 500.0


def default_lambda(n: int) -> float:
    return 1e-3 / np.sqrt(n)


@dataclass(frozen=True)
class QuadraticForm:
    """chi^2 conjugate: F*(f) = E_q[f^2] + 1 (with the linear term doubled)."""

    target_samples: np.ndarray


@dataclass(frozen=True)
class ExpForm:
    """KL-regularised linear conjugate: F*(f) = tau E_{p0} exp((f - g)/tau) - tau."""

    g: Potential
    tau: float
    prior_samples: np.ndarray


@dataclass
class DualProblem:
    sample_points: np.ndarray
    conjugate: QuadraticForm | ExpForm
    lam: float
    basis_cap: int = BASIS_CAP
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sample_points = np.atleast_2d(np.asarray(self.sample_points, float))
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam!r}")
        if isinstance(self.conjugate, ExpForm) and not self.conjugate.tau > 0:
            raise ValueError("tau must be positive")


class HessianBound(NamedTuple):
    certified: float
    empirical: float


# ------------------------------------------------------------------ helpers
def build_basis(parts, cap: int = BASIS_CAP, seed: int = 0) -> np.ndarray:
    Z = np.vstack([np.atleast_2d(p) for p in parts])
    if Z.shape[0] > cap:
        idx = rng(seed, STREAM_BASIS).choice(Z.shape[0], size=cap, replace=False)
        log.info("basis capped: %d -> %d points", Z.shape[0], cap)
        Z = Z[np.sort(idx)]
    return Z


def _jitter0(K: np.ndarray, system: np.ndarray | None = None) -> float:
    # relative to the kernel diagonal, or to the system diagonal when a large lambda dominates it
    t = float(np.trace(K)) / K.shape[0]
    if system is not None:
        t = max(t, float(np.trace(system)) / system.shape[0])
    return JITTER_REL * max(t, 1e-300)


def _factor(M: np.ndarray, base_jitter: float):
    """Cholesky of M + jitter*I, escalating the jitter x10 up to three times."""
    jitter = base_jitter
    eye = np.eye(M.shape[0])
    for _ in range(JITTER_RETRIES + 1):
        try:
            return sla.cho_factor(M + jitter * eye, lower=True, check_finite=False), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(f"system not positive definite after jitter escalation to {jitter / 10:.3g}")


def _solve_refined(A, b, base_jitter, steps: int = 20, tol: float = 1e-12):
    fac, jitter = _factor(A, base_jitter)
    c = sla.cho_solve(fac, b, check_finite=False)
    scale = max(1.0, float(np.max(np.abs(b))))
    for _ in range(steps):
        r = b - A @ c
        if np.max(np.abs(r)) <= tol * scale:
            break
        c = c + sla.cho_solve(fac, r, check_finite=False)
    return c, jitter


# --------------------------------------------------------------- chi-square
def chi2_dual_value(f_p: np.ndarray, f_q: np.ndarray) -> float:
    return float(2.0 * np.mean(f_p) - np.mean(f_q**2) - 1.0)


def solve_chi2(samples_p, samples_q, k: Kernel, lam: float, *, basis_cap: int = BASIS_CAP, seed: int = 0):
    """Maximiser of 2 mean_p f - mean_q f^2 - lam ||f||_H^2; estimates p/q."""
    P = np.atleast_2d(np.asarray(samples_p, float))
    Q = np.atleast_2d(np.asarray(samples_q, float))
    if P.shape[0] < 1 or Q.shape[0] < 1:
        raise ValueError("solve_chi2 needs nonempty sample sets")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    Z = build_basis([P, Q], basis_cap, seed)
    Kzz = k.gram(Z)
    Kzq = k.gram(Z, Q)
    b = k.gram(Z, P).mean(axis=1)
    A = Kzq @ Kzq.T / Q.shape[0] + lam * Kzz
    A = 0.5 * (A + A.T)
    c, jitter = _solve_refined(A, b, _jitter0(Kzz, A))
    kkt = float(np.max(np.abs(A @ c - b)))
    f_p = 2.0 * b @ c  # 2 mean_p f, reusing b = K_Zp 1/n
    f_q = Kzq.T @ c
    dual = float(f_p - np.mean(f_q**2) - 1.0)
    reg = dual - lam * float(c @ Kzz @ c)
    return RepresenterWitness(
        Z,
        c,
        k,
        dual_value=dual,
        info={"kind": "chi2", "kkt_residual": kkt, "jitter": jitter, "lam": lam, "regularized_objective": reg},
    )


# --------------------------------------------------------- exponential form
def _exp_terms(Ky_c, gy, tau):
    a = (Ky_c - gy) / tau
    clipped = bool(np.any(a > EXP_CLIP))
    return np.exp(np.minimum(a, EXP_CLIP)), clipped


def exp_dual_objective_coeffs(c, kx_mean, Ky, gy, Kzz, tau, lam):
    """Regularised exp-form objective as a function of the coefficients."""
    e, _ = _exp_terms(Ky @ c, gy, tau)
    return float(kx_mean @ c - tau * e.mean() + tau - lam * c @ Kzz @ c)


def solve_exp_dual(problem: DualProblem, k: Kernel, *, c0=None, tol: float = 1e-8, max_iter: int = 100):
    conj = problem.conjugate
    if not isinstance(conj, ExpForm):
        raise TypeError("solve_exp_dual needs an ExpForm conjugate")
    X = problem.sample_points
    Y = np.atleast_2d(np.asarray(conj.prior_samples, float))
    if Y.shape[0] < 1:
        raise ValueError("at least one prior sample is required")
    tau, lam = conj.tau, problem.lam
    Z = problem.extra.get("basis")
    if Z is None:
        Z = build_basis([X, Y], problem.basis_cap, problem.seed)
    Kzz = k.gram(Z)
    kx_mean = k.gram(X, Z).mean(axis=0)
    Ky = k.gram(Y, Z)
    gy = np.asarray(conj.g.value(Y), float)
    M = Y.shape[0]
    base_jitter = _jitter0(Kzz)

    c = np.zeros(Z.shape[0]) if c0 is None or len(c0) != Z.shape[0] else np.array(c0, float)

    def objective(cc):
        e, clipped = _exp_terms(Ky @ cc, gy, tau)
        return float(kx_mean @ cc - tau * e.mean() + tau - lam * cc @ Kzz @ cc), e, clipped

    J, e, clipped = objective(c)
    history = [J]
    converged = False
    jitters = []
    for it in range(max_iter):
        grad = kx_mean - Ky.T @ e / M - 2.0 * lam * Kzz @ c
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < tol:
            converged = True
            break
        negH = (Ky.T * (e / (tau * M))) @ Ky + 2.0 * lam * Kzz
        negH = 0.5 * (negH + negH.T)
        fac, jit = _factor(negH, max(base_jitter, _jitter0(Kzz, negH)))
        jitters.append(jit)
        step = sla.cho_solve(fac, grad, check_finite=False)
        slope = float(grad @ step)
        t = 1.0
        for _ in range(50):
            Jn, en, cl = objective(c + t * step)
            if np.isfinite(Jn) and Jn >= J + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            if gnorm < 1e-6:
                # objective differences are below float resolution
                converged = True
                break
            raise NumericalError(f"line search failed after 50 halvings at Newton step {it}")
        c = c + t * step
        J, e, clipped = Jn, en, cl
        history.append(J)
    else:
        grad = kx_mean - Ky.T @ e / M - 2.0 * lam * Kzz @ c
        gnorm = float(np.max(np.abs(grad)))
        converged = gnorm < tol
        if not converged:
            log.warning("exp dual: %d Newton steps without reaching tol (|grad|=%.3g)", max_iter, gnorm)
    if clipped:
        raise NumericalError("exponent clipping active at the returned solution")
    f_x_mean = float(kx_mean @ c)
    dual = f_x_mean - tau * float(e.mean()) + tau
    return RepresenterWitness(
        Z,
        c,
        k,
        dual_value=dual,
        info={
            "kind": "exp",
            "converged": converged,
            "grad_norm": gnorm,
            "newton_steps": len(history) - 1,
            "objective_history": history,
            "jitters": jitters,
            "lam": lam,
            "regularized_objective": J,
        },
    )


# --------------------------------------------------------------- evaluation
def dual_objective(problem: DualProblem, witness) -> float:
    """(1/n) sum f(x_i) - F*(f), without the RKHS penalty."""
    f = witness.value
    if f is None:
        raise ValueError("dual_objective needs a witness with values")
    X = problem.sample_points
    conj = problem.conjugate
    if isinstance(conj, QuadraticForm):
        return chi2_dual_value(f(X), f(np.atleast_2d(conj.target_samples)))
    Y = np.atleast_2d(conj.prior_samples)
    a = (f(Y) - conj.g.value(Y)) / conj.tau
    if np.any(a > 700):
        raise NumericalError("overflow in exponential conjugate")
    return float(np.mean(f(X)) - conj.tau * np.mean(np.exp(a)) + conj.tau)


def estimate_hessian_bound(w: RepresenterWitness, points=None) -> HessianBound:
    """Certified Lipschitz bound for grad w, plus the largest Hessian spectral
    norm actually observed at ``points`` (the basis by default)."""
    if not np.any(w.coeffs):
        return HessianBound(0.0, 0.0)
    pts = w.basis if points is None else np.atleast_2d(points)
    H = w.hess(pts)
    emp = float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (H + np.swapaxes(H, -1, -2))))))
    return HessianBound(float(w.hessian_bound), emp)

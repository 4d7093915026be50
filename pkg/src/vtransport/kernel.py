"""Gaussian RBF kernel on R^d and its wrapped (image-summed) variant on the torus.

The isotropic Gaussian factorises over coordinates, so the wrapped kernel is a
product of one-dimensional image sums

    psi(t) = sum_{n=-W..W} exp(-(t + n*period)^2 / (2 h^2)),

evaluated at the minimal-image coordinate difference ``t``.  On Euclidean space
only the ``n = 0`` term is present.  Every batched routine below is built from
``psi`` and its first two derivatives.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .space import Space

log = logging.getLogger(__name__)

# elements per temporary block in the chunked pairwise routines
_BLOCK = 1 << 22


class RKHSBounds(NamedTuple):
    """sup_x ||K(x,.)||_H, sup_x ||d_j K(x,.)||_H and sup_x ||d_ij K(x,.)||_H."""

    c1: float
    c2: float
    c3: float


@dataclass(frozen=True)
class Kernel:
    bandwidth: float
    space: Space
    wrap_images: int = 3

    def __post_init__(self):
        h = float(self.bandwidth)
        if not (np.isfinite(h) and h > 0):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth!r}")
        if self.wrap_images < 0:
            raise ValueError("wrap_images must be nonnegative")
        if self.space.is_torus and h > 0.5 * self.space.period:
            log.info("capping torus bandwidth %.4g at period/2", h)
            h = 0.5 * self.space.period
        object.__setattr__(self, "bandwidth", h)

    @property
    def h(self) -> float:
        return self.bandwidth

    @property
    def dim(self) -> int:
        return self.space.dim

    def with_bandwidth(self, h: float) -> "Kernel":
        return Kernel(h, self.space, self.wrap_images)

    # ------------------------------------------------------------------ 1D pieces
    def _offsets(self) -> np.ndarray:
        if not self.space.is_torus:
            return np.zeros(1)
        w = self.wrap_images
        return self.space.period * np.arange(-w, w + 1, dtype=float)

    def _diff(self, x, y) -> np.ndarray:
        return self.space.minimal_image(np.asarray(x, float) - np.asarray(y, float))

    def _psi(self, t: np.ndarray, order: int = 0):
        """psi and derivatives up to ``order`` (<= 2), elementwise in ``t``."""
        h = self.h
        if not self.space.is_torus:
            u = t / h
            e = np.exp(-0.5 * u * u)
            out = [e]
            if order >= 1:
                out.append(-u / h * e)
            if order >= 2:
                out.append((u * u - 1.0) / (h * h) * e)
            return out
        out = [np.zeros_like(t) for _ in range(order + 1)]
        for off in self._offsets():
            u = (t + off) / h
            e = np.exp(-0.5 * u * u)
            out[0] += e
            if order >= 1:
                out[1] += -u / h * e
            if order >= 2:
                out[2] += (u * u - 1.0) / (h * h) * e
        return out

    def _psi4_at_zero(self) -> float:
        u = self._offsets() / self.h
        return float(np.sum((u**4 - 6 * u**2 + 3) * np.exp(-0.5 * u * u)) / self.h**4)

    # --------------------------------------------------------- paired evaluation
    def _check_pair(self, x, y):
        x = self.space._check(x, "x")
        y = self.space._check(y, "y")
        return x, y

    def eval(self, x, y) -> np.ndarray:
        """k(x, y); rows of ``x`` and ``y`` broadcast against each other."""
        x, y = self._check_pair(x, y)
        t = self._diff(x, y)
        if not self.space.is_torus:
            u = t / self.h
            return np.exp(-0.5 * _sqnorm(u))
        return np.prod(self._psi(t)[0], axis=-1)

    __call__ = eval

    def grad1(self, x, y) -> np.ndarray:
        """Gradient of k(x, y) in its first argument."""
        x, y = self._check_pair(x, y)
        t = self._diff(x, y)
        p0, p1 = self._psi(t, 1)
        return _grad_from_factors(p0, p1)

    def hess1(self, x, y) -> np.ndarray:
        x, y = self._check_pair(x, y)
        t = self._diff(x, y)
        p0, p1, p2 = self._psi(t, 2)
        return _hess_from_factors(p0, p1, p2)

    # ---------------------------------------------------------- batched matrices
    def _rows(self, X: np.ndarray, m: int):
        per_row = max(1, m * len(self._offsets()) * self.dim)
        step = max(1, _BLOCK // per_row)
        for s in range(0, X.shape[0], step):
            yield slice(s, min(s + step, X.shape[0]))

    def _prep(self, X, Z):
        X = np.atleast_2d(self.space._check(X, "X"))
        Z = np.atleast_2d(self.space._check(Z, "Z"))
        if X.shape[0] == 0 or Z.shape[0] == 0:
            raise ValueError("point lists must be nonempty")
        return X, Z

    def _block_gram(self, Xb: np.ndarray, Z: np.ndarray) -> np.ndarray:
        t = self._diff(Xb[:, None, :], Z[None, :, :])
        if not self.space.is_torus:
            u = t / self.h
            return np.exp(-0.5 * _sqnorm(u))
        return np.prod(self._psi(t)[0], axis=-1)

    def gram(self, X, Z=None) -> np.ndarray:
        """Matrix of k(x_i, z_a).  With ``Z`` omitted the result is symmetrised."""
        sym = Z is None
        X, Z = self._prep(X, X if sym else Z)
        K = np.empty((X.shape[0], Z.shape[0]))
        for sl in self._rows(X, Z.shape[0]):
            K[sl] = self._block_gram(X[sl], Z)
        if sym:
            K = 0.5 * (K + K.T)
        return K

    def weighted_value(self, X, Z, c) -> np.ndarray:
        """sum_a c_a k(x, z_a) for every row x of X."""
        X, Z = self._prep(X, Z)
        c = np.asarray(c, float)
        if not self.space.is_torus:
            return self._euclid_sums(X, Z, c, hess=False, grad=False)[0]
        out = np.empty(X.shape[0])
        for sl in self._rows(X, Z.shape[0]):
            out[sl] = self._block_gram(X[sl], Z) @ c
        return out

    def weighted_grad(self, X, Z, c) -> np.ndarray:
        """sum_a c_a grad_1 k(x, z_a) for every row x of X."""
        X, Z = self._prep(X, Z)
        c = np.asarray(c, float)
        out = np.empty_like(X)
        for sl in self._rows(X, Z.shape[0]):
            t = self._diff(X[sl][:, None, :], Z[None, :, :])
            if not self.space.is_torus:
                u = t / self.h
                k = np.exp(-0.5 * _sqnorm(u)) * c
                out[sl] = -np.matmul(k[:, None, :], u)[:, 0, :] / self.h
            else:
                p0, p1 = self._psi(t, 1)
                out[sl] = np.einsum("nmj,m->nj", _grad_from_factors(p0, p1), c)
        return out

    def value_and_grad(self, X, Z, c):
        """Both weighted sums in a single pass (used by the KDE score)."""
        X, Z = self._prep(X, Z)
        c = np.asarray(c, float)
        if not self.space.is_torus:
            return self._euclid_sums(X, Z, c, hess=False)
        val = np.empty(X.shape[0])
        grad = np.empty_like(X)
        for sl in self._rows(X, Z.shape[0]):
            t = self._diff(X[sl][:, None, :], Z[None, :, :])
            p0, p1 = self._psi(t, 1)
            val[sl] = np.prod(p0, axis=-1) @ c
            grad[sl] = np.einsum("nmj,m->nj", _grad_from_factors(p0, p1), c)
        return val, grad

    def value_grad_hess(self, X, Z, c):
        """Weighted value, gradient and Hessian sums in one pass."""
        X, Z = self._prep(X, Z)
        c = np.asarray(c, float)
        if not self.space.is_torus:
            return self._euclid_sums(X, Z, c, hess=True)
        n, d = X.shape
        val, grad, hess = np.empty(n), np.empty((n, d)), np.empty((n, d, d))
        for sl in self._rows(X, Z.shape[0]):
            t = self._diff(X[sl][:, None, :], Z[None, :, :])
            p0, p1, p2 = self._psi(t, 2)
            val[sl] = np.prod(p0, axis=-1) @ c
            grad[sl] = np.einsum("nmj,m->nj", _grad_from_factors(p0, p1), c)
            hess[sl] = np.einsum("nmij,m->nij", _hess_from_factors(p0, p1, p2), c)
        return val, grad, hess

    def _euclid_sums(self, X, Z, c, hess: bool, grad: bool = True):
        # Gram by the |x|^2 + |z|^2 - 2 x.z expansion on centred points, then
        # gradient and Hessian sums as matrix products with Z and z z^T.
        n, d = X.shape
        h2 = self.h * self.h
        mu = Z.mean(axis=0)
        Xc, Zc = X - mu, Z - mu
        zn = np.einsum("mj,mj->m", Zc, Zc)
        ZZ = (Zc[:, :, None] * Zc[:, None, :]).reshape(-1, d * d) if hess else None
        val, g = np.empty(n), np.empty((n, d))
        H = np.empty((n, d, d)) if hess else None
        step = max(1, _BLOCK // max(1, Z.shape[0]))
        for s in range(0, n, step):
            xb = Xc[s : s + step]
            sq = np.einsum("nj,nj->n", xb, xb)[:, None] + zn[None, :] - 2.0 * (xb @ Zc.T)
            np.maximum(sq, 0.0, out=sq)
            K = np.exp(sq * (-0.5 / h2)) * c
            v = K.sum(axis=1)
            val[s : s + step] = v
            if not grad:
                continue
            KZ = K @ Zc
            g[s : s + step] = (KZ - v[:, None] * xb) / h2
            if hess:
                S = (K @ ZZ).reshape(-1, d, d)
                xk = xb[:, :, None] * KZ[:, None, :]
                outer = v[:, None, None] * (xb[:, :, None] * xb[:, None, :]) - xk - np.swapaxes(xk, 1, 2) + S
                H[s : s + step] = outer / (h2 * h2) - v[:, None, None] * np.eye(d) / h2
        return (val, g, H) if hess else (val, g)

    def weighted_hess(self, X, Z, c) -> np.ndarray:
        """sum_a c_a Hess_1 k(x, z_a), shape (n, d, d)."""
        X, Z = self._prep(X, Z)
        c = np.asarray(c, float)
        d = self.dim
        out = np.empty((X.shape[0], d, d))
        for sl in self._rows(X, Z.shape[0]):
            t = self._diff(X[sl][:, None, :], Z[None, :, :])
            p0, p1, p2 = self._psi(t, 2)
            out[sl] = np.einsum("nmij,m->nij", _hess_from_factors(p0, p1, p2), c)
        return out

    # ------------------------------------------------------------------- bounds
    def second_derivative_bound(self) -> float:
        """Certified B with |d^2 k(x,y) / dx_i dx_j| <= B for all x, y, i, j."""
        if not self.space.is_torus:
            # diagonal entries peak at x = y with value 1/h^2; off-diagonal at e^{-1}/h^2
            return 1.0 / self.h**2
        half = 0.5 * self.space.period
        t = np.linspace(-half, half, 8001)
        p0, p1, p2 = self._psi(t, 2)
        top = float(p0.max())
        d = self.dim
        diag = float(np.abs(p2).max()) * top ** (d - 1)
        off = float(np.abs(p1).max()) ** 2 * top ** (d - 2) if d > 1 else 0.0
        # grid maxima of smooth periodic functions; small margin for off-grid peaks
        return max(diag, off) * (1.0 + 1e-6)

    def rkhs_bounds(self) -> RKHSBounds:
        """RKHS-norm bounds on the kernel section and its derivatives.

        ``||d_ij K(x,.)||_H^2`` equals a fourth mixed derivative of k on the
        diagonal, which for the RBF gives ``3/h^4`` (i = j) and ``1/h^4``
        (i != j).  The same identities hold image-by-image on the torus.
        """
        zero = np.zeros(1)
        p0, _, p2 = (float(a[0]) for a in self._psi(zero, 2))
        p4 = self._psi4_at_zero()
        d = self.dim
        c1 = np.sqrt(p0**d)
        c2 = np.sqrt(-p2 * p0 ** (d - 1))
        diag = p4 * p0 ** (d - 1)
        off = p2 * p2 * p0 ** (d - 2) if d > 1 else 0.0
        return RKHSBounds(float(c1), float(c2), float(np.sqrt(max(diag, off))))


def _sqnorm(u: np.ndarray) -> np.ndarray:
    if u.shape[-1] == 1:
        return u[..., 0] * u[..., 0]
    return np.einsum("...j,...j->...", u, u)


def _grad_from_factors(p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    d = p0.shape[-1]
    out = np.empty_like(p0)
    for j in range(d):
        g = p1[..., j].copy()
        for l in range(d):
            if l != j:
                g *= p0[..., l]
        out[..., j] = g
    return out


def _hess_from_factors(p0, p1, p2) -> np.ndarray:
    d = p0.shape[-1]
    out = np.empty(p0.shape + (d,))
    for i in range(d):
        for j in range(i, d):
            if i == j:
                v = p2[..., i].copy()
            else:
                v = p1[..., i] * p1[..., j]
            for l in range(d):
                if l != i and l != j:
                    v = v * p0[..., l]
            out[..., i, j] = v
            out[..., j, i] = v
    return out


def median_bandwidth(space: Space, points) -> float:
    """Median pairwise distance of ``points`` (excluding self-pairs)."""
    P = np.atleast_2d(np.asarray(points, float))
    n = P.shape[0]
    if n < 2:
        return 1.0
    if n > 1000:
        # median of a fixed deterministic subset keeps this O(1e6)
        P = P[np.linspace(0, n - 1, 1000).astype(int)]
        n = P.shape[0]
    iu = np.triu_indices(n, 1)
    d2 = space.squared_distance(P[:, None, :], P[None, :, :])[iu]
    h = float(np.sqrt(np.median(d2)))
    return h if h > 0 else 1.0


def mmd2_vstat(k: Kernel, X, Y, kyy: float | None = None) -> float:
    """Biased (diagonal-inclusive) squared MMD between two point sets.

    ``kyy`` may carry a precomputed mean of k over Y x Y.
    """
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    kxx = k.weighted_value(X, X, np.full(X.shape[0], 1.0 / X.shape[0])).mean()
    if kyy is None:
        kyy = mean_kernel(k, Y)
    kxy = k.weighted_value(X, Y, np.full(Y.shape[0], 1.0 / Y.shape[0])).mean()
    return float(kxx + kyy - 2.0 * kxy)


def mean_kernel(k: Kernel, Y) -> float:
    Y = np.atleast_2d(Y)
    return float(k.weighted_value(Y, Y, np.full(Y.shape[0], 1.0 / Y.shape[0])).mean())

"""Objective catalog: each functional F bound to its conjugate and witness backend."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .ensemble import STREAM_PRIOR, STREAM_TARGET, Ensemble, NumericalError, ScoreModel, make_sampler, sample_init
from .kernel import Kernel, median_bandwidth, mmd2_vstat
from .rkhs_solver import DualProblem, ExpForm, default_lambda, solve_chi2, solve_exp_dual
from .space import Space
from .witness import (
    Potential,
    Witness,
    entropy_kl_witness,
    kde_score,
    kl_witness,
    lifted_witness,
    mmd_witness,
    silverman_bandwidth,
)


class Kind(str, Enum):
    LINEAR_LIFTED = "linear_lifted"
    LINEAR_ENTROPY_KL = "linear_entropy_kl"
    KL = "kl"
    CHI2 = "chi2"
    MMD = "mmd"


class Backend(str, Enum):
    CLOSED_FORM = "closed_form"
    KDE_SCORE = "kde_score"
    RKHS_DUAL = "rkhs_dual"


LEGAL_BACKENDS = {
    Kind.MMD: {Backend.CLOSED_FORM},
    Kind.LINEAR_LIFTED: {Backend.CLOSED_FORM},
    Kind.KL: {Backend.KDE_SCORE},
    Kind.LINEAR_ENTROPY_KL: {Backend.KDE_SCORE, Backend.RKHS_DUAL},
    Kind.CHI2: {Backend.RKHS_DUAL},
}


def check_legal(kind, backend) -> None:
    kind, backend = Kind(kind), Backend(backend)
    if backend not in LEGAL_BACKENDS[kind]:
        allowed = ", ".join(sorted(b.value for b in LEGAL_BACKENDS[kind]))
        raise ValueError(f"backend {backend.value!r} is not legal for kind {kind.value!r} (allowed: {allowed})")


# --------------------------------------------------------------- potentials
def quadratic(center=0.0, scale: float = 1.0) -> Potential:
    """g(x) = scale/2 * ||x - center||^2."""
    c = np.asarray(center, float)

    def value(x):
        z = np.atleast_2d(x) - c
        return 0.5 * scale * np.sum(z * z, axis=-1)

    def grad(x):
        return scale * (np.atleast_2d(x) - c)

    def hess(x):
        x = np.atleast_2d(x)
        return np.broadcast_to(scale * np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1])).copy()

    return Potential(value, grad, hess, "quadratic")


def double_well() -> Potential:
    """g(x) = (||x||^2 - 1)^2, minimised on the unit sphere."""

    def value(x):
        r2 = np.sum(np.atleast_2d(x) ** 2, axis=-1)
        return (r2 - 1.0) ** 2

    def grad(x):
        x = np.atleast_2d(x)
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        return 4.0 * (r2 - 1.0) * x

    def hess(x):
        x = np.atleast_2d(x)
        r2 = np.sum(x * x, axis=-1)
        eye = np.eye(x.shape[1])
        return 4.0 * (r2 - 1.0)[:, None, None] * eye + 8.0 * x[:, :, None] * x[:, None, :]

    return Potential(value, grad, hess, "double_well")


def constant(c: float = 0.0) -> Potential:
    def value(x):
        return np.full(np.atleast_2d(x).shape[0], float(c))

    def grad(x):
        return np.zeros_like(np.atleast_2d(np.asarray(x, float)))

    def hess(x):
        x = np.atleast_2d(x)
        return np.zeros((x.shape[0], x.shape[1], x.shape[1]))

    return Potential(value, grad, hess, "constant")


def make_potential(spec: dict) -> Potential:
    name = spec.get("name")
    if name == "quadratic":
        return quadratic(spec.get("center", 0.0), float(spec.get("scale", 1.0)))
    if name == "double_well":
        return double_well()
    if name in ("constant", "zero"):
        return constant(float(spec.get("value", 0.0)))
    raise ValueError(f"unknown potential {name!r}")


# ------------------------------------------------------------------- specs
@dataclass(eq=False)
class FunctionalSpec:
    kind: Kind
    backend: Backend
    g: Potential | None = None
    tau: float | None = None
    prior: object | None = None  # a law with .sample and .score_model()
    target: object | None = None
    target_samples: Ensemble | None = None
    # score of the target (KL) and, optionally, an exact self-score replacing the KDE
    target_score: ScoreModel | None = None
    self_score: ScoreModel | None = None
    kde_bandwidth: float | None = None
    leave_one_out: bool = False
    n_prior: int = 1000
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.kind = Kind(self.kind)
        self.backend = Backend(self.backend)
        check_legal(self.kind, self.backend)
        k = self.kind
        if k in (Kind.LINEAR_LIFTED, Kind.LINEAR_ENTROPY_KL) and self.g is None:
            raise ValueError(f"{k.value} needs a potential g")
        if k is Kind.LINEAR_ENTROPY_KL:
            if self.tau is None or not self.tau > 0:
                raise ValueError("linear_entropy_kl needs tau > 0")
            if self.prior is None:
                raise ValueError("linear_entropy_kl needs a prior")
        if k is Kind.KL and self.target_score is None:
            if self.target is None:
                raise ValueError("kl needs a target law or target score")
            self.target_score = self.target.score_model()
        if k in (Kind.MMD, Kind.CHI2) and self.target_samples is None:
            raise ValueError(f"{k.value} needs target samples")

    def prior_samples(self, space: Space) -> np.ndarray:
        key = ("prior", self.n_prior)
        if key not in self._cache:
            self._cache[key] = sample_init(space, self.prior, self.n_prior, self.seed, STREAM_PRIOR).positions
        return self._cache[key]

    def prior_score(self) -> ScoreModel:
        return self.prior.score_model()


def build_spec(table: dict, space: Space, seed: int) -> FunctionalSpec:
    """Construct a :class:`FunctionalSpec` from a config ``[functional]`` table."""
    kind = Kind(table["kind"])
    backend = Backend(table.get("backend", _default_backend(kind)))
    g = make_potential(table["potential"]) if "potential" in table else None
    prior = make_sampler(space, table["prior"]) if "prior" in table else None
    target = make_sampler(space, table["target"]) if "target" in table else None
    target_samples = None
    if kind in (Kind.MMD, Kind.CHI2):
        if target is None:
            raise ValueError(f"functional.target is required for kind {kind.value!r}")
        n_t = int(table.get("n_target", 256))
        target_samples = sample_init(space, target, n_t, seed, STREAM_TARGET)
    return FunctionalSpec(
        kind=kind,
        backend=backend,
        g=g,
        tau=table.get("tau"),
        prior=prior,
        target=target,
        target_samples=target_samples,
        kde_bandwidth=table.get("kde_bandwidth"),
        leave_one_out=bool(table.get("leave_one_out", False)),
        n_prior=int(table.get("n_prior", 1000)),
        seed=seed,
    )


def _default_backend(kind: Kind) -> Backend:
    return {
        Kind.MMD: Backend.CLOSED_FORM,
        Kind.LINEAR_LIFTED: Backend.CLOSED_FORM,
        Kind.KL: Backend.KDE_SCORE,
        Kind.LINEAR_ENTROPY_KL: Backend.KDE_SCORE,
        Kind.CHI2: Backend.RKHS_DUAL,
    }[kind]


# -------------------------------------------------------------- operations
def _self_score(spec: FunctionalSpec, e: Ensemble) -> ScoreModel:
    if spec.self_score is not None:
        return spec.self_score
    h = spec.kde_bandwidth or silverman_bandwidth(e)
    return kde_score(e, Kernel(h, e.space), leave_one_out=spec.leave_one_out)


def _median_kernel(e: Ensemble, *others) -> Kernel:
    pts = np.vstack([e.positions, *[np.atleast_2d(o) for o in others]])
    return Kernel(median_bandwidth(e.space, pts), e.space)


def solve_witness(
    spec: FunctionalSpec,
    e: Ensemble,
    k: Kernel | None = None,
    lam: float | None = None,
    seed: int | None = None,
    warm_start: np.ndarray | None = None,
) -> Witness:
    """Fit the dual witness of ``spec`` at the empirical measure of ``e``.

    ``k`` is the RKHS / MMD kernel; ``None`` selects the median heuristic on
    the current basis.  Score backends use ``spec.kde_bandwidth`` instead.
    """
    seed = spec.seed if seed is None else seed
    kind = spec.kind
    if kind is Kind.LINEAR_LIFTED:
        if "lifted" not in spec._cache:
            spec._cache["lifted"] = lifted_witness(spec.g)
        return spec._cache["lifted"]
    if kind is Kind.MMD:
        Y = spec.target_samples
        k = k or _median_kernel(e, Y.positions)
        return mmd_witness(e, Y, k)
    if kind is Kind.KL:
        return kl_witness(e, spec.target_score, _self_score(spec, e))
    if kind is Kind.LINEAR_ENTROPY_KL and spec.backend is Backend.KDE_SCORE:
        return entropy_kl_witness(e, spec.g, spec.tau, spec.prior_score(), _self_score(spec, e))
    if kind is Kind.LINEAR_ENTROPY_KL:
        Y = spec.prior_samples(e.space)
        k = k or _median_kernel(e, Y)
        lam = default_lambda(e.n) if lam is None else lam
        prob = DualProblem(e.positions, ExpForm(spec.g, spec.tau, Y), lam, seed=seed)
        return solve_exp_dual(prob, k, c0=warm_start)
    if kind is Kind.CHI2:
        Q = spec.target_samples.positions
        k = k or _median_kernel(e, Q)
        lam = default_lambda(e.n) if lam is None else lam
        # solve_chi2 estimates p/q; the first variation of chi^2(p, q) is 2 p/q
        return solve_chi2(e.positions, Q, k, lam, seed=seed).scaled(2.0)
    raise ValueError(f"unsupported functional kind {kind!r}")


def grad_norm_estimate(w: Witness, e: Ensemble) -> float:
    """(1/N) sum_i ||grad w(x_i)||^2, the squared tangent norm under p-tilde."""
    G = np.asarray(w.grad(e.positions), float)
    if not np.all(np.isfinite(G)):
        raise NumericalError("non-finite witness gradient")
    return float(np.mean(np.sum(G * G, axis=1)))


def objective_estimate(spec: FunctionalSpec, e: Ensemble, w: Witness) -> float | None:
    """Plug-in estimate of F at the empirical measure; ``None`` when unavailable."""
    kind = spec.kind
    X = e.positions
    if kind is Kind.MMD:
        k = getattr(w, "kernel", None) or _median_kernel(e, spec.target_samples.positions)
        return mmd2_vstat(k, X, spec.target_samples.positions)
    if kind is Kind.LINEAR_LIFTED:
        return float(np.mean(spec.g.value(X)))
    if w.value is None:
        return None
    if kind is Kind.CHI2:
        f_p = w.value(X) / 2.0
        f_q = w.value(spec.target_samples.positions) / 2.0
        return float(2.0 * np.mean(f_p) - np.mean(f_q**2) - 1.0)
    if kind is Kind.LINEAR_ENTROPY_KL:
        Y = spec.prior_samples(e.space)
        a = (w.value(Y) - spec.g.value(Y)) / spec.tau
        if np.any(a > 700):
            return None
        return float(np.mean(w.value(X)) - spec.tau * np.mean(np.exp(a)) + spec.tau)
    return None

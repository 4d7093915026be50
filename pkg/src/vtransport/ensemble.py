"""Uniformly weighted particle ensembles, initial laws and the pushforward update."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .space import Space


class NumericalError(ArithmeticError):
    """Raised when a computation produces non-finite values or fails to converge."""


# Named sub-streams.  Every consumer of randomness draws from
# rng(seed, stream), so methods sharing a seed share their initial particles.
STREAM_INIT = 0
STREAM_TARGET = 1
STREAM_PRIOR = 2
STREAM_BASELINE_NOISE = 3
STREAM_SPLIT = 4
STREAM_BASIS = 5
STREAM_ORACLE = 6
STREAM_NULL = 7
STREAM_DIAG = 8
STREAM_MAP_BASE = 1000


def rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``(seed, stream)``."""
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be nonnegative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


# --------------------------------------------------------------------- laws
@dataclass(frozen=True)
class ScoreModel:
    """A (possibly unnormalised) log-density together with its gradient.

    ``jac`` is the Jacobian of the score, shape (n, d, d); it feeds the
    empirical stepsize safeguard and may be absent.
    """

    score: Callable[[np.ndarray], np.ndarray]
    log_density: Callable[[np.ndarray], np.ndarray] | None = None
    jac: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass(frozen=True)
class Gaussian:
    """Axis-aligned Gaussian N(mean, diag(std^2)); std = 0 gives a point mass."""

    mean: tuple
    std: tuple

    name = "gaussian"

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, float))
        s = np.broadcast_to(np.atleast_1d(np.asarray(self.std, float)), m.shape)
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ValueError("gaussian std must be finite and nonnegative")
        object.__setattr__(self, "mean", tuple(m.tolist()))
        object.__setattr__(self, "std", tuple(s.tolist()))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        z = gen.standard_normal((n, self.dim))
        return np.asarray(self.mean) + z * np.asarray(self.std)

    def _require_proper(self):
        if min(self.std) <= 0:
            raise ValueError("score of a degenerate gaussian is undefined")

    def log_density(self, x) -> np.ndarray:
        self._require_proper()
        m, s = np.asarray(self.mean), np.asarray(self.std)
        z = (np.atleast_2d(x) - m) / s
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(s)) - 0.5 * self.dim * math.log(2 * math.pi)

    def score(self, x) -> np.ndarray:
        self._require_proper()
        m, s = np.asarray(self.mean), np.asarray(self.std)
        return -(np.atleast_2d(x) - m) / s**2

    def score_jac(self, x) -> np.ndarray:
        self._require_proper()
        x = np.atleast_2d(x)
        J = np.diag(-1.0 / np.asarray(self.std) ** 2)
        return np.broadcast_to(J, (x.shape[0],) + J.shape).copy()

    def score_model(self) -> ScoreModel:
        return ScoreModel(self.score, self.log_density, self.score_jac)

    def to_dict(self) -> dict:
        return {"name": self.name, "mean": list(self.mean), "std": list(self.std)}


@dataclass(frozen=True)
class UniformTorus:
    dim: int
    period: float = 1.0

    name = "uniform_torus"

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        return gen.random((n, self.dim)) * self.period

    def log_density(self, x) -> np.ndarray:
        return np.full(np.atleast_2d(x).shape[0], -self.dim * math.log(self.period))

    def score(self, x) -> np.ndarray:
        return np.zeros_like(np.atleast_2d(np.asarray(x, float)))

    def score_jac(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.zeros((x.shape[0], self.dim, self.dim))

    def score_model(self) -> ScoreModel:
        return ScoreModel(self.score, self.log_density, self.score_jac)

    def to_dict(self) -> dict:
        return {"name": self.name, "dim": self.dim}


@dataclass(frozen=True)
class WrappedGaussian:
    """Gaussian pushed to the torus by summing its density over integer images."""

    mean: tuple
    sigma: float
    period: float = 1.0
    images: int = 5

    name = "wrapped_gaussian"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("wrapped_gaussian sigma must be positive")
        object.__setattr__(self, "mean", tuple(np.atleast_1d(np.asarray(self.mean, float)).tolist()))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        x = np.asarray(self.mean) + self.sigma * gen.standard_normal((n, self.dim))
        return np.mod(x, self.period)

    def _axis_terms(self, x):
        t = np.atleast_2d(np.asarray(x, float)) - np.asarray(self.mean)
        offs = self.period * np.arange(-self.images, self.images + 1)
        u = (t[..., None] + offs) / self.sigma
        e = np.exp(-0.5 * u * u)
        p = e.sum(-1)
        dp = (-u / self.sigma * e).sum(-1)
        ddp = ((u * u - 1) / self.sigma**2 * e).sum(-1)
        return p, dp, ddp

    def log_density(self, x) -> np.ndarray:
        p, _, _ = self._axis_terms(x)
        return np.sum(np.log(p), axis=-1) - self.dim * math.log(self.sigma * math.sqrt(2 * math.pi))

    def score(self, x) -> np.ndarray:
        p, dp, _ = self._axis_terms(x)
        return dp / p

    def score_jac(self, x) -> np.ndarray:
        p, dp, ddp = self._axis_terms(x)
        diag = ddp / p - (dp / p) ** 2
        out = np.zeros(diag.shape + (self.dim,))
        idx = np.arange(self.dim)
        out[:, idx, idx] = diag
        return out

    def score_model(self) -> ScoreModel:
        return ScoreModel(self.score, self.log_density, self.score_jac)

    def to_dict(self) -> dict:
        return {"name": self.name, "mean": list(self.mean), "sigma": self.sigma}


def make_sampler(space: Space, spec: dict):
    """Build a named initial law from a config-style table."""
    name = spec.get("name")
    if name == "gaussian":
        mean = spec.get("mean", [0.0] * space.dim)
        std = spec.get("std", 1.0)
        law = Gaussian(mean, std)
    elif name == "uniform_torus":
        if not space.is_torus:
            raise ValueError("uniform_torus requires a torus space")
        law = UniformTorus(space.dim, space.period)
    elif name == "wrapped_gaussian":
        if not space.is_torus:
            raise ValueError("wrapped_gaussian requires a torus space")
        law = WrappedGaussian(spec.get("mean", [0.5] * space.dim), float(spec.get("sigma", 0.1)), space.period)
    else:
        raise ValueError(f"unknown sampler {name!r}")
    if law.dim != space.dim:
        raise ValueError(f"sampler dimension {law.dim} does not match space dimension {space.dim}")
    return law


# ----------------------------------------------------------------- ensemble
@dataclass(frozen=True)
class Ensemble:
    positions: np.ndarray
    space: Space
    seed_lineage: tuple = field(default=())

    def __post_init__(self):
        x = np.array(self.positions, dtype=float, copy=True)
        if x.ndim == 1:
            x = x.reshape(-1, self.space.dim)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != self.space.dim:
            raise ValueError(f"positions must be (N>=1, {self.space.dim}), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericalError("ensemble positions must be finite")
        x = self.space.wrap(x)
        x.flags.writeable = False
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "seed_lineage", tuple(self.seed_lineage))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def __len__(self) -> int:
        return self.n

    def subset(self, idx) -> "Ensemble":
        return Ensemble(self.positions[idx], self.space, self.seed_lineage)

    def to_record(self, it: int) -> dict:
        return {
            "iter": int(it),
            "n": self.n,
            "d": self.d,
            "space": self.space.to_dict(),
            "positions": self.positions.tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Ensemble":
        return cls(np.asarray(rec["positions"], float), Space.from_dict(rec["space"]))


def sample_init(space: Space, sampler, n: int, seed: int, stream: int = STREAM_INIT) -> Ensemble:
    """Draw ``n`` i.i.d. particles from ``sampler`` (a law object or config table)."""
    if n < 1:
        raise ValueError("particle count must be >= 1")
    if isinstance(sampler, dict):
        sampler = make_sampler(space, sampler)
    x = sampler.sample(rng(seed, stream), n)
    return Ensemble(x, space, (int(seed), int(stream)))


def push(e: Ensemble, grad_field: Callable[[np.ndarray], np.ndarray], alpha: float) -> Ensemble:
    """x_i <- exp_{x_i}(-alpha * grad_field(x_i)) for every particle."""
    if not (np.isfinite(alpha) and alpha > 0):
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    g = np.asarray(grad_field(e.positions), float)
    if g.shape != e.positions.shape:
        raise ValueError(f"gradient field returned shape {g.shape}, expected {e.positions.shape}")
    bad = np.flatnonzero(~np.all(np.isfinite(g), axis=1))
    if bad.size:
        raise NumericalError(f"non-finite gradient at particle index {int(bad[0])}")
    return Ensemble(e.space.exp_map(e.positions, -alpha * g), e.space, e.seed_lineage)


def empirical_mean(e: Ensemble, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """(1/N) sum_i f(x_i), summed left to right."""
    v = np.asarray(f(e.positions), float).reshape(-1)
    if v.shape[0] != e.n:
        raise ValueError("f must return one value per particle")
    if not np.all(np.isfinite(v)):
        raise NumericalError("non-finite function value in empirical mean")
    return _serial_sum(v) / e.n


def _serial_sum(v: np.ndarray) -> float:
    s = 0.0
    for a in v.tolist():
        s += a
    return s


def write_snapshots(path, snapshots: list[tuple[int, Ensemble]]) -> None:
    with open(path, "w") as fh:
        for it, e in snapshots:
            fh.write(json.dumps(e.to_record(it)) + "\n")


def read_snapshots(path) -> list[tuple[int, Ensemble]]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append((rec["iter"], Ensemble.from_record(rec)))
    return out

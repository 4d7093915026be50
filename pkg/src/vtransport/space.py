"""Base-domain geometry: flat Euclidean space and the flat torus [0, period)^d."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Topology(str, Enum):
    EUCLIDEAN = "euclidean"
    TORUS = "torus"


@dataclass(frozen=True)
class Space:
    """Domain descriptor.

    All point-valued operations accept either a single point of shape ``(d,)``
    or a batch of shape ``(n, d)`` and return the same shape.
    """

    dim: int
    topology: Topology = Topology.EUCLIDEAN
    period: float = 1.0

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        object.__setattr__(self, "topology", Topology(self.topology))
        if not (np.isfinite(self.period) and self.period > 0):
            raise ValueError(f"period must be positive, got {self.period!r}")

    @classmethod
    def euclidean(cls, dim: int) -> "Space":
        return cls(dim, Topology.EUCLIDEAN)

    @classmethod
    def torus(cls, dim: int, period: float = 1.0) -> "Space":
        return cls(dim, Topology.TORUS, period)

    @property
    def is_torus(self) -> bool:
        return self.topology is Topology.TORUS

    def _check(self, a, name: str) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if a.ndim == 0 or a.shape[-1] != self.dim:
            raise ValueError(
                f"{name} has trailing dimension {a.shape[-1] if a.ndim else 0}, expected {self.dim}"
            )
        if not np.all(np.isfinite(a)):
            raise ValueError(f"{name} contains non-finite entries")
        return a

    def wrap(self, x) -> np.ndarray:
        """Canonical representative; identity on Euclidean space."""
        x = self._check(x, "x")
        if not self.is_torus:
            return x
        w = np.mod(x, self.period)
        # mod can round up to exactly `period` for tiny negative inputs
        return np.where(w >= self.period, 0.0, w)

    def exp_map(self, x, v) -> np.ndarray:
        x = self._check(x, "x")
        v = self._check(v, "v")
        return self.wrap(x + v)

    def displacement(self, x, y) -> np.ndarray:
        """Minimal-image representative of ``y - x``.

        On the torus each component lies in ``[-period/2, period/2)``.
        """
        x = self._check(x, "x")
        y = self._check(y, "y")
        return self.minimal_image(y - x)

    def minimal_image(self, delta) -> np.ndarray:
        delta = np.asarray(delta, dtype=float)
        if not self.is_torus:
            return delta
        half = 0.5 * self.period
        out = np.mod(delta + half, self.period) - half
        return np.where(out >= half, out - self.period, out)

    def squared_distance(self, x, y) -> np.ndarray:
        x = self._check(x, "x")
        y = self._check(y, "y")
        if not self.is_torus:
            d = y - x
            return np.sum(d * d, axis=-1)
        # min over both orientations keeps the result bitwise symmetric in (x, y)
        r = np.minimum(np.abs(self.minimal_image(y - x)), np.abs(self.minimal_image(x - y)))
        return np.sum(r * r, axis=-1)

    def to_dict(self) -> dict:
        out = {"topology": self.topology.value, "dim": self.dim}
        if self.is_torus:
            out["period"] = self.period
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Space":
        return cls(int(d["dim"]), Topology(d.get("topology", "euclidean")), float(d.get("period", 1.0)))

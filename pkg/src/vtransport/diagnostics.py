"""Convergence and distribution-distance measurements."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize_scalar

from .ensemble import STREAM_SPLIT, Ensemble, rng
from .kernel import Kernel, mean_kernel, mmd2_vstat
from .space import Space

W2_CAP = 512

CSV_COLUMNS = [
    "iter",
    "objective",
    "grad_norm2",
    "alpha_used",
    "witness_norm",
    "hessian_bound",
    "mmd2_target",
    "w2_target",
    "grid_kl",
    "bias_est",
    "wall_ms",
]


@dataclass
class IterationRecord:
    iter: int
    objective: float | None = None
    grad_norm2: float | None = None
    alpha_used: float | None = None
    witness_norm: float | None = None
    hessian_bound: float | None = None
    mmd2_target: float | None = None
    w2_target: float | None = None
    grid_kl: float | None = None
    bias_est: float | None = None
    wall_ms: float | None = None

    def row(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in CSV_COLUMNS]

    def to_dict(self) -> dict:
        return asdict(self)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def records_to_csv(records: Sequence[IterationRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def records_from_csv(text: str) -> list[IterationRecord]:
    out = []
    names = {f.name for f in fields(IterationRecord)}
    for row in csv.DictReader(io.StringIO(text)):
        kw = {}
        for k, v in row.items():
            if k not in names or v == "":
                continue
            kw[k] = int(v) if k == "iter" else float(v)
        out.append(IterationRecord(**kw))
    return out


# ---------------------------------------------------------------------- MMD
def mmd_stats(X, Y, k: Kernel) -> tuple[float, float]:
    """(V-statistic, U-statistic) estimates of squared MMD."""
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    n, m = X.shape[0], Y.shape[0]
    if n < 2 or m < 2:
        raise ValueError("mmd_stats needs at least two points per sample for the U-statistic")
    v = mmd2_vstat(k, X, Y)
    sxx = float(k.weighted_value(X, X, np.ones(n)).sum())
    syy = float(k.weighted_value(Y, Y, np.ones(m)).sum())
    sxy = float(k.weighted_value(X, Y, np.ones(m)).sum())
    dx = float(np.sum(k.eval(X, X)))
    dy = float(np.sum(k.eval(Y, Y)))
    u = (sxx - dx) / (n * (n - 1)) + (syy - dy) / (m * (m - 1)) - 2.0 * sxy / (n * m)
    return max(v, 0.0), float(u)


def mmd_null(sampler_draw, k: Kernel, n: int, reps: int, seed: int) -> float:
    """Mean V-statistic between independent size-``n`` draws (permutation-free null)."""
    vals = []
    for r in range(reps):
        g = rng(seed, 500 + r)
        vals.append(mmd2_vstat(k, sampler_draw(g, n), sampler_draw(g, n)))
    return float(np.mean(vals))


# ----------------------------------------------------------------------- W2
def coupling_cost(C: np.ndarray, perm) -> float:
    """Mean cost of the permutation coupling, summed in row order."""
    s = 0.0
    for i, j in enumerate(perm):
        s += float(C[i, j])
    return s / C.shape[0]


def exact_w2(X, Y, space: Space | None = None) -> float:
    """W2 between equal-size empirical measures via optimal assignment."""
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    if X.shape != Y.shape:
        raise ValueError(f"exact_w2 needs equal-size point sets, got {X.shape} and {Y.shape}")
    if X.shape[0] > W2_CAP:
        raise ValueError(f"exact_w2 is capped at {W2_CAP} points")
    space = space or Space.euclidean(X.shape[1])
    C = space.squared_distance(X[:, None, :], Y[None, :, :])
    _, cols = linear_sum_assignment(C)
    return math.sqrt(coupling_cost(C, cols))


# ------------------------------------------------------------------ grid KL
@dataclass
class DensityTable:
    """Density values on a tensor grid (1D: ``axes=(x,)``, 2D: ``axes=(x, y)``)."""

    axes: tuple
    density: np.ndarray

    @property
    def cell(self) -> float:
        return float(np.prod([a[1] - a[0] for a in self.axes]))

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def to_csv(self) -> str:
        if len(self.axes) != 1:
            raise ValueError("CSV export is for 1D tables")
        lines = ["x,density"] + [f"{x!r},{p!r}" for x, p in zip(self.axes[0].tolist(), self.density.tolist())]
        return "\n".join(lines) + "\n"


def kde_on_grid(e: Ensemble, grid: DensityTable, bandwidth: float) -> np.ndarray:
    k = Kernel(bandwidth, e.space)
    vals = k.weighted_value(grid.points(), e.positions, np.full(e.n, 1.0 / e.n))
    return vals.reshape(grid.density.shape)


def grid_kl(e: Ensemble, target: DensityTable, kde_bandwidth: float, coverage_tol: float = 1e-6) -> float:
    """KL(KDE(e) || target) by Riemann sum; both tables renormalised on the grid."""
    if e.d > 2 or len(target.axes) != e.d:
        raise ValueError("grid_kl supports d <= 2 with a matching grid")
    q = np.asarray(target.density, float)
    cell = target.cell
    if not e.space.is_torus:
        edge = max(float(np.max(np.take(q, [0, -1], axis=a))) for a in range(q.ndim))
        extent = max(a[-1] - a[0] for a in target.axes)
        if edge * extent ** q.ndim > coverage_tol * q.sum() * cell:
            raise ValueError("target grid does not cover the effective support")
    p = kde_on_grid(e, target, kde_bandwidth)
    return table_kl(p, q, cell)


def table_kl(p, q, cell: float) -> float:
    """Riemann-sum KL(p || q) of two density tables on one grid, each renormalised."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    p = p / (p.sum() * cell)
    q = q / (q.sum() * cell)
    mask = p > 0
    if np.any(mask & (q <= 0)):
        return math.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])) * cell)


# ----------------------------------------------------------------- rate fit
class RateFit(NamedTuple):
    ok: bool
    rho: float
    plateau: float
    amplitude: float
    residual: float
    series_range: float
    reason: str = ""


def _ls_for_rho(t, y, rho):
    B = np.stack([np.ones_like(t), rho**t], axis=1)
    coef, *_ = np.linalg.lstsq(B, y, rcond=None)
    r = y - B @ coef
    return float(r @ r), coef


def rate_fit(records, window=None, key: str = "mmd2_target") -> RateFit:
    """Fit e_k ~ plateau + A rho^k by least squares over ``window`` (inclusive iter range).

    ``records`` is a list of :class:`IterationRecord` (``key`` selects the
    series) or a plain sequence of values indexed from zero.
    """
    if len(records) and isinstance(records[0], IterationRecord):
        pairs = [(r.iter, getattr(r, key)) for r in records if getattr(r, key) is not None]
    else:
        pairs = list(enumerate(float(v) for v in records))
    if window is not None:
        lo, hi = window
        pairs = [(i, v) for i, v in pairs if lo <= i <= hi]
    if len(pairs) < 8:
        return RateFit(False, math.nan, math.nan, math.nan, math.nan, math.nan, "fewer than 8 points")
    it = np.array([p[0] for p in pairs], float)
    y = np.array([p[1] for p in pairs], float)
    t = it - it[0]
    rng_y = float(y.max() - y.min())
    if not np.all(np.isfinite(y)) or rng_y <= 1e-15 * max(1.0, float(np.abs(y).max())):
        return RateFit(False, math.nan, math.nan, math.nan, math.nan, rng_y, "series has no decay")

    grid = np.linspace(0.005, 0.9995, 400)
    sse = np.array([_ls_for_rho(t, y, r)[0] for r in grid])
    j = int(np.argmin(sse))
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    res = minimize_scalar(lambda r: _ls_for_rho(t, y, r)[0], bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    rho = float(res.x) if res.fun <= sse[j] else float(grid[j])
    s, (plateau, amp) = _ls_for_rho(t, y, rho)
    resid = math.sqrt(s / len(y))
    # report the amplitude at the first window iterate
    if amp <= 0:
        return RateFit(False, rho, float(plateau), float(amp), resid, rng_y, "non-positive amplitude")
    if not 0 < rho < 0.9995 - 1e-9:
        return RateFit(False, rho, float(plateau), float(amp), resid, rng_y, "rate at search boundary")
    return RateFit(True, rho, float(plateau), float(amp), resid, rng_y)


# ------------------------------------------------------------ gradient bias
def gradient_bias_estimate(spec, e: Ensemble, k: Kernel | None, lam: float | None, seed: int, splits: int = 2) -> float:
    """Split-half proxy for the squared witness-gradient estimation error.

    Fits the witness on two disjoint halves of the particles and returns
    (1/N) sum_i ||grad f_A(x_i) - grad f_B(x_i)||^2 / 2.  This measures the
    estimator's sampling variability, not its bias towards the population
    witness.
    """
    from .functionals import solve_witness

    if splits != 2:
        raise ValueError("only two-way splits are supported")
    if e.n < 4:
        raise ValueError("gradient_bias_estimate needs at least four particles")
    perm = rng(seed, STREAM_SPLIT).permutation(e.n)
    half = e.n // 2
    wa = solve_witness(spec, e.subset(np.sort(perm[:half])), k, lam, seed)
    wb = solve_witness(spec, e.subset(np.sort(perm[half:])), k, lam, seed)
    if wa is wb:
        return 0.0
    D = wa.grad(e.positions) - wb.grad(e.positions)
    return float(np.mean(np.sum(D * D, axis=1)) / 2.0)


# ----------------------------------------------------------------- monitor
@dataclass
class Monitor:
    """Per-iteration target-distance measurements attached to a transport run."""

    target_samples: np.ndarray | None = None
    kernel: Kernel | None = None
    every: int = 1
    w2: bool = False
    grid_target: DensityTable | None = None
    kde_bandwidth: float | None = None
    bias_every: int = 0

    def __post_init__(self):
        self._kyy = None

    def due(self, it: int, final: bool) -> bool:
        return final or (self.every > 0 and it % self.every == 0)

    def measure(self, e: Ensemble, it: int, final: bool) -> dict:
        out = {}
        if not self.due(it, final):
            return out
        if self.target_samples is not None and self.kernel is not None:
            if self._kyy is None:
                self._kyy = mean_kernel(self.kernel, self.target_samples)
            out["mmd2_target"] = max(mmd2_vstat(self.kernel, e.positions, self.target_samples, self._kyy), 0.0)
            if self.w2 and e.n == len(self.target_samples) and e.n <= W2_CAP:
                out["w2_target"] = exact_w2(e.positions, self.target_samples, e.space)
        if self.grid_target is not None and e.d <= 2:
            from .witness import silverman_bandwidth

            out["grid_kl"] = grid_kl(e, self.grid_target, self.kde_bandwidth or silverman_bandwidth(e))
        return out

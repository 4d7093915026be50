"""Outer loop: direct particle pushes and transport-map composition with fresh draws."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .diagnostics import IterationRecord, Monitor, gradient_bias_estimate
from .ensemble import STREAM_INIT, STREAM_MAP_BASE, Ensemble, NumericalError, push, sample_init
from .functionals import FunctionalSpec, grad_norm_estimate, objective_estimate, solve_witness
from .kernel import Kernel
from .space import Space
from .witness import RepresenterWitness, Witness

log = logging.getLogger(__name__)

SAFEGUARD_MARGIN = 0.5


@dataclass
class TransportConfig:
    alpha: float = 0.1
    iters: int = 100
    n_particles: int = 256
    lam: float | None = None
    seed: int = 0
    mode: str = "direct"
    safeguard: bool = True
    grad_norm_tol: float | None = None
    snapshot_every: int = 0
    warm_start: bool = True
    repro: bool = False

    def __post_init__(self):
        errs = self.errors()
        if errs:
            raise ValueError("; ".join(errs))

    def errors(self) -> list[str]:
        out = []
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            out.append(f"transport.alpha must be positive, got {self.alpha!r}")
        if int(self.iters) != self.iters or self.iters < 0:
            out.append(f"transport.iters must be a nonnegative integer, got {self.iters!r}")
        if int(self.n_particles) != self.n_particles or self.n_particles < 1:
            out.append(f"transport.n_particles must be a positive integer, got {self.n_particles!r}")
        if self.lam is not None and not self.lam > 0:
            out.append(f"transport.lambda must be positive, got {self.lam!r}")
        if self.mode not in ("direct", "map_composition"):
            out.append(f"transport.mode must be 'direct' or 'map_composition', got {self.mode!r}")
        if self.grad_norm_tol is not None and not self.grad_norm_tol > 0:
            out.append(f"transport.grad_norm_tol must be positive, got {self.grad_norm_tol!r}")
        if self.snapshot_every < 0:
            out.append("transport.snapshot_every must be >= 0")
        return out


@dataclass
class TransportMapHistory:
    """T_k = exp(-a_{k-1} grad f_{k-1}) o ... o exp(-a_0 grad f_0); empty steps is the identity."""

    space: Space
    steps: list[tuple[Witness, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps) + 1

    def append(self, w: Witness, alpha: float) -> None:
        self.steps.append((w, float(alpha)))

    def __add__(self, other: "TransportMapHistory") -> "TransportMapHistory":
        if other.space != self.space:
            raise ValueError("cannot concatenate histories on different spaces")
        return TransportMapHistory(self.space, self.steps + other.steps)


def apply_history(h: TransportMapHistory, points) -> np.ndarray:
    x = h.space._check(np.atleast_2d(points), "points").copy()
    for i, (w, a) in enumerate(h.steps):
        g = np.asarray(w.grad(x), float)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in history step {i}")
        x = h.space.exp_map(x, -a * g)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite position after history step {i}")
    return x


class RunResult(NamedTuple):
    ensemble: Ensemble
    records: list[IterationRecord]
    snapshots: list[tuple[int, Ensemble]]


class MapRunResult(NamedTuple):
    history: TransportMapHistory
    ensembles: list[Ensemble]
    records: list[IterationRecord]


def _as_init(cfg: TransportConfig, space: Space, init) -> Ensemble:
    if isinstance(init, Ensemble):
        return init
    return sample_init(space, init, cfg.n_particles, cfg.seed, STREAM_INIT)


def _tagged(k: int, exc: Exception) -> Exception:
    return type(exc)(f"iteration {k}: {exc}")


class _Step:
    """Witness fit, safeguard and record for one iterate (shared by both modes)."""

    def __init__(self, cfg, spec, kernel, monitor):
        self.cfg, self.spec, self.kernel = cfg, spec, kernel
        self.monitor = monitor or Monitor()
        self.prev_coeffs = None

    def __call__(self, e: Ensemble, k: int, final: bool):
        cfg = self.cfg
        t0 = time.perf_counter()
        try:
            w = solve_witness(self.spec, e, self.kernel, cfg.lam, cfg.seed, self.prev_coeffs if cfg.warm_start else None)
            if isinstance(w, RepresenterWitness) and w.info.get("newton_steps") is not None:
                self.prev_coeffs = w.coeffs
            H = w.hessian_bound
            if H is None and cfg.safeguard and not final:
                # computed before the gradient so score backends can reuse their kernel sums
                H = w.empirical_hessian_bound(e.positions)
            gn2 = grad_norm_estimate(w, e)
            stop = final or (cfg.grad_norm_tol is not None and gn2 < cfg.grad_norm_tol)
            alpha = None
            if not stop:
                alpha = cfg.alpha
                if cfg.safeguard and H is not None and H > 0 and SAFEGUARD_MARGIN / H < alpha:
                    alpha = SAFEGUARD_MARGIN / H
                    if alpha * H > SAFEGUARD_MARGIN:  # division rounded up
                        alpha = math.nextafter(alpha, 0.0)
                    log.debug("iteration %d: safeguard clamps alpha to %.4g (H=%.4g)", k, alpha, H)
            rec = IterationRecord(
                iter=k,
                objective=objective_estimate(self.spec, e, w),
                grad_norm2=gn2,
                alpha_used=alpha,
                witness_norm=w.rkhs_norm,
                hessian_bound=H,
                **self.monitor.measure(e, k, final or stop),
            )
            mb = self.monitor.bias_every
            if mb and (k % mb == 0 or final or stop) and e.n >= 4:
                rec.bias_est = gradient_bias_estimate(self.spec, e, self.kernel, cfg.lam, cfg.seed)
        except (NumericalError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
            raise _tagged(k, exc) from exc
        if not cfg.repro:
            rec.wall_ms = 1e3 * (time.perf_counter() - t0)
        return w, alpha, rec, stop


def run_direct(
    cfg: TransportConfig,
    spec: FunctionalSpec,
    k: Kernel | None,
    init,
    monitor: Monitor | None = None,
    space: Space | None = None,
) -> RunResult:
    """Push the particles ``cfg.iters`` times along the fitted witness gradient.

    ``init`` is an :class:`Ensemble` or a law (object or config table) sampled
    on ``space``.  Returns the final ensemble, one record per iterate
    (``iters + 1`` of them unless stopped early) and the snapshots.
    """
    space = init.space if isinstance(init, Ensemble) else space
    if space is None:
        raise ValueError("space is required when init is a law")
    e = _as_init(cfg, space, init)
    step = _Step(cfg, spec, k, monitor)
    records, snaps = [], []
    for it in range(cfg.iters + 1):
        final = it == cfg.iters
        if cfg.snapshot_every and (it % cfg.snapshot_every == 0 or final):
            snaps.append((it, e))
        w, alpha, rec, stop = step(e, it, final)
        records.append(rec)
        if stop:
            if not final and cfg.snapshot_every and snaps[-1][0] != it:
                snaps.append((it, e))
            break
        try:
            e = push(e, w.grad, alpha)
        except (NumericalError, ValueError) as exc:
            raise _tagged(it, exc) from exc
    return RunResult(e, records, snaps)


def run_map_composition(
    cfg: TransportConfig,
    spec: FunctionalSpec,
    k: Kernel | None,
    init,
    monitor: Monitor | None = None,
    space: Space | None = None,
) -> MapRunResult:
    """Compose per-iteration maps, refitting each witness on fresh base draws.

    Iterate ``j`` draws ``n_particles`` new points from the base law (stream
    ``STREAM_MAP_BASE + j``; iterate 0 reuses the initial-ensemble stream),
    pushes them through the current history and fits the witness there.
    """
    if isinstance(init, Ensemble):
        raise ValueError("map composition needs a base law to resample from, not an ensemble")
    if space is None:
        raise ValueError("space is required")
    step = _Step(cfg, spec, k, monitor)
    hist = TransportMapHistory(space)
    ensembles, records = [], []
    for it in range(cfg.iters + 1):
        final = it == cfg.iters
        stream = STREAM_INIT if it == 0 else STREAM_MAP_BASE + it
        base = sample_init(space, init, cfg.n_particles, cfg.seed, stream)
        try:
            e = Ensemble(apply_history(hist, base.positions), space, base.seed_lineage)
        except NumericalError as exc:
            raise _tagged(it, exc) from exc
        ensembles.append(e)
        w, alpha, rec, stop = step(e, it, final)
        records.append(rec)
        if stop:
            break
        hist.append(w, alpha)
    return MapRunResult(hist, ensembles, records)


def replay(cfg: TransportConfig, hist: TransportMapHistory, init, space: Space) -> Ensemble:
    """Apply ``hist`` to the initial draw of ``init`` (the map-mode final ensemble)."""
    base = sample_init(space, init, cfg.n_particles, cfg.seed, STREAM_INIT)
    return Ensemble(apply_history(hist, base.positions), space, base.seed_lineage)

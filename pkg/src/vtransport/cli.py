"""Experiment runner: TOML config in, metrics.csv / snapshots.jsonl / summary.json out."""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import math
import os
import platform
import sys
import tempfile
import time
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .baselines import svgd_bandwidth, svgd_step, ula_step
from .diagnostics import IterationRecord, Monitor, rate_fit, records_to_csv
from .ensemble import (
    STREAM_BASELINE_NOISE,
    STREAM_DIAG,
    STREAM_NULL,
    Ensemble,
    NumericalError,
    ScoreModel,
    make_sampler,
    rng,
    sample_init,
    write_snapshots,
)
from .functionals import LEGAL_BACKENDS, Backend, Kind, build_spec, make_potential
from .kernel import Kernel, median_bandwidth, mmd2_vstat
from .oracle import gibbs_grid_density, inverse_cdf_sampler
from .space import Space, Topology
from .transport import TransportConfig, replay, run_direct, run_map_composition
from .witness import kde_score, silverman_bandwidth

log = logging.getLogger("vtransport")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
NULL_REPS = 5

_TOP_KEYS = {"seed", "out_dir", "space", "init", "functional", "kernel", "transport", "target", "baselines"}
_SPACE_KEYS = {"topology", "dim", "period"}
_KERNEL_KEYS = {"bandwidth"}
_TRANSPORT_KEYS = {
    "alpha", "iters", "n_particles", "lambda", "mode", "safeguard",
    "snapshot_every", "grad_norm_tol", "warm_start", "repro",
}
_FUNCTIONAL_KEYS = {
    "kind", "backend", "tau", "potential", "prior", "target",
    "n_target", "kde_bandwidth", "leave_one_out", "n_prior",
}
_TARGET_KEYS = {
    "source", "law", "n_samples", "mmd_bandwidth", "every", "w2",
    "grid_kl", "kde_bandwidth", "bias_every", "rate_window",
}
_BASELINE_KEYS = {"name", "step", "iters", "bandwidth", "noise", "kde_scores"}
_SOURCES = ("auto", "functional", "law", "gibbs", "none")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass
class TargetConfig:
    """Reference distribution used only for diagnostics."""

    source: str = "auto"
    law: dict | None = None
    n_samples: int = 1000
    mmd_bandwidth: float | str = "median"
    every: int = 1
    w2: bool = False
    grid_kl: bool = False
    kde_bandwidth: float | None = None
    bias_every: int = 0
    rate_window: list | None = None


@dataclass
class BaselineConfig:
    name: str
    step: float
    iters: int
    bandwidth: float | str = "median"
    noise: bool = True
    kde_scores: bool = False


@dataclass
class ExperimentConfig:
    space: Space
    init: dict
    functional: dict
    transport: TransportConfig
    kernel_bandwidth: float | str = "median"
    target: TargetConfig = field(default_factory=TargetConfig)
    baselines: list = field(default_factory=list)
    seed: int = 0
    out_dir: str = "runs/out"


# ------------------------------------------------------------------ parsing
def _unknown(table: dict, allowed: set, prefix: str, errs: list) -> None:
    for k in sorted(set(table) - allowed):
        errs.append(f"{prefix}{k}: unknown key")


def _number(table, key, prefix, errs, *, default=None, positive=False, nonneg=False, integer=False, required=False):
    if key not in table:
        if required:
            errs.append(f"{prefix}{key}: missing required key")
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errs.append(f"{prefix}{key}: expected a number, got {v!r}")
        return default
    if integer and int(v) != v:
        errs.append(f"{prefix}{key}: expected an integer, got {v!r}")
        return default
    if not math.isfinite(v):
        errs.append(f"{prefix}{key}: must be finite")
        return default
    if positive and not v > 0:
        errs.append(f"{prefix}{key}: must be positive, got {v!r}")
    elif nonneg and v < 0:
        errs.append(f"{prefix}{key}: must be nonnegative, got {v!r}")
    return int(v) if integer else float(v)


def _bool(table, key, prefix, errs, default):
    v = table.get(key, default)
    if not isinstance(v, bool):
        errs.append(f"{prefix}{key}: expected true/false, got {v!r}")
        return default
    return v


def _bandwidth(table, key, prefix, errs, default="median"):
    v = table.get(key, default)
    if v == "median":
        return v
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
        errs.append(f"{prefix}{key}: must be \"median\" or a positive number, got {v!r}")
        return default
    return float(v)


def _table(d, key, errs, required=False) -> dict:
    v = d.get(key)
    if v is None:
        if required:
            errs.append(f"{key}: missing required table")
        return {}
    if not isinstance(v, dict):
        errs.append(f"{key}: expected a table")
        return {}
    return v


def _space(t: dict, errs) -> Space | None:
    _unknown(t, _SPACE_KEYS, "space.", errs)
    topo = t.get("topology", "euclidean")
    if topo not in [x.value for x in Topology]:
        errs.append(f"space.topology: must be 'euclidean' or 'torus', got {topo!r}")
        return None
    dim = _number(t, "dim", "space.", errs, required=True, positive=True, integer=True)
    period = _number(t, "period", "space.", errs, default=1.0, positive=True)
    if dim is None or dim <= 0 or period is None or period <= 0:
        return None
    return Space(dim, Topology(topo), period)


def _law(space, t, key, errs):
    try:
        make_sampler(space, t)
    except (ValueError, TypeError) as exc:
        errs.append(f"{key}: {exc}")


def _functional(space, t: dict, errs) -> None:
    p = "functional."
    _unknown(t, _FUNCTIONAL_KEYS, p, errs)
    kind = t.get("kind")
    if kind not in [k.value for k in Kind]:
        errs.append(f"{p}kind: must be one of {[k.value for k in Kind]}, got {kind!r}")
        return
    kind = Kind(kind)
    backend = t.get("backend")
    if backend is not None:
        if backend not in [b.value for b in Backend]:
            errs.append(f"{p}backend: unknown backend {backend!r}")
        elif Backend(backend) not in LEGAL_BACKENDS[kind]:
            allowed = sorted(b.value for b in LEGAL_BACKENDS[kind])
            errs.append(
                f"{p}backend: {backend!r} is not a legal backend for kind {kind.value!r} "
                f"(each kind binds to its own witness solvers; allowed: {allowed})"
            )
    needs_tau = kind is Kind.LINEAR_ENTROPY_KL
    _number(t, "tau", p, errs, positive=True, required=needs_tau)
    if kind in (Kind.LINEAR_LIFTED, Kind.LINEAR_ENTROPY_KL):
        if not isinstance(t.get("potential"), dict):
            errs.append(f"{p}potential: missing required table for kind {kind.value!r}")
        else:
            try:
                make_potential(t["potential"])
            except ValueError as exc:
                errs.append(f"{p}potential: {exc}")
    if needs_tau:
        if not isinstance(t.get("prior"), dict):
            errs.append(f"{p}prior: missing required table for kind {kind.value!r}")
        elif space is not None:
            _law(space, t["prior"], f"{p}prior", errs)
    if kind in (Kind.MMD, Kind.CHI2, Kind.KL):
        if not isinstance(t.get("target"), dict):
            errs.append(f"{p}target: missing required table for kind {kind.value!r}")
        elif space is not None:
            _law(space, t["target"], f"{p}target", errs)
    _number(t, "n_target", p, errs, positive=True, integer=True)
    _number(t, "n_prior", p, errs, positive=True, integer=True)
    _number(t, "kde_bandwidth", p, errs, positive=True)
    _bool(t, "leave_one_out", p, errs, False)


def _target(t: dict, errs) -> TargetConfig:
    p = "target."
    _unknown(t, _TARGET_KEYS, p, errs)
    src = t.get("source", "auto")
    if src not in _SOURCES:
        errs.append(f"{p}source: must be one of {list(_SOURCES)}, got {src!r}")
        src = "auto"
    law = t.get("law")
    if law is not None and not isinstance(law, dict):
        errs.append(f"{p}law: expected a table")
        law = None
    win = t.get("rate_window")
    if win is not None and not (
        isinstance(win, list) and len(win) == 2 and all(isinstance(v, int) and v >= 0 for v in win) and win[0] < win[1]
    ):
        errs.append(f"{p}rate_window: expected [first_iter, last_iter] with first < last")
        win = None
    return TargetConfig(
        source=src,
        law=law,
        n_samples=_number(t, "n_samples", p, errs, default=1000, positive=True, integer=True),
        mmd_bandwidth=_bandwidth(t, "mmd_bandwidth", p, errs),
        every=_number(t, "every", p, errs, default=1, nonneg=True, integer=True),
        w2=_bool(t, "w2", p, errs, False),
        grid_kl=_bool(t, "grid_kl", p, errs, False),
        kde_bandwidth=_number(t, "kde_bandwidth", p, errs, positive=True),
        bias_every=_number(t, "bias_every", p, errs, default=0, nonneg=True, integer=True),
        rate_window=win,
    )


def _transport(t: dict, seed: int, errs) -> TransportConfig | None:
    p = "transport."
    _unknown(t, _TRANSPORT_KEYS, p, errs)
    kw = dict(
        alpha=_number(t, "alpha", p, errs, default=0.1, positive=True),
        iters=_number(t, "iters", p, errs, default=100, nonneg=True, integer=True),
        n_particles=_number(t, "n_particles", p, errs, default=256, positive=True, integer=True),
        lam=_number(t, "lambda", p, errs, positive=True),
        mode=t.get("mode", "direct"),
        safeguard=_bool(t, "safeguard", p, errs, True),
        grad_norm_tol=_number(t, "grad_norm_tol", p, errs, positive=True),
        snapshot_every=_number(t, "snapshot_every", p, errs, default=0, nonneg=True, integer=True),
        warm_start=_bool(t, "warm_start", p, errs, True),
        repro=_bool(t, "repro", p, errs, False),
        seed=seed,
    )
    if kw["mode"] not in ("direct", "map_composition"):
        errs.append(f"{p}mode: must be 'direct' or 'map_composition', got {kw['mode']!r}")
        return None
    try:
        return TransportConfig(**kw)
    except (ValueError, TypeError):
        return None  # already reported key by key


def _baselines(v, errs) -> list:
    if v is None:
        return []
    if not isinstance(v, list):
        errs.append("baselines: expected an array of tables")
        return []
    out = []
    for i, t in enumerate(v):
        p = f"baselines[{i}]."
        if not isinstance(t, dict):
            errs.append(f"baselines[{i}]: expected a table")
            continue
        _unknown(t, _BASELINE_KEYS, p, errs)
        name = t.get("name")
        if name not in ("ula", "svgd"):
            errs.append(f"{p}name: must be 'ula' or 'svgd', got {name!r}")
        step = _number(t, "step", p, errs, required=True, positive=True)
        iters = _number(t, "iters", p, errs, default=500, nonneg=True, integer=True)
        out.append(
            BaselineConfig(
                name=name,
                step=step,
                iters=iters,
                bandwidth=_bandwidth(t, "bandwidth", p, errs),
                noise=_bool(t, "noise", p, errs, True),
                kde_scores=_bool(t, "kde_scores", p, errs, False),
            )
        )
    return out


def config_from_dict(d: dict) -> ExperimentConfig:
    """Validate a config document; raises :class:`ConfigError` listing every problem."""
    errs: list[str] = []
    if not isinstance(d, dict):
        raise ConfigError(["config: expected a table"])
    _unknown(d, _TOP_KEYS, "", errs)
    seed = _number(d, "seed", "", errs, default=0, nonneg=True, integer=True)
    out_dir = d.get("out_dir", "runs/out")
    if not isinstance(out_dir, str) or not out_dir:
        errs.append("out_dir: expected a nonempty path string")
    space = _space(_table(d, "space", errs, required=True), errs)
    init = _table(d, "init", errs, required=True)
    if init and space is not None:
        _law(space, init, "init", errs)
    func = _table(d, "functional", errs, required=True)
    if func:
        _functional(space, func, errs)
    kern = _table(d, "kernel", errs)
    _unknown(kern, _KERNEL_KEYS, "kernel.", errs)
    bw = _bandwidth(kern, "bandwidth", "kernel.", errs)
    transport = _transport(_table(d, "transport", errs), seed or 0, errs)
    target = _target(_table(d, "target", errs), errs)
    if target.law is not None and space is not None:
        _law(space, target.law, "target.law", errs)
    baselines = _baselines(d.get("baselines"), errs)

    if not errs:
        kind = Kind(func["kind"])
        if target.source == "gibbs" and kind is not Kind.LINEAR_ENTROPY_KL:
            errs.append("target.source: 'gibbs' needs functional.kind = 'linear_entropy_kl'")
        if target.source == "gibbs" and (space.is_torus or space.dim > 2):
            errs.append("target.source: 'gibbs' grid oracle supports Euclidean d <= 2")
        if target.source == "law" and target.law is None and "target" not in func:
            errs.append("target.law: required when target.source = 'law'")
        if target.w2 and transport.n_particles != target.n_samples and "target" not in func:
            errs.append("target.w2: needs target.n_samples equal to transport.n_particles")
        if baselines and kind is Kind.LINEAR_LIFTED:
            errs.append("baselines: kind 'linear_lifted' has no target distribution to sample")
        if transport.mode == "map_composition" and transport.snapshot_every < 0:
            errs.append("transport.snapshot_every: must be >= 0")
    if not errs:
        try:
            build_spec(func, space, seed)
        except (ValueError, TypeError, KeyError) as exc:
            errs.append(f"functional: {exc}")
    if errs:
        raise ConfigError(errs)
    return ExperimentConfig(
        space=space,
        init=copy.deepcopy(init),
        functional=copy.deepcopy(func),
        transport=transport,
        kernel_bandwidth=bw,
        target=target,
        baselines=baselines,
        seed=seed,
        out_dir=out_dir,
    )


def _drop_none(d):
    if isinstance(d, dict):
        return {k: _drop_none(v) for k, v in d.items() if v is not None}
    if isinstance(d, list):
        return [_drop_none(v) for v in d]
    return d


def config_to_dict(cfg: ExperimentConfig) -> dict:
    t = asdict(cfg.transport)
    t.pop("seed")
    t["lambda"] = t.pop("lam")
    return _drop_none(
        {
            "seed": cfg.seed,
            "out_dir": cfg.out_dir,
            "space": cfg.space.to_dict(),
            "init": copy.deepcopy(cfg.init),
            "functional": copy.deepcopy(cfg.functional),
            "kernel": {"bandwidth": cfg.kernel_bandwidth},
            "transport": t,
            "target": asdict(cfg.target),
            "baselines": [asdict(b) for b in cfg.baselines],
        }
    )


def parse_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"{path}: {exc}"]) from exc
    return config_from_dict(doc)


# ---------------------------------------------------------------- execution
@dataclass
class _Diagnostics:
    monitor: Monitor
    null_mmd2: float | None = None
    target_label: str = "none"


def _target_law(cfg: ExperimentConfig):
    if cfg.target.law is not None:
        return make_sampler(cfg.space, cfg.target.law)
    if "target" in cfg.functional:
        return make_sampler(cfg.space, cfg.functional["target"])
    return None


def _resolve_source(cfg: ExperimentConfig, spec) -> str:
    src = cfg.target.source
    if src != "auto":
        return src
    if spec.target_samples is not None:
        return "functional"
    if _target_law(cfg) is not None:
        return "law"
    if spec.kind is Kind.LINEAR_ENTROPY_KL and not cfg.space.is_torus and cfg.space.dim <= 2:
        return "gibbs"
    return "none"


def _gibbs_table(cfg, spec):
    return gibbs_grid_density(spec.g, spec.tau, spec.prior.log_density, dim=cfg.space.dim)


def _diagnostics(cfg: ExperimentConfig, spec) -> _Diagnostics:
    tc, space, n = cfg.target, cfg.space, cfg.transport.n_particles
    src = _resolve_source(cfg, spec)
    Y = Ynull = table = None
    if src == "functional":
        Y = spec.target_samples.positions
        law = make_sampler(space, cfg.functional["target"])
        Ynull = law.sample(rng(cfg.seed, STREAM_NULL), n * NULL_REPS)
    elif src == "law":
        law = _target_law(cfg)
        Y = law.sample(rng(cfg.seed, STREAM_DIAG), tc.n_samples)
        Ynull = law.sample(rng(cfg.seed, STREAM_NULL), n * NULL_REPS)
        if tc.grid_kl and space.dim <= 2 and not space.is_torus:
            mean = np.asarray(getattr(law, "mean", 0.0), float)
            table = gibbs_grid_density(lambda x: np.zeros(len(x)), 1.0, law.log_density, dim=space.dim, center=mean)
    elif src == "gibbs":
        table = _gibbs_table(cfg, spec)
        if space.dim == 1:
            Y = inverse_cdf_sampler(table, tc.n_samples, cfg.seed, STREAM_DIAG)
            Ynull = inverse_cdf_sampler(table, n * NULL_REPS, cfg.seed, STREAM_NULL)
    k = None
    if Y is not None:
        bw = median_bandwidth(space, Y) if tc.mmd_bandwidth == "median" else tc.mmd_bandwidth
        k = Kernel(bw, space)
    mon = Monitor(
        target_samples=Y,
        kernel=k,
        every=tc.every,
        w2=tc.w2,
        grid_target=table if tc.grid_kl else None,
        kde_bandwidth=tc.kde_bandwidth,
        bias_every=tc.bias_every,
    )
    null = None
    if Y is not None and Ynull is not None:
        # one null draw is as noisy as the statistic it calibrates; average a few
        null = float(np.mean([mmd2_vstat(k, Y, part) for part in np.split(Ynull, NULL_REPS)]))
    return _Diagnostics(mon, null, src)


def _target_score(cfg: ExperimentConfig, spec, b: BaselineConfig, diag: _Diagnostics) -> ScoreModel:
    if b.kde_scores:
        if diag.monitor.target_samples is None:
            raise ConfigError([f"baselines: kde_scores needs target samples (target.source is {diag.target_label!r})"])
        Yt = Ensemble(diag.monitor.target_samples, cfg.space)
        return kde_score(Yt, Kernel(silverman_bandwidth(Yt), cfg.space))
    if spec.kind is Kind.LINEAR_ENTROPY_KL:
        g, tau, s0 = spec.g, spec.tau, spec.prior.score_model()
        return ScoreModel(lambda x: -g.grad(x) / tau + s0.score(x))
    if spec.kind is Kind.KL:
        return spec.target_score
    law = _target_law(cfg)
    if law is None:
        raise ConfigError(["baselines: no target law with a known score"])
    return law.score_model()


def _run_baseline(cfg, spec, b: BaselineConfig, init: Ensemble, diag: _Diagnostics):
    score = _target_score(cfg, spec, b, diag)
    mon = diag.monitor
    noise = rng(cfg.seed, STREAM_BASELINE_NOISE)
    e = init
    records = []
    for it in range(b.iters + 1):
        t0 = time.perf_counter()
        final = it == b.iters
        rec = IterationRecord(iter=it, alpha_used=None if final else b.step, **mon.measure(e, it, final))
        if not final:
            try:
                if b.name == "ula":
                    e = ula_step(e, score, b.step, noise, noise=b.noise)
                else:
                    h = svgd_bandwidth(e) if b.bandwidth == "median" else b.bandwidth
                    e = svgd_step(e, score, Kernel(h, e.space), b.step)
            except (NumericalError, ValueError) as exc:
                raise NumericalError(f"{b.name} step {it}: {exc}") from exc
        if not cfg.transport.repro:
            rec.wall_ms = 1e3 * (time.perf_counter() - t0)
        records.append(rec)
    return e, records


def _json_safe(v):
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _sha(e: Ensemble) -> str:
    return hashlib.sha256(np.ascontiguousarray(e.positions).tobytes()).hexdigest()


def _versions() -> dict:
    import scipy

    from . import __version__

    return {"vtransport": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def execute(cfg: ExperimentConfig) -> dict:
    """Run transport (and baselines); returns the file payloads keyed by file name."""
    space, tc = cfg.space, cfg.transport
    spec = build_spec(cfg.functional, space, cfg.seed)
    k = None if cfg.kernel_bandwidth == "median" else Kernel(cfg.kernel_bandwidth, space)
    diag = _diagnostics(cfg, spec)
    law = make_sampler(space, cfg.init)
    init = sample_init(space, law, tc.n_particles, cfg.seed)
    if tc.mode == "direct":
        final, records, snaps = run_direct(tc, spec, k, init, diag.monitor)
    else:
        res = run_map_composition(tc, spec, k, law, diag.monitor, space)
        final = replay(tc, res.history, law, space)
        records = res.records
        last = len(res.ensembles) - 1
        se = tc.snapshot_every
        snaps = [(i, e) for i, e in enumerate(res.ensembles) if se and (i % se == 0 or i == last)]
    if not snaps:
        snaps = [(0, init), (records[-1].iter, final)]

    files = {"metrics.csv": records_to_csv(records)}
    summary = {
        "status": "ok",
        "mode": tc.mode,
        "iterations": records[-1].iter,
        "final": records[-1].to_dict(),
        "initial": records[0].to_dict(),
        "diagnostic_target": diag.target_label,
        "mmd2_null": diag.null_mmd2,
        "init_sha256": _sha(init),
    }
    mon = diag.monitor
    if mon.target_samples is not None:
        m = mmd2_vstat(mon.kernel, final.positions, mon.target_samples)
        summary["mmd2_target"] = m
        summary["mmd_bandwidth"] = mon.kernel.h
        if diag.null_mmd2:
            summary["mmd2_ratio_to_null"] = m / diag.null_mmd2
    window = tuple(cfg.target.rate_window) if cfg.target.rate_window else None
    summary["rate_fit"] = rate_fit(records, window)._asdict() if mon.target_samples is not None else None

    base_summary = {}
    for b in cfg.baselines:
        e, brec = _run_baseline(cfg, spec, b, init, diag)
        files[f"metrics_{b.name}.csv"] = records_to_csv(brec)
        entry = {"init_sha256": _sha(init), "final": brec[-1].to_dict()}
        if mon.target_samples is not None:
            entry["mmd2_target"] = mmd2_vstat(mon.kernel, e.positions, mon.target_samples)
        base_summary[b.name] = entry
    if base_summary:
        summary["baselines"] = base_summary
    summary["versions"] = _versions()
    summary["config"] = config_to_dict(cfg)
    files["summary.json"] = json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n"
    files["snapshots.jsonl"] = snaps
    return files


def _write_all(out_dir: Path, files: dict) -> None:
    """Write every payload to a temp file first, then rename them into place."""
    out_dir.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, payload in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out_dir)
            os.close(fd)
            staged.append((tmp, out_dir / name))
            if name.endswith(".jsonl"):
                write_snapshots(tmp, payload)
            else:
                with open(tmp, "w", newline="") as fh:
                    fh.write(payload)
        for tmp, dst in staged:
            os.replace(tmp, dst)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _thread_limit(cfg: ExperimentConfig):
    env = os.environ.get("WT_THREADS")
    n = 1 if cfg.transport.repro else (int(env) if env and env.isdigit() and int(env) > 0 else None)
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def run_experiment(cfg: ExperimentConfig, quiet: bool = True) -> int:
    """Execute ``cfg`` and write its outputs; returns a process exit code."""
    try:
        with _thread_limit(cfg), np.errstate(over="ignore", under="ignore"):
            files = execute(cfg)
    except ConfigError as exc:
        _report("config", exc)
        return EXIT_CONFIG
    except OSError as exc:
        _report("io", exc)
        return EXIT_IO
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        _report("numerical", exc)
        return EXIT_NUMERICAL
    try:
        _write_all(Path(cfg.out_dir), files)
    except OSError as exc:
        _report("io", exc)
        return EXIT_IO
    if not quiet:
        s = json.loads(files["summary.json"])
        msg = f"wrote {cfg.out_dir}: {s['iterations']} iterations"
        if s.get("mmd2_target") is not None:
            msg += f", mmd2_target={s['mmd2_target']:.4g}"
        if s.get("mmd2_null"):
            msg += f" (null {s['mmd2_null']:.4g})"
        print(msg)
    return EXIT_OK


def _report(category: str, exc: Exception) -> None:
    lines = exc.errors if isinstance(exc, ConfigError) else [str(exc)]
    for line in lines:
        print(f"error[{category}]: {line}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vtransport", description="Run a variational transport experiment from a TOML config.")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--mode", choices=["direct", "map"])
    p.add_argument("--backend", choices=[b.value for b in Backend])
    p.add_argument("--repro", action="store_true", help="serial BLAS and no wall-clock column")
    p.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        with open(args.config, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        _report("io", exc)
        return EXIT_IO
    except tomllib.TOMLDecodeError as exc:
        _report("config", ConfigError([f"{args.config}: {exc}"]))
        return EXIT_CONFIG
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out_dir is not None:
        doc["out_dir"] = args.out_dir
    if args.mode is not None:
        doc.setdefault("transport", {})["mode"] = "map_composition" if args.mode == "map" else "direct"
    if args.backend is not None:
        doc.setdefault("functional", {})["backend"] = args.backend
    if args.repro:
        doc.setdefault("transport", {})["repro"] = True
    try:
        cfg = config_from_dict(doc)
    except ConfigError as exc:
        _report("config", exc)
        return EXIT_CONFIG
    return run_experiment(cfg, quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())

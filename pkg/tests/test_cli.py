import json
import os
import subprocess
import sys
from pathlib import Path

import pytest
import tomli_w

from vtransport.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_NUMERICAL,
    ConfigError,
    config_from_dict,
    config_to_dict,
    main,
    parse_config,
    run_experiment,
)
from vtransport.ensemble import read_snapshots
from vtransport.diagnostics import CSV_COLUMNS, records_from_csv

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def small_doc(out_dir, **transport):
    return {
        "seed": 1,
        "out_dir": str(out_dir),
        "space": {"dim": 1},
        "init": {"name": "gaussian", "mean": [-1.0]},
        "functional": {"kind": "mmd", "target": {"name": "gaussian", "mean": [1.0]}, "n_target": 64},
        "kernel": {"bandwidth": 1.0},
        "transport": {"alpha": 0.5, "iters": 5, "n_particles": 64, **transport},
        "target": {"w2": True, "n_samples": 64},
    }


def write(tmp_path, doc, name="cfg.toml"):
    p = tmp_path / name
    p.write_bytes(tomli_w.dumps(doc).encode())
    return p


# ------------------------------------------------------------------ parsing
def test_minimal_config_defaults():
    cfg = parse_config(CONFIGS / "minimal.toml")
    assert cfg.transport.alpha == 0.1 and cfg.transport.iters == 100
    assert cfg.transport.mode == "direct" and cfg.transport.safeguard
    assert cfg.kernel_bandwidth == "median"
    assert cfg.seed == 0 and cfg.baselines == []


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.name)
def test_shipped_configs_parse_and_roundtrip(path):
    cfg = parse_config(path)
    echo = config_to_dict(cfg)
    again = config_from_dict(tomllib.loads(tomli_w.dumps(echo)))
    assert again == cfg


def test_negative_alpha_names_key(tmp_path):
    doc = small_doc(tmp_path)
    doc["transport"]["alpha"] = -1.0
    with pytest.raises(ConfigError) as ei:
        config_from_dict(doc)
    assert any(e.startswith("transport.alpha") for e in ei.value.errors)


def test_illegal_backend(tmp_path):
    doc = small_doc(tmp_path)
    doc["functional"]["backend"] = "rkhs_dual"
    with pytest.raises(ConfigError) as ei:
        config_from_dict(doc)
    assert any("functional.backend" in e and "not a legal backend" in e for e in ei.value.errors)


def test_all_errors_reported(tmp_path):
    doc = small_doc(tmp_path)
    doc["transport"].update(alpha=0.0, iters=1.5, n_particles=-3)
    doc["space"]["bogus"] = 1
    del doc["init"]
    with pytest.raises(ConfigError) as ei:
        config_from_dict(doc)
    errs = "\n".join(ei.value.errors)
    for key in ("transport.alpha", "transport.iters", "transport.n_particles", "space.bogus", "init"):
        assert key in errs


def test_missing_tables():
    with pytest.raises(ConfigError) as ei:
        config_from_dict({})
    assert {e.split(":")[0] for e in ei.value.errors} >= {"space", "init", "functional"}


# ---------------------------------------------------------------- execution
def test_run_writes_outputs(tmp_path):
    out = tmp_path / "run"
    assert run_experiment(config_from_dict(small_doc(out))) == 0
    text = (out / "metrics.csv").read_text()
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    recs = records_from_csv(text)
    assert [r.iter for r in recs] == list(range(6))
    assert all(r.w2_target is not None and r.mmd2_target is not None for r in recs)
    s = json.loads((out / "summary.json").read_text())
    assert s["status"] == "ok" and s["iterations"] == 5
    assert s["mmd2_target"] < s["initial"]["mmd2_target"]
    assert {"versions", "config", "rate_fit", "mmd2_null"} <= set(s)
    assert config_from_dict(s["config"]) == config_from_dict(small_doc(out))
    snaps = read_snapshots(out / "snapshots.jsonl")
    assert [i for i, _ in snaps] == [0, 5]


def test_k0_run(tmp_path):
    out = tmp_path / "k0"
    assert run_experiment(config_from_dict(small_doc(out, iters=0))) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["iterations"] == 0
    assert s["final"] == s["initial"]
    assert len(records_from_csv((out / "metrics.csv").read_text())) == 1


def test_repro_byte_identical(tmp_path):
    p = write(tmp_path, small_doc(tmp_path / "unused", iters=8))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--config", str(p), "--out-dir", str(a), "--repro", "--quiet"]) == 0
    assert main(["--config", str(p), "--out-dir", str(b), "--repro", "--quiet"]) == 0
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert (a / "snapshots.jsonl").read_bytes() == (b / "snapshots.jsonl").read_bytes()


def test_flags_override(tmp_path):
    p = write(tmp_path, small_doc(tmp_path / "x"))
    out = tmp_path / "m"
    assert main(["--config", str(p), "--out-dir", str(out), "--mode", "map", "--seed", "9", "--quiet"]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["mode"] == "map_composition"
    assert s["config"]["seed"] == 9


def test_exit_codes(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "missing.toml")]) == EXIT_IO
    bad = tmp_path / "bad.toml"
    bad.write_text("this is = = not toml")
    assert main(["--config", str(bad)]) == EXIT_CONFIG
    doc = small_doc(tmp_path / "o")
    doc["transport"]["alpha"] = -1.0
    assert main(["--config", str(write(tmp_path, doc))]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "error[config]: transport.alpha" in err
    assert "error[io]" in err


def test_numerical_failure_leaves_no_files(tmp_path, capsys):
    # x <- x - 5x diverges geometrically once the safeguard is off
    doc = {
        "seed": 0,
        "out_dir": str(tmp_path / "nf"),
        "space": {"dim": 1},
        "init": {"name": "gaussian"},
        "functional": {"kind": "linear_lifted", "potential": {"name": "quadratic"}},
        "transport": {"alpha": 5.0, "iters": 1000, "n_particles": 8, "safeguard": False},
    }
    assert run_experiment(config_from_dict(doc)) == EXIT_NUMERICAL
    assert not (tmp_path / "nf").exists()
    err = capsys.readouterr().err
    assert err.startswith("error[numerical]: iteration ")


def test_io_error_exit(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = config_from_dict(small_doc(blocker / "sub"))
    assert run_experiment(cfg) == EXIT_IO


def test_baselines_share_init(tmp_path):
    doc = small_doc(tmp_path / "bl", iters=3)
    doc["functional"] = {"kind": "kl", "target": {"name": "gaussian", "mean": [1.0]}}
    doc["target"] = {"n_samples": 64}
    doc["baselines"] = [{"name": "ula", "step": 0.05, "iters": 5}, {"name": "svgd", "step": 0.1, "iters": 5}]
    assert run_experiment(config_from_dict(doc)) == 0
    s = json.loads((tmp_path / "bl" / "summary.json").read_text())
    hashes = {s["init_sha256"], s["baselines"]["ula"]["init_sha256"], s["baselines"]["svgd"]["init_sha256"]}
    assert len(hashes) == 1
    for name in ("ula", "svgd"):
        assert len(records_from_csv((tmp_path / "bl" / f"metrics_{name}.csv").read_text())) == 6


def test_module_entry_point(tmp_path):
    p = write(tmp_path, small_doc(tmp_path / "sub", iters=1))
    r = subprocess.run(
        [sys.executable, "-m", "vtransport.cli", "--config", str(p), "--quiet"],
        capture_output=True, text=True, env={**os.environ, "WT_THREADS": "1"},
    )
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "sub" / "summary.json").exists()

"""Transport vs SVGD vs ULA from a shared initial ensemble, over several seeds."""

import argparse
import json
import tempfile
from pathlib import Path

from vtransport.cli import main as cli_main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "baselines_gaussian_1d.toml"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    root = Path(tempfile.mkdtemp(prefix="baselines_"))
    print("seed,method,mmd2,ratio_to_null")
    for s in args.seeds:
        out = root / f"seed{s}"
        if cli_main(["--config", str(CONFIG), "--seed", str(s), "--out-dir", str(out), "--quiet"]) != 0:
            raise SystemExit(f"seed {s} failed")
        summ = json.loads((out / "summary.json").read_text())
        null = summ["mmd2_null"]
        rows = {"transport": summ["mmd2_target"]} | {k: v["mmd2_target"] for k, v in summ["baselines"].items()}
        for name, m in rows.items():
            print(f"{s},{name},{m:.4g},{m / null:.3f}")


if __name__ == "__main__":
    main()

"""Entropy-regularised double well over several seeds; compares the final ensemble to the Gibbs law."""

import argparse
import json
import tempfile
from pathlib import Path

from vtransport.cli import main as cli_main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "gibbs_1d.toml"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", type=Path, default=None, help="keep run directories here")
    args = ap.parse_args()

    root = args.out or Path(tempfile.mkdtemp(prefix="gibbs_"))
    print("seed,mmd2,null,ratio,grid_kl")
    for s in args.seeds:
        out = root / f"seed{s}"
        if cli_main(["--config", str(CONFIG), "--seed", str(s), "--out-dir", str(out), "--quiet"]) != 0:
            raise SystemExit(f"seed {s} failed")
        summ = json.loads((out / "summary.json").read_text())
        print(f"{s},{summ['mmd2_target']:.4g},{summ['mmd2_null']:.4g},{summ['mmd2_ratio_to_null']:.3f},{summ['final']['grid_kl']}")


if __name__ == "__main__":
    main()

"""RMSE against the threshold offset for not-MIWAE and MIWAE PPCA, through the CLI sweep.

Equivalent to ``notmiwae sweep --preset ppca`` with the grid below; results
land in ``<out>/results.csv``.
"""

import argparse
import json
import sys
import tempfile

from notmiwae.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--offsets", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75, 1.0])
    ap.add_argument("--iterations", type=int, default=20_000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/offset_sweep")
    args = ap.parse_args()

    cfg = {
        "training": {"iterations": args.iterations},
        "sweep": {"offsets": args.offsets, "seeds": args.seeds, "workers": args.workers},
    }
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as f:
        json.dump(cfg, f)
    return cli_main(["sweep", "--preset", "ppca", "--config", f.name, "--out", args.out, "-v"])


if __name__ == "__main__":
    sys.exit(main())

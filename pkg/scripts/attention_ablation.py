"""Attention on/off over several seeds, then the alpha_A sweep.

Equivalent to ``afog ablate`` followed by ``afog sweep`` on the default split;
writes CSVs and PNG bar charts under --out.

    python3 scripts/attention_ablation.py --out results/ablation [--limit 200]
"""

import argparse
from pathlib import Path

from afog.cli import main as cli


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path("results/ablation"))
    ap.add_argument("--limit", type=int, default=200)
    ap.add_argument("--seeds", default="0 1 2")
    args = ap.parse_args()
    common = ["--limit", str(args.limit), "--seeds", *args.seeds.split()]
    rc = cli(["ablate", *common, "--out", str(args.out / "on_off")])
    rc |= cli(["sweep", *common, "--out", str(args.out / "alpha_sweep")])
    raise SystemExit(rc)


if __name__ == "__main__":
    main()

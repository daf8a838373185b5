"""Benign vs adversarial mAP for each attack mode on the held-out toy split.

    python3 scripts/efficacy_table.py [--limit N] [--out results/efficacy.json]
"""

import argparse
import json
from pathlib import Path

from afog.campaign import run_campaign, summarize
from afog.types import AttackConfig
from afog.victim.reference import reference_detector, test_split

COLUMNS = ("benign_map50", "adversarial_map50", "benign_map", "adversarial_map",
           "vanished_fraction", "median_benign_fp", "median_adversarial_fp", "mean_ssim", "mean_l2")  # fmt: skip


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--limit", type=int, default=200)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    data = test_split()
    items = [(i, img, gt) for i, (img, gt) in enumerate(zip(data.images, data.targets))][: args.limit]
    det = reference_detector()
    rows = {}
    for mode in ("generic", "vanish", "fabricate"):
        records, _, _ = run_campaign(items, det, AttackConfig(mode=mode))
        rows[mode] = {k: summarize(records, det.num_classes)[k] for k in COLUMNS}

    print(f"{'mode':<10}" + "".join(f"{c:>22}" for c in COLUMNS))
    for mode, r in rows.items():
        print(f"{mode:<10}" + "".join(f"{r[c]:>22.4f}" for c in COLUMNS))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()

"""Retrain the bundled toy detector and report its held-out mAP.

    python3 scripts/train_toy_detector.py [--out src/afog/assets/toy_detector.bin]
"""

import argparse
import logging
import time
from pathlib import Path

import numpy as np

from afog.data_io import save_detector
from afog.metrics import EvalProtocol, mean_average_precision
from afog.victim.reference import TRAIN_EPOCHS, bundled_weights_path, test_split, train_split
from afog.victim.toy import train_toy_detector


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=bundled_weights_path())
    ap.add_argument("--epochs", type=int, default=TRAIN_EPOCHS)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    t0 = time.perf_counter()
    det = train_toy_detector(train_split(), args.epochs, seed=args.seed)
    logging.info("trained in %.1fs", time.perf_counter() - t0)

    test = test_split()
    preds = [det.detect(img, 0.05) for img in test.images]
    logging.info("mAP@0.5 %.4f", mean_average_precision(preds, test.targets))
    logging.info("mAP@[.5:.95] %.4f", mean_average_precision(preds, test.targets, EvalProtocol.coco()))
    logging.info("detections/image at 0.5: %.2f", np.mean([len(det.detect(i, 0.5)) for i in test.images]))
    save_detector(det, args.out)
    logging.info("wrote %s (sha256 %s)", args.out, det.checksum()[:16])


if __name__ == "__main__":
    main()

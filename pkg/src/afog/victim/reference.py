"""The bundled reference victim and the fixed toy data splits."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from pathlib import Path

from afog.victim.shapes import ShapesDataset, generate_shapes_dataset

TRAIN_SEED, TRAIN_SIZE = 0, 2000
TEST_SEED, TEST_SIZE = 1, 200
TRAIN_EPOCHS = 15
BUNDLED_WEIGHTS = "toy_detector.bin"


def bundled_weights_path() -> Path:
    return Path(str(resources.files("afog") / "assets" / BUNDLED_WEIGHTS))


@lru_cache(maxsize=1)
def reference_detector():
    from afog.data_io import load_detector

    return load_detector(bundled_weights_path())


def train_split(n: int = TRAIN_SIZE) -> ShapesDataset:
    return generate_shapes_dataset(TRAIN_SEED, n)


@lru_cache(maxsize=2)
def test_split(n: int = TEST_SIZE) -> ShapesDataset:
    return generate_shapes_dataset(TEST_SEED, n)

"""Synthetic shapes detection data: circles, squares and triangles on noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from afog.types import Box, Detection, DetectionSet

CLASS_NAMES = ("circle", "square", "triangle")
IMAGE_SIZE = 128
MIN_SIDE, MAX_SIDE = 18, 44
MAX_OBJECTS = 5


@dataclass
class ShapesDataset:
    images: list[np.ndarray]
    targets: list[DetectionSet]
    seed: int = 0

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i):
        return self.images[i], self.targets[i]

    def split(self, n_first: int) -> tuple["ShapesDataset", "ShapesDataset"]:
        return (
            ShapesDataset(self.images[:n_first], self.targets[:n_first], self.seed),
            ShapesDataset(self.images[n_first:], self.targets[n_first:], self.seed),
        )


def _shape_mask(kind: int, side: int) -> np.ndarray:
    # Pixel-centre sampling on a side x side canvas.
    c = np.arange(side) + 0.5
    yy, xx = np.meshgrid(c, c, indexing="ij")
    if kind == 0:
        r = side / 2.0
        return (xx - r) ** 2 + (yy - r) ** 2 <= r * r
    if kind == 1:
        return np.ones((side, side), dtype=bool)
    # upward isosceles triangle with apex at top centre
    half = side / 2.0
    return np.abs(xx - half) <= yy / 2.0


def _tight_box(mask: np.ndarray, x0: int, y0: int) -> Box:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return Box(float(x0 + cols[0]), float(y0 + rows[0]), float(x0 + cols[-1] + 1), float(y0 + rows[-1] + 1))


def render_scene(rng: np.random.Generator, size: int = IMAGE_SIZE) -> tuple[np.ndarray, DetectionSet]:
    """Draw one image with 1-5 non-overlapping shapes."""
    base = rng.uniform(0.25, 0.75, size=3)
    img = base + rng.normal(0.0, 0.06, size=(size, size, 3))
    n_obj = int(rng.integers(1, MAX_OBJECTS + 1))
    placed: list[tuple[int, int, int]] = []
    items: list[Detection] = []
    for _ in range(n_obj):
        kind = int(rng.integers(0, len(CLASS_NAMES)))
        for _attempt in range(50):
            side = int(rng.integers(MIN_SIDE, MAX_SIDE + 1))
            x0 = int(rng.integers(0, size - side + 1))
            y0 = int(rng.integers(0, size - side + 1))
            # keep a 2px gap so masks never touch and boxes stay tight
            if all(
                x0 + side + 2 <= px or px + ps + 2 <= x0 or y0 + side + 2 <= py or py + ps + 2 <= y0
                for px, py, ps in placed
            ):
                break
        else:
            continue
        mask = _shape_mask(kind, side)
        colour = rng.uniform(0.0, 1.0, size=3)
        # push the colour away from the background so every shape is visible
        gap = colour - base
        if np.abs(gap).max() < 0.35:
            colour = np.where(base > 0.5, base - 0.45, base + 0.45)
        patch = img[y0 : y0 + side, x0 : x0 + side]
        patch[mask] = colour + rng.normal(0.0, 0.02, size=(int(mask.sum()), 3))
        placed.append((x0, y0, side))
        items.append(Detection(_tight_box(mask, x0, y0), kind, 1.0))
    return np.clip(img, 0.0, 1.0), DetectionSet(tuple(items), len(CLASS_NAMES))


def generate_shapes_dataset(seed: int, n: int, size: int = IMAGE_SIZE) -> ShapesDataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    images, targets = [], []
    for _ in range(n):
        img, gt = render_scene(rng, size)
        images.append(img)
        targets.append(gt)
    return ShapesDataset(images, targets, seed)

"""Detector-agnostic victim contract.

Any detector can be attacked once it can (a) produce detections for an image
and (b) return a detection loss against a target set together with the
gradient of that loss with respect to the input pixels.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from afog.types import MODES, DetectionSet, ValidationError


class AdapterError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossSpec:
    mode: str
    targets: DetectionSet

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.mode == "vanish" and len(self.targets):
            raise ValidationError("vanish mode requires an empty target set")


@dataclass(frozen=True)
class LossValues:
    """Victim detection loss of an image against a target set.

    ``bbox`` and ``cls`` are the raw criterion components (both >= 0);
    ``total`` is their sum. ``per_object`` holds one contribution per target.
    """

    total: float
    bbox: float
    cls: float
    per_object: tuple[float, ...] = ()


class VictimAdapter(abc.ABC):
    num_classes: int
    min_size: int = 1
    max_size: int = 4096

    def check_input(self, img: np.ndarray) -> None:
        if img.ndim != 3 or img.shape[2] != 3:
            raise AdapterError(f"expected an (H, W, 3) image, got shape {img.shape}")
        h, w = img.shape[:2]
        if not (self.min_size <= h <= self.max_size and self.min_size <= w <= self.max_size):
            raise AdapterError(f"image size {h}x{w} outside [{self.min_size}, {self.max_size}]")

    @abc.abstractmethod
    def detect(self, img: np.ndarray, conf_threshold: float = 0.5) -> DetectionSet:
        """Deterministic predictions with score >= conf_threshold."""

    @abc.abstractmethod
    def loss_and_gradient(self, img: np.ndarray, spec: LossSpec) -> tuple[LossValues, np.ndarray]:
        """Detection loss of ``img`` against ``spec.targets`` and d(total)/d(img)."""

    def loss(self, img: np.ndarray, spec: LossSpec) -> LossValues:
        return self.loss_and_gradient(img, spec)[0]

    def checksum(self) -> str:
        """Digest of the frozen parameters; must not change during an attack."""
        raise NotImplementedError


def matching_cost(
    preds: DetectionSet, targets: DetectionSet, class_weight: float = 1.0, box_scale: float = 128.0
) -> np.ndarray:
    """Class mismatch indicator plus mean absolute corner distance / box_scale."""
    if len(preds) == 0 or len(targets) == 0:
        return np.zeros((len(preds), len(targets)))
    mismatch = (preds.labels[:, None] != targets.labels[None, :]).astype(np.float64)
    l1 = np.abs(preds.boxes[:, None, :] - targets.boxes[None, :, :]).mean(axis=-1)
    return class_weight * mismatch + l1 / box_scale


def assign(cost: np.ndarray) -> list[tuple[int, int]]:
    """Optimal one-to-one assignment on a rectangular cost matrix."""
    if cost.size == 0:
        return []
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def match_predictions(preds: DetectionSet, targets: DetectionSet, **cost_kw) -> list[tuple[int, int]]:
    return assign(matching_cost(preds, targets, **cost_kw))

"""Shared domain types and geometric primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

MODES = ("generic", "vanish", "fabricate")


class ValidationError(ValueError):
    """Raised when a value violates a type invariant."""


class DegenerateTargetError(ValueError):
    """Raised when a loss needs targets but the target set is empty."""


class NumericalError(ArithmeticError):
    """Raised on non-finite losses or gradients."""

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check an (H, W, C) image with C in {1, 3} and values in [0, 1].

    Returns the input unchanged so it can be used inline.
    """
    if not isinstance(img, np.ndarray):
        raise ValidationError(f"image must be a numpy array, got {type(img).__name__}")
    if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1 or img.shape[2] not in (1, 3):
        raise ValidationError(f"bad shape {img.shape}: expected (H, W, C) with C in {{1, 3}}")
    if not np.issubdtype(img.dtype, np.floating):
        raise ValidationError(f"image dtype must be floating, got {img.dtype}")
    if not np.all(np.isfinite(img)):
        raise ValidationError("non-finite entries in image")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValidationError("value out of [0,1]")
    return img


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in corner form, continuous pixel coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValidationError(f"non-finite box coordinates {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValidationError(f"degenerate box {coords}: need x1 < x2 and y1 < y2")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        return cls(float(x), float(y), float(x + w), float(y + h))

    def to_xywh(self) -> list[float]:
        return [self.x1, self.y1, self.x2 - self.x1, self.y2 - self.y1]


def iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (n, 4) and (m, 4) corner-form arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


@dataclass(frozen=True)
class Detection:
    box: Box
    label: int
    score: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")
        if self.label < 0:
            raise ValidationError(f"negative label {self.label}")


@dataclass(frozen=True)
class DetectionSet:
    """Ordered detections over ``num_classes`` classes; may be empty."""

    items: tuple[Detection, ...] = ()
    num_classes: int = 3

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        for d in self.items:
            if d.label >= self.num_classes:
                raise ValidationError(f"label {d.label} >= num_classes {self.num_classes}")

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[Detection]:
        return iter(self.items)

    def __getitem__(self, i: int) -> Detection:
        return self.items[i]

    @property
    def boxes(self) -> np.ndarray:
        if not self.items:
            return np.zeros((0, 4))
        return np.stack([d.box.as_array() for d in self.items])

    @property
    def labels(self) -> np.ndarray:
        return np.array([d.label for d in self.items], dtype=np.int64)

    @property
    def scores(self) -> np.ndarray:
        return np.array([d.score for d in self.items], dtype=np.float64)

    def filter(self, min_score: float) -> "DetectionSet":
        return DetectionSet(tuple(d for d in self.items if d.score >= min_score), self.num_classes)

    def with_scores(self, score: float) -> "DetectionSet":
        return DetectionSet(tuple(replace(d, score=score) for d in self.items), self.num_classes)

    @classmethod
    def from_arrays(
        cls,
        boxes: np.ndarray,
        labels: Iterable[int],
        scores: Iterable[float] | None = None,
        num_classes: int = 3,
    ) -> "DetectionSet":
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        labels = list(labels)
        scores = [1.0] * len(labels) if scores is None else list(scores)
        items = tuple(
            Detection(Box(*map(float, b)), int(l), float(s)) for b, l, s in zip(boxes, labels, scores)
        )
        return cls(items, num_classes)

    def to_records(self) -> list[dict]:
        return [
            {"box": [d.box.x1, d.box.y1, d.box.x2, d.box.y2], "label": d.label, "score": d.score}
            for d in self.items
        ]

    @classmethod
    def from_records(cls, records: Sequence[dict], num_classes: int) -> "DetectionSet":
        return cls(
            tuple(Detection(Box(*r["box"]), int(r["label"]), float(r["score"])) for r in records),
            num_classes,
        )


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.031
    alpha_p: float = 2.0 / 255.0
    alpha_a: float = 0.1
    iterations: int = 10
    mode: str = "generic"
    conf_threshold: float = 0.5
    gamma: float = 0.5
    seed: int = 0
    attention_enabled: bool = True
    a_max: float = 2.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be > 0")
        if not self.alpha_p > 0:
            raise ValidationError("alpha_p must be > 0")
        if not self.alpha_a >= 0:
            raise ValidationError("alpha_a must be >= 0")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValidationError("iterations (T) must be an integer >= 1")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ValidationError("conf_threshold must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise ValidationError("gamma must lie in (0, 1)")
        if not self.a_max > 0:
            raise ValidationError("a_max must be > 0")


@dataclass(frozen=True)
class MetricBundle:
    l2: float = 0.0
    l0: float = 0.0
    linf: float = 0.0
    ssim: float = 1.0
    mean_distortion: float = 0.0
    wall_time_s: float = 0.0


@dataclass(frozen=True)
class TraceEntry:
    """One iteration of the attack objective, in benign-minus-adversarial form."""

    total: float
    bbox: float
    cls: float


@dataclass
class AttackResult:
    adversarial_image: np.ndarray
    attention: np.ndarray
    perturbation: np.ndarray
    loss_trace: list[TraceEntry]
    benign_detections: DetectionSet
    adversarial_detections: DetectionSet
    metrics: MetricBundle
    per_object_success: list[bool]
    targets: DetectionSet = field(default_factory=DetectionSet)
    degenerate_fallback: bool = False
    config: AttackConfig = field(default_factory=AttackConfig)

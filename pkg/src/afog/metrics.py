"""Detection quality (AP / mAP, per-object success) and imperceptibility metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import convolve2d

from afog.types import Detection, DetectionSet, MetricBundle, ValidationError, iou, iou_matrix

COCO_LADDER = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2).tolist())


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class EvalProtocol:
    """IoU thresholds plus interpolation rule.

    ``interpolation`` is "coco101" (101 recall points) or "voc" (all-point
    area under the precision envelope).
    """

    iou_thresholds: tuple[float, ...] = (0.5,)
    interpolation: str = "coco101"
    num_classes: int = 3

    def __post_init__(self):
        t = tuple(float(v) for v in self.iou_thresholds)
        object.__setattr__(self, "iou_thresholds", t)
        if not t or any(not 0 < v < 1 for v in t) or any(b <= a for a, b in zip(t, t[1:])):
            raise ValidationError("IoU thresholds must be strictly increasing values in (0, 1)")
        if self.interpolation not in ("coco101", "voc"):
            raise ValidationError(f"unknown interpolation {self.interpolation!r}")

    @classmethod
    def coco(cls, num_classes: int = 3) -> "EvalProtocol":
        return cls(COCO_LADDER, "coco101", num_classes)

    @classmethod
    def voc(cls, num_classes: int = 3) -> "EvalProtocol":
        return cls((0.5,), "voc", num_classes)

    @property
    def name(self) -> str:
        if len(self.iou_thresholds) == 1:
            return f"AP@{self.iou_thresholds[0]:.2f}/{self.interpolation}"
        return f"AP@[{self.iou_thresholds[0]:.2f}:{self.iou_thresholds[-1]:.2f}]/{self.interpolation}"


def attack_success(benign_obj: Detection, adv_set: DetectionSet, gamma: float = 0.5) -> bool:
    """An object is falsified unless some adversarial detection keeps its label at IoU >= gamma."""
    if not 0 < gamma < 1:
        raise ValidationError("gamma must lie in (0, 1)")
    return not any(d.label == benign_obj.label and iou(benign_obj.box, d.box) >= gamma for d in adv_set)


def greedy_match(preds: DetectionSet, gts: DetectionSet, iou_threshold: float) -> np.ndarray:
    """Score-ordered greedy matching within one image; returns a TP flag per prediction.

    Each prediction claims the unclaimed same-class GT with the highest IoU,
    provided that IoU reaches the threshold.
    """
    tp = np.zeros(len(preds), dtype=bool)
    if len(preds) == 0 or len(gts) == 0:
        return tp
    ious = iou_matrix(preds.boxes, gts.boxes)
    same = preds.labels[:, None] == gts.labels[None, :]
    ious = np.where(same, ious, -1.0)
    taken = np.zeros(len(gts), dtype=bool)
    for i in np.argsort(-preds.scores, kind="stable"):
        cand = np.where(taken, -1.0, ious[i])
        j = int(np.argmax(cand))
        if cand[j] >= iou_threshold:
            taken[j] = True
            tp[i] = True
    return tp


def interpolated_ap(recall: np.ndarray, precision: np.ndarray, interpolation: str = "coco101") -> float:
    """Area under the monotone precision envelope of a PR curve."""
    if recall.size == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if interpolation == "coco101":
        points = np.linspace(0.0, 1.0, 101)
        idx = np.searchsorted(recall, points, side="left")
        sampled = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
        return float(sampled.mean())
    r = np.concatenate([[0.0], recall])
    return float(np.sum((r[1:] - r[:-1]) * envelope))


def average_precision(
    preds: Sequence[DetectionSet], gts: Sequence[DetectionSet], label: int, iou_threshold: float,
    interpolation: str = "coco101",
) -> float | None:
    """AP for one class; None when the class has no ground truth anywhere."""
    n_gt = sum(int((g.labels == label).sum()) for g in gts)
    if n_gt == 0:
        return None
    scores, flags = [], []
    for p, g in zip(preds, gts):
        pc = DetectionSet(tuple(d for d in p if d.label == label), p.num_classes)
        gc = DetectionSet(tuple(d for d in g if d.label == label), g.num_classes)
        scores.append(pc.scores)
        flags.append(greedy_match(pc, gc, iou_threshold))
    if not scores:
        return 0.0
    scores_all = np.concatenate(scores)
    tp_all = np.concatenate(flags)
    order = np.argsort(-scores_all, kind="stable")
    tp = np.cumsum(tp_all[order])
    fp = np.cumsum(~tp_all[order])
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1)
    return interpolated_ap(recall, precision, interpolation)


def per_class_ap(
    preds: Sequence[DetectionSet], gts: Sequence[DetectionSet], protocol: EvalProtocol
) -> dict[int, list[float]]:
    out: dict[int, list[float]] = {}
    for c in range(protocol.num_classes):
        aps = [average_precision(preds, gts, c, t, protocol.interpolation) for t in protocol.iou_thresholds]
        if aps[0] is not None:
            out[c] = aps
    return out


def mean_average_precision(
    preds: Sequence[DetectionSet], gts: Sequence[DetectionSet], protocol: EvalProtocol | None = None
) -> float:
    protocol = protocol or EvalProtocol()
    if len(preds) != len(gts):
        raise EvaluationError(f"{len(preds)} prediction sets for {len(gts)} ground-truth sets")
    for g in gts:
        if any(d.label >= protocol.num_classes for d in g):
            raise EvaluationError("ground-truth label outside the protocol's class range")
    table = per_class_ap(preds, gts, protocol)
    if not table:
        raise EvaluationError("no ground-truth objects: mAP is undefined")
    per_threshold = np.array(list(table.values())).mean(axis=0)
    return float(per_threshold.mean())


def false_positives(preds: DetectionSet, gts: DetectionSet, iou_threshold: float = 0.5) -> int:
    return int((~greedy_match(preds, gts, iou_threshold)).sum())


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(x: np.ndarray, y: np.ndarray, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows, averaged over channels."""
    if x.shape != y.shape:
        raise ValidationError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape[:2]) < win_size:
        raise ValidationError(f"image smaller than the {win_size}x{win_size} SSIM window")
    w = gaussian_window(win_size, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    vals = []
    for ch in range(x.shape[2]):
        a = x[..., ch].astype(np.float64)
        b = y[..., ch].astype(np.float64)
        filt = lambda z: convolve2d(z, w, mode="valid")  # noqa: E731  (w is symmetric)
        mu_a, mu_b = filt(a), filt(b)
        var_a = filt(a * a) - mu_a**2
        var_b = filt(b * b) - mu_b**2
        cov = filt(a * b) - mu_a * mu_b
        s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


def quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def distortion_metrics(x: np.ndarray, x_adv: np.ndarray, wall_time_s: float = 0.0) -> MetricBundle:
    if x.shape != x_adv.shape:
        raise ValidationError(f"shape mismatch {x.shape} vs {x_adv.shape}")
    d = x_adv.astype(np.float64) - x.astype(np.float64)
    changed = (quantize(x) != quantize(x_adv)).any(axis=-1)
    return MetricBundle(
        l2=float(np.sqrt(np.mean(d**2))),
        l0=float(changed.mean()),
        linf=float(np.abs(d).max()),
        ssim=ssim(x, x_adv) if min(x.shape[:2]) >= 11 else float("nan"),
        mean_distortion=float(np.abs(d).mean()),
        wall_time_s=wall_time_s,
    )


@dataclass
class CampaignSummary:
    """Dataset-level aggregates over per-image attack records."""

    benign_map: float | None
    adversarial_map: float | None
    l2: float
    l0: float
    ssim: float
    mean_distortion: float
    wall_time_s: float
    protocol: str = ""
    extra: dict = field(default_factory=dict)

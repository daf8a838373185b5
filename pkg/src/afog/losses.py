"""Attack objectives and the gradient post-processing used by the updates."""

from __future__ import annotations

import numpy as np

from afog.types import DegenerateTargetError, DetectionSet, NumericalError, TraceEntry
from afog.victim.adapter import LossSpec, LossValues, VictimAdapter


def afog_loss(adapter: VictimAdapter, x_adv: np.ndarray, targets: DetectionSet) -> LossValues:
    """Victim loss of ``x_adv`` against the benign pseudo-ground-truth."""
    if len(targets) == 0:
        raise DegenerateTargetError("generic attack needs at least one benign target")
    return adapter.loss(x_adv, LossSpec("generic", targets))


def vanishing_loss(adapter: VictimAdapter, x_adv: np.ndarray) -> LossValues:
    """Victim loss against the empty set; low when nothing is detected."""
    return adapter.loss(x_adv, LossSpec("vanish", DetectionSet((), adapter.num_classes)))


def fabrication_loss(adapter: VictimAdapter, x_adv: np.ndarray, o_f: DetectionSet) -> LossValues:
    """Victim loss against every raw prediction promoted to full confidence."""
    if len(o_f) == 0:
        raise DegenerateTargetError("fabrication needs a non-empty target set")
    return adapter.loss(x_adv, LossSpec("fabricate", o_f))


def mode_sign(mode: str) -> float:
    """Sign linking the descended objective to the victim loss.

    The generic objective is benign - adversarial (descent raises the victim
    loss); vanish and fabricate negate it (descent lowers the victim loss
    against their synthetic targets).
    """
    return -1.0 if mode == "generic" else 1.0


def objective(mode: str, adv: LossValues, benign: LossValues) -> TraceEntry:
    """Objective in difference form; total = bbox + cls (generic) or -(bbox + cls)."""
    bbox = benign.bbox - adv.bbox
    cls = benign.cls - adv.cls
    total = bbox + cls if mode == "generic" else -(bbox + cls)
    return TraceEntry(total=total, bbox=bbox, cls=cls)


def _check_finite(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite gradient")
    return g


def normalize_gradient(g: np.ndarray) -> np.ndarray:
    """Scale by the max absolute entry; an all-zero input stays zero."""
    g = _check_finite(g)
    m = np.abs(g).max() if g.size else 0.0
    if m == 0.0:
        return np.zeros_like(g)
    return g / m


def sign_gradient(g: np.ndarray) -> np.ndarray:
    return np.sign(_check_finite(g))

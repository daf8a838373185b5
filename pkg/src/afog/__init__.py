"""Attention-focused offensive gradient (AFOG) attacks on object detectors."""

__version__ = "0.1.0"

from afog.engine import build_pseudo_ground_truth, compose_adversarial, init_state, run_attack, step
from afog.types import AttackConfig, AttackResult, Box, Detection, DetectionSet, MetricBundle, iou

__all__ = [
    "AttackConfig",
    "AttackResult",
    "Box",
    "Detection",
    "DetectionSet",
    "MetricBundle",
    "build_pseudo_ground_truth",
    "compose_adversarial",
    "init_state",
    "iou",
    "run_attack",
    "step",
]

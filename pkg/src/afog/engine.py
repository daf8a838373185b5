"""Attention-focused iterative attack loop.

Each iteration queries the victim once for d(loss)/d(x_adv) and pushes it
through the composition x_adv = clip(x + A * P) to obtain the gradients for
the attention map A (H, W) and the perturbation P (H, W, C). A takes a
max-normalised step, P takes a sign step, both in the descent direction of
the mode's objective.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from afog import losses
from afog.metrics import attack_success, distortion_metrics
from afog.types import (
    AttackConfig,
    AttackResult,
    DetectionSet,
    NumericalError,
    TraceEntry,
    ValidationError,
    validate_image,
)
from afog.victim.adapter import LossSpec, LossValues, VictimAdapter

log = logging.getLogger(__name__)


class AttackError(RuntimeError):
    pass


def build_pseudo_ground_truth(benign: DetectionSet, mode: str, conf_threshold: float) -> DetectionSet:
    """Targets for each mode from raw (threshold-0) benign detections."""
    if mode == "generic":
        return benign.filter(conf_threshold)
    if mode == "vanish":
        return DetectionSet((), benign.num_classes)
    if mode == "fabricate":
        return benign.with_scores(1.0)
    raise ValidationError(f"unknown mode {mode!r}")


def compose_adversarial(
    x: np.ndarray, A: np.ndarray, P: np.ndarray, epsilon: float
) -> tuple[np.ndarray, np.ndarray]:
    """Project x + A * P onto the eps-ball around x intersected with [0, 1].

    Returns the image and a boolean mask of coordinates where the projection
    is inactive (gradient passes through).
    """
    if A.shape != x.shape[:2] or P.shape != x.shape:
        raise ValidationError(f"shape mismatch: x {x.shape}, A {A.shape}, P {P.shape}")
    cand = x + A[..., None] * P
    lo, hi = ball_bounds(x, epsilon)
    return np.clip(cand, lo, hi), (cand >= lo) & (cand <= hi)


def ball_bounds(x: np.ndarray, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel [lo, hi] of the eps-ball within [0, 1].

    x + eps can round one ulp beyond the ball, so bounds are nudged inward
    until |bound - x| <= eps holds in floating point.
    """
    lo = np.maximum(x - epsilon, 0.0)
    hi = np.minimum(x + epsilon, 1.0)
    while np.any(bad := x - lo > epsilon):
        lo[bad] = np.nextafter(lo[bad], np.inf)
    while np.any(bad := hi - x > epsilon):
        hi[bad] = np.nextafter(hi[bad], -np.inf)
    return lo, hi


def initial_perturbation(shape, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform draws on (-epsilon, epsilon)."""
    return rng.uniform(-epsilon, epsilon, size=shape)


def chain_gradients(g_adv: np.ndarray, A: np.ndarray, P: np.ndarray, mask: np.ndarray):
    """d/dA and d/dP of a function of x_adv, given its gradient g_adv."""
    gm = g_adv * mask
    return (gm * P).sum(axis=-1), gm * A[..., None]


@dataclass
class AttackState:
    k: int
    A: np.ndarray
    P: np.ndarray
    x: np.ndarray
    x_adv: np.ndarray
    mask: np.ndarray
    targets: DetectionSet
    mode: str
    benign_raw: DetectionSet
    benign_loss: LossValues
    rng: np.random.Generator
    trace: list[TraceEntry] = field(default_factory=list)
    degenerate_fallback: bool = False

    @property
    def spec(self) -> LossSpec:
        return LossSpec(self.mode, self.targets)


def init_state(x: np.ndarray, adapter: VictimAdapter, config: AttackConfig) -> AttackState:
    validate_image(x)
    benign_raw = adapter.detect(x, 0.0)
    mode = config.mode
    targets = build_pseudo_ground_truth(benign_raw, mode, config.conf_threshold)
    fallback = False
    if mode == "generic" and len(targets) == 0:
        # nothing to falsify: attack as fabrication instead and flag it
        log.info("no benign detection above %.2f; falling back to fabricate targets", config.conf_threshold)
        mode = "fabricate"
        targets = build_pseudo_ground_truth(benign_raw, mode, config.conf_threshold)
        fallback = True
    rng = np.random.default_rng(config.seed)
    A = np.ones(x.shape[:2])
    P = initial_perturbation(x.shape, config.epsilon, rng)
    x_adv, mask = compose_adversarial(x, A, P, config.epsilon)
    benign_loss = adapter.loss(x, LossSpec(mode, targets))
    return AttackState(
        k=0, A=A, P=P, x=x, x_adv=x_adv, mask=mask, targets=targets, mode=mode,
        benign_raw=benign_raw, benign_loss=benign_loss, rng=rng, degenerate_fallback=fallback,
    )  # fmt: skip


def step(state: AttackState, adapter: VictimAdapter, config: AttackConfig) -> AttackState:
    """One joint update of A and P; mutates and returns ``state``."""
    try:
        values, g = adapter.loss_and_gradient(state.x_adv, state.spec)
    except NumericalError as e:
        raise NumericalError(str(e), iteration=state.k) from e
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite gradient", iteration=state.k)
    g_obj = losses.mode_sign(state.mode) * g
    dA, dP = chain_gradients(g_obj, state.A, state.P, state.mask)
    if config.attention_enabled:
        state.A = np.clip(state.A - config.alpha_a * losses.normalize_gradient(dA), 0.0, config.a_max)
    state.P = state.P - config.alpha_p * losses.sign_gradient(dP)
    state.x_adv, state.mask = compose_adversarial(state.x, state.A, state.P, config.epsilon)
    state.trace.append(losses.objective(state.mode, values, state.benign_loss))
    state.k += 1
    return state


def run_attack(
    x: np.ndarray, adapter: VictimAdapter, config: AttackConfig, image_id: object = None
) -> AttackResult:
    try:
        t0 = time.perf_counter()
        state = init_state(x, adapter, config)
        for _ in range(config.iterations):
            step(state, adapter, config)
        elapsed = time.perf_counter() - t0
    except (NumericalError, ValidationError) as e:
        raise AttackError(f"image {image_id}: {e}") from e
    benign = state.benign_raw.filter(config.conf_threshold)
    adversarial = adapter.detect(state.x_adv, config.conf_threshold)
    return AttackResult(
        adversarial_image=state.x_adv,
        attention=state.A,
        perturbation=state.P,
        loss_trace=state.trace,
        benign_detections=benign,
        adversarial_detections=adversarial,
        metrics=distortion_metrics(x, state.x_adv, wall_time_s=elapsed),
        per_object_success=[attack_success(o, adversarial, config.gamma) for o in benign],
        targets=state.targets,
        degenerate_fallback=state.degenerate_fallback,
        config=config,
    )

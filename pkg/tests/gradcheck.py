"""Central finite-difference oracle for the toy victim and the engine's chain rule.

The set criterion is piecewise smooth: |.|, min/max and clamp switch branch
when a matched predicted coordinate crosses its target coordinate, and the
projection switches when x + A*P crosses the eps-ball. A central difference
only approximates the derivative when no branch switch happens inside the
stencil, so every sample reports whether its stencil is smooth by comparing
exact branch signatures at -h, 0 and +h.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch.nn import functional as F

from afog.engine import ball_bounds, compose_adversarial
from afog.victim.adapter import LossSpec
from afog.victim.toy import ToyDetector, _targets_to_tensors, match_queries

REL_FLOOR = 1e-8


@dataclass
class Sample:
    index: tuple
    fd: float
    grad: float
    smooth: bool

    @property
    def rel_err(self) -> float:
        return abs(self.fd - self.grad) / max(abs(self.fd), abs(self.grad), REL_FLOOR)


def branch_signature(det: ToyDetector, img: np.ndarray, spec: LossSpec) -> tuple:
    """Matching plus the sign of every branch condition in the matched box terms."""
    with torch.no_grad():
        logits, boxes = det.net(det._tensor(img))
    labels, tboxes = _targets_to_tensors(spec.targets, torch.float64)
    if len(spec.targets) == 0:
        return ()
    logp = F.log_softmax(logits[0], dim=-1)
    pairs = match_queries(logp, boxes[0], labels, tboxes, float(max(img.shape[:2])))
    q = [p[0] for p in pairs]
    t = [p[1] for p in pairs]
    pb, tb = boxes[0][q].numpy(), tboxes[t].numpy()
    iw = np.minimum(pb[:, 2], tb[:, 2]) - np.maximum(pb[:, 0], tb[:, 0])
    ih = np.minimum(pb[:, 3], tb[:, 3]) - np.maximum(pb[:, 1], tb[:, 1])
    return tuple(pairs), np.sign(pb - tb).tobytes(), np.sign(iw).tobytes(), np.sign(ih).tobytes()


def check_input_gradient(det, img, spec, n, rng, h=1e-3) -> list[Sample]:
    _, g = det.loss_and_gradient(img, spec)
    sig0 = branch_signature(det, img, spec)
    out = []
    for _ in range(n):
        idx = tuple(int(rng.integers(s)) for s in img.shape)
        xp, xm = img.copy(), img.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (det.loss(xp, spec).total - det.loss(xm, spec).total) / (2 * h)
        smooth = branch_signature(det, xp, spec) == sig0 == branch_signature(det, xm, spec)
        out.append(Sample(idx, fd, float(g[idx]), smooth))
    return out


def _projection_sides(x, A, P, eps):
    cand = x + A[..., None] * P
    lo, hi = ball_bounds(x, eps)
    return (np.sign(cand - lo) + np.sign(cand - hi)).tobytes()


def check_chain_gradient(det, x, A, P, eps, spec, target, n, rng, h=1e-3) -> list[Sample]:
    """Finite differences of loss(compose(x, A, P)) in A or P against the chain rule."""
    from afog.engine import chain_gradients

    x_adv, mask = compose_adversarial(x, A, P, eps)
    _, g = det.loss_and_gradient(x_adv, spec)
    dA, dP = chain_gradients(g, A, P, mask)
    grad = dA if target == "A" else dP

    def loss_at(A_, P_):
        xa, _ = compose_adversarial(x, A_, P_, eps)
        return det.loss(xa, spec).total, branch_signature(det, xa, spec), _projection_sides(x, A_, P_, eps)

    base = loss_at(A, P)[1:]
    out = []
    for _ in range(n):
        idx = tuple(int(rng.integers(s)) for s in grad.shape)
        vals = []
        for d in (h, -h):
            A_, P_ = A.copy(), P.copy()
            (A_ if target == "A" else P_)[idx] += d
            vals.append(loss_at(A_, P_))
        fd = (vals[0][0] - vals[1][0]) / (2 * h)
        smooth = vals[0][1:] == base == vals[1][1:]
        out.append(Sample(idx, fd, float(grad[idx]), smooth))
    return out

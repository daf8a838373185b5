"""Small differentiable set-prediction detector used as the reference victim.

One query per cell of a stride-16 grid predicts (K + 1) class logits (the last
one is "no object") and a box. Training and attack losses share the same
Hungarian-matched criterion: cross-entropy on every query plus
L1 + (1 - IoU) on matched pairs.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from afog.types import DetectionSet, NumericalError
from afog.victim.adapter import AdapterError, LossSpec, LossValues, VictimAdapter, assign
from afog.victim.shapes import ShapesDataset

log = logging.getLogger(__name__)

STRIDE = 16
L1_WEIGHT = 5.0
IOU_WEIGHT = 2.0
NO_OBJECT_WEIGHT = 0.1


@dataclass(frozen=True)
class ToyConfig:
    num_classes: int = 3
    width: int = 32
    image_size: int = 128


class ToyNet(nn.Module):
    def __init__(self, cfg: ToyConfig):
        super().__init__()
        w = cfg.width
        self.cfg = cfg
        self.backbone = nn.Sequential(
            nn.Conv2d(3, w // 2, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(w // 2, w, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 3, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 3, padding=2, dilation=2), nn.SiLU(),
        )  # fmt: skip
        self.cls_head = nn.Conv2d(2 * w, cfg.num_classes + 1, 1)
        self.box_head = nn.Conv2d(2 * w, 4, 1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, 3, H, W) in [0, 1] -> logits (B, N, K+1), corner boxes (B, N, 4) in pixels."""
        feat = self.backbone(x - 0.5)
        b, _, gh, gw = feat.shape
        logits = self.cls_head(feat).flatten(2).transpose(1, 2)
        t = self.box_head(feat).flatten(2).transpose(1, 2)
        gy, gx = torch.meshgrid(
            torch.arange(gh, dtype=x.dtype), torch.arange(gw, dtype=x.dtype), indexing="ij"
        )
        ax = ((gx.flatten() + 0.5) * STRIDE).expand(b, -1)
        ay = ((gy.flatten() + 0.5) * STRIDE).expand(b, -1)
        cx = ax + 2 * STRIDE * torch.tanh(t[..., 0])
        cy = ay + 2 * STRIDE * torch.tanh(t[..., 1])
        bw = gw * STRIDE * torch.sigmoid(t[..., 2] - 1.0)
        bh = gh * STRIDE * torch.sigmoid(t[..., 3] - 1.0)
        boxes = torch.stack([cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2], dim=-1)
        return logits, boxes


def box_iou_pairs(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """IoU between matching rows of (n, 4) and (n, 4)."""
    iw = (torch.minimum(a[:, 2], b[:, 2]) - torch.maximum(a[:, 0], b[:, 0])).clamp(min=0)
    ih = (torch.minimum(a[:, 3], b[:, 3]) - torch.maximum(a[:, 1], b[:, 1])).clamp(min=0)
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a + area_b - inter)


def match_queries(
    logp: torch.Tensor, boxes: torch.Tensor, target_labels: torch.Tensor, target_boxes: torch.Tensor, scale: float
) -> list[tuple[int, int]]:
    """Optimal query-to-target assignment (no gradient flows through it)."""
    with torch.no_grad():
        prob = logp.exp()
        l1 = (boxes[:, None, :] - target_boxes[None, :, :]).abs().sum(-1) / scale
        n, m = boxes.shape[0], target_boxes.shape[0]
        iou = box_iou_pairs(
            boxes[:, None, :].expand(n, m, 4).reshape(-1, 4), target_boxes[None].expand(n, m, 4).reshape(-1, 4)
        ).reshape(n, m)
        cost = -prob[:, target_labels] + L1_WEIGHT * l1 + IOU_WEIGHT * (1 - iou)
        return assign(cost.numpy())


def set_criterion(
    logits: torch.Tensor,
    boxes: torch.Tensor,
    target_labels: torch.Tensor,
    target_boxes: torch.Tensor,
    scale: float,
) -> tuple[torch.Tensor, torch.Tensor, list[torch.Tensor]]:
    """Hungarian-matched detection loss for a single image.

    Returns (bbox, cls, per_object) where per_object[j] is the loss share of
    target j (its matched query's cross-entropy plus box terms).
    """
    n, k1 = logits.shape
    no_object = k1 - 1
    logp = F.log_softmax(logits, dim=-1)
    m = target_labels.shape[0]
    cls_target = torch.full((n,), no_object, dtype=torch.long)
    weight = torch.full((n,), NO_OBJECT_WEIGHT, dtype=logits.dtype)
    per_object = [logits.new_zeros(()) for _ in range(m)]
    bbox = logits.new_zeros(())
    if m:
        pairs = match_queries(logp, boxes, target_labels, target_boxes, scale)
        q = torch.tensor([p[0] for p in pairs], dtype=torch.long)
        t = torch.tensor([p[1] for p in pairs], dtype=torch.long)
        cls_target[q] = target_labels[t]
        weight[q] = 1.0
        pb, tb = boxes[q], target_boxes[t]
        box_terms = L1_WEIGHT * (pb - tb).abs().sum(-1) / scale + IOU_WEIGHT * (1 - box_iou_pairs(pb, tb))
        bbox = box_terms.sum()
    ce = -logp[torch.arange(n), cls_target] * weight
    cls = ce.sum()
    if m:
        for i, (qi, tj) in enumerate(pairs):
            per_object[tj] = ce[qi] + box_terms[i]
    return bbox, cls, per_object


def _targets_to_tensors(targets: DetectionSet, dtype) -> tuple[torch.Tensor, torch.Tensor]:
    return (
        torch.as_tensor(targets.labels, dtype=torch.long),
        torch.as_tensor(targets.boxes, dtype=dtype).reshape(-1, 4),
    )


class ToyDetector(VictimAdapter):
    """Frozen float64 toy detector implementing the victim contract."""

    min_size = STRIDE

    def __init__(self, net: ToyNet):
        self.config = net.cfg
        self.num_classes = net.cfg.num_classes
        self.net = net.double().eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    @property
    def num_queries(self) -> int:
        g = self.config.image_size // STRIDE
        return g * g

    def check_input(self, img: np.ndarray) -> None:
        super().check_input(img)
        if img.shape[0] % STRIDE or img.shape[1] % STRIDE:
            raise AdapterError(f"image sides must be multiples of {STRIDE}, got {img.shape[:2]}")

    def _tensor(self, img: np.ndarray, grad: bool = False) -> torch.Tensor:
        self.check_input(img)
        t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float64)).permute(2, 0, 1)[None]
        return t.clone().requires_grad_(True) if grad else t

    def raw_outputs(self, img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with torch.no_grad():
            logits, boxes = self.net(self._tensor(img))
        return logits[0].numpy(), boxes[0].numpy()

    def detect(self, img: np.ndarray, conf_threshold: float = 0.5) -> DetectionSet:
        logits, boxes = self.raw_outputs(img)
        return decode(logits, boxes, conf_threshold, self.num_classes, img.shape[:2])

    def loss_and_gradient(self, img: np.ndarray, spec: LossSpec) -> tuple[LossValues, np.ndarray]:
        x = self._tensor(img, grad=True)
        logits, boxes = self.net(x)
        labels, tboxes = _targets_to_tensors(spec.targets, torch.float64)
        bbox, cls, per_object = set_criterion(logits[0], boxes[0], labels, tboxes, float(max(img.shape[:2])))
        total = bbox + cls
        if not torch.isfinite(total):
            raise NumericalError(f"non-finite victim loss {total.item()}")
        (grad,) = torch.autograd.grad(total, x)
        g = grad[0].permute(1, 2, 0).numpy()
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite input gradient")
        values = LossValues(
            total=total.item(),
            bbox=bbox.item(),
            cls=cls.item(),
            per_object=tuple(p.item() for p in per_object),
        )
        return values, np.ascontiguousarray(g)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self.net.state_dict().items():
            h.update(name.encode())
            h.update(t.detach().numpy().tobytes())
        return h.hexdigest()


def decode(logits: np.ndarray, boxes: np.ndarray, conf_threshold: float, num_classes: int, hw) -> DetectionSet:
    z = logits - logits.max(axis=-1, keepdims=True)
    prob = np.exp(z)
    prob /= prob.sum(axis=-1, keepdims=True)
    fg = prob[:, :num_classes]
    labels = fg.argmax(axis=-1)
    scores = fg.max(axis=-1)
    h, w = hw
    clipped = boxes.copy()
    clipped[:, [0, 2]] = np.clip(clipped[:, [0, 2]], 0, w)
    clipped[:, [1, 3]] = np.clip(clipped[:, [1, 3]], 0, h)
    keep = (scores >= conf_threshold) & (clipped[:, 2] > clipped[:, 0]) & (clipped[:, 3] > clipped[:, 1])
    return DetectionSet.from_arrays(clipped[keep], labels[keep], scores[keep], num_classes)


def train_toy_detector(
    data: ShapesDataset,
    epochs: int,
    seed: int = 0,
    batch_size: int = 16,
    lr: float = 3e-3,
    cfg: ToyConfig | None = None,
) -> ToyDetector:
    """Train a ToyNet on ``data``; the returned detector is frozen."""
    if len(data) == 0:
        raise ValueError("training data is empty")
    cfg = cfg or ToyConfig(image_size=data.images[0].shape[0])
    torch.manual_seed(seed)
    net = ToyNet(cfg)
    if epochs <= 0:
        return ToyDetector(net)
    rng = np.random.default_rng(seed)
    images = torch.from_numpy(np.stack(data.images).astype(np.float32)).permute(0, 3, 1, 2).contiguous()
    targets = [_targets_to_tensors(t, torch.float32) for t in data.targets]
    steps_per_epoch = max(1, -(-len(data) // batch_size))
    opt = torch.optim.AdamW(net.parameters(), lr=lr, weight_decay=1e-4)
    sched = torch.optim.lr_scheduler.OneCycleLR(
        opt, max_lr=lr, total_steps=epochs * steps_per_epoch, pct_start=0.15
    )
    scale = float(cfg.image_size)
    net.train()
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        running = 0.0
        for s in range(steps_per_epoch):
            idx = order[s * batch_size : (s + 1) * batch_size]
            logits, boxes = net(images[idx])
            loss = logits.new_zeros(())
            for b, i in enumerate(idx):
                bbox, cls, _ = set_criterion(logits[b], boxes[b], *targets[i], scale)
                loss = loss + bbox + cls
            loss = loss / len(idx)
            if not torch.isfinite(loss):
                raise NumericalError(f"training diverged at epoch {epoch}, step {s}")
            opt.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(net.parameters(), 5.0)
            opt.step()
            sched.step()
            running += loss.item()
        log.info("epoch %d loss %.4f", epoch, running / steps_per_epoch)
    return ToyDetector(net)


def config_dict(cfg: ToyConfig) -> dict:
    return asdict(cfg)

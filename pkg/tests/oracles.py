"""Independent reference implementations used as test oracles.

None of these share code with the package beyond the data types: they
recompute each quantity the slow, literal way.
"""

import numpy as np

from afog.metrics import gaussian_window
from afog.types import Box, Detection, DetectionSet, iou


def brute_force_iou(a: Box, b: Box, res: int = 600) -> float:
    """Count sample points of a fine grid covering both boxes."""
    lo_x, hi_x = min(a.x1, b.x1), max(a.x2, b.x2)
    lo_y, hi_y = min(a.y1, b.y1), max(a.y2, b.y2)
    xs = lo_x + (np.arange(res) + 0.5) * (hi_x - lo_x) / res
    ys = lo_y + (np.arange(res) + 0.5) * (hi_y - lo_y) / res
    X, Y = np.meshgrid(xs, ys)
    in_a = (X >= a.x1) & (X < a.x2) & (Y >= a.y1) & (Y < a.y2)
    in_b = (X >= b.x1) & (X < b.x2) & (Y >= b.y1) & (Y < b.y2)
    union = (in_a | in_b).sum()
    return float((in_a & in_b).sum() / union) if union else 0.0


def lattice_iou(a: Box, b: Box, sub: int = 4) -> float:
    """Pixel-grid IoU with ``sub`` samples per unit; exact on a 1/sub lattice."""
    lo_x, lo_y = min(a.x1, b.x1), min(a.y1, b.y1)
    nx = int(round((max(a.x2, b.x2) - lo_x) * sub))
    ny = int(round((max(a.y2, b.y2) - lo_y) * sub))
    X, Y = np.meshgrid(lo_x + (np.arange(nx) + 0.5) / sub, lo_y + (np.arange(ny) + 0.5) / sub)
    in_a = (X >= a.x1) & (X < a.x2) & (Y >= a.y1) & (Y < a.y2)
    in_b = (X >= b.x1) & (X < b.x2) & (Y >= b.y1) & (Y < b.y2)
    return float((in_a & in_b).sum() / (in_a | in_b).sum())


def oracle_ap(preds, gts, thr, interpolation="coco101"):
    """PR points from every score-ordered prefix, then direct interpolation."""
    flat = [(d.score, img, j) for img, p in enumerate(preds) for j, d in enumerate(p)]
    flat.sort(key=lambda t: -t[0])
    n_gt = sum(len(g) for g in gts)
    points = []
    for k in range(1, len(flat) + 1):
        tp = 0
        for img in range(len(gts)):
            mine = sorted([t for t in flat[:k] if t[1] == img], key=lambda t: -t[0])
            used = set()
            for _, _, j in mine:
                box = preds[img][j]
                best, best_iou = None, -1.0
                for g_idx, g in enumerate(gts[img]):
                    if g_idx in used or g.label != box.label:
                        continue
                    v = iou(box.box, g.box)
                    if v > best_iou:
                        best, best_iou = g_idx, v
                if best is not None and best_iou >= thr:
                    used.add(best)
                    tp += 1
        points.append((tp / n_gt, tp / k))
    if interpolation == "coco101":
        vals = []
        for r in np.linspace(0, 1, 101):
            ps = [p for rec, p in points if rec >= r]
            vals.append(max(ps) if ps else 0.0)
        return float(np.mean(vals))
    area, prev = 0.0, 0.0
    for i, (rec, _) in enumerate(points):
        area += (rec - prev) * max(p for _, p in points[i:])
        prev = rec
    return area


def literal_ssim(x, y, win=11, sigma=1.5):
    w = gaussian_window(win, sigma)
    c1, c2 = 0.01**2, 0.03**2
    h, wd, ch = x.shape
    vals = []
    for c in range(ch):
        for i in range(h - win + 1):
            for j in range(wd - win + 1):
                a = x[i : i + win, j : j + win, c]
                b = y[i : i + win, j : j + win, c]
                ma, mb = (w * a).sum(), (w * b).sum()
                va = (w * (a - ma) ** 2).sum()
                vb = (w * (b - mb) ** 2).sum()
                cov = (w * (a - ma) * (b - mb)).sum()
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    # channels have equal window counts, so the flat mean is the channel mean
    return float(np.mean(vals))


def random_instance(rng, n_pred, n_gt, n_img=1):
    grid = [Box(x, y, x + w, y + w) for x in (0, 6, 14) for y in (0, 8) for w in (10, 14)]
    gts = [[] for _ in range(n_img)]
    preds = [[] for _ in range(n_img)]
    for _ in range(n_gt):
        gts[rng.integers(n_img)].append(Detection(grid[rng.integers(len(grid))], 0, 1.0))
    for _ in range(n_pred):
        preds[rng.integers(n_img)].append(Detection(grid[rng.integers(len(grid))], 0, float(rng.uniform())))
    return [DetectionSet(tuple(p), 1) for p in preds], [DetectionSet(tuple(g), 1) for g in gts]


def plain_sign_attack(x, det, spec, eps, alpha, iters, seed, sign):
    """Iterative signed-gradient attack written without the engine's helpers."""
    P = np.random.default_rng(seed).uniform(-eps, eps, size=x.shape)
    lo, hi = np.maximum(x - eps, 0.0), np.minimum(x + eps, 1.0)
    # step rounded bounds back inside the ball, one ulp at a time
    for _ in range(4):
        lo = np.where(x - lo > eps, np.nextafter(lo, 1.0), lo)
        hi = np.where(hi - x > eps, np.nextafter(hi, 0.0), hi)
    assert np.all(x - lo <= eps) and np.all(hi - x <= eps)
    for _ in range(iters):
        cand = x + P
        x_adv = np.minimum(np.maximum(cand, lo), hi)
        _, g = det.loss_and_gradient(x_adv, spec)
        inside = (cand >= lo) & (cand <= hi)
        P = P - alpha * np.sign(sign * g * inside)
    return P, np.minimum(np.maximum(x + P, lo), hi)

import numpy as np
import pytest

from afog.victim.shapes import CLASS_NAMES, _shape_mask, _tight_box, generate_shapes_dataset


def test_deterministic():
    a, b = generate_shapes_dataset(0, 10), generate_shapes_dataset(0, 10)
    for (ia, ga), (ib, gb) in zip(zip(a.images, a.targets), zip(b.images, b.targets)):
        assert np.array_equal(ia, ib)
        assert ga == gb


def test_invariants():
    data = generate_shapes_dataset(5, 60)
    for img, gt in zip(data.images, data.targets):
        assert img.shape == (128, 128, 3)
        assert img.min() >= 0.0 and img.max() <= 1.0
        assert 1 <= len(gt) <= 5
        for d in gt:
            assert 0 <= d.box.x1 < d.box.x2 <= 128
            assert 0 <= d.box.y1 < d.box.y2 <= 128
            assert d.label in range(len(CLASS_NAMES))


@pytest.mark.parametrize("kind", [0, 1, 2])
@pytest.mark.parametrize("side", [18, 31, 44])
def test_boxes_are_tight(kind, side):
    mask = _shape_mask(kind, side)
    box = _tight_box(mask, 7, 3)
    ys, xs = np.nonzero(mask)
    assert (box.x1, box.y1) == (7 + xs.min(), 3 + ys.min())
    assert (box.x2, box.y2) == (7 + xs.max() + 1, 3 + ys.max() + 1)


def test_shapes_stand_out_from_the_background():
    data = generate_shapes_dataset(2, 20)
    for img, gt in zip(data.images, data.targets):
        for d in gt:
            x1, y1, x2, y2 = map(int, (d.box.x1, d.box.y1, d.box.x2, d.box.y2))
            ring = np.zeros(img.shape[:2], dtype=bool)
            ring[max(y1 - 1, 0) : y2 + 1, max(x1 - 1, 0) : x2 + 1] = True
            ring[y1:y2, x1:x2] = False
            if not ring.any():
                continue
            centre = img[(y1 + y2) // 2, (x1 + x2) // 2]
            background = img[ring].mean(axis=0)
            # the centre pixel always lies inside the shape
            assert np.abs(centre - background).max() > 0.2


def test_class_histogram_roughly_uniform():
    data = generate_shapes_dataset(11, 3000)
    labels = np.concatenate([gt.labels for gt in data.targets])
    frac = np.bincount(labels, minlength=3) / labels.size
    assert np.all((frac >= 0.28) & (frac <= 0.39)), frac


def test_n_must_be_positive():
    with pytest.raises(ValueError):
        generate_shapes_dataset(0, 0)

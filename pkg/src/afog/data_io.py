"""Dataset ingestion, detector blobs, attack artifacts and reports."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable

import numpy as np
import torch
from PIL import Image as PILImage

from afog.metrics import quantize
from afog.types import AttackResult, Box, Detection, DetectionSet, ValidationError
from afog.victim.shapes import CLASS_NAMES, ShapesDataset
from afog.victim.toy import ToyConfig, ToyDetector, ToyNet

REPORT_SCHEMA_VERSION = 1
BLOB_MAGIC = b"AFOGTOY\x00"
BLOB_VERSION = 1


class IngestionError(ValueError):
    pass


# -- images -----------------------------------------------------------------


def save_png(img: np.ndarray, path: Path | str) -> Path:
    path = Path(path)
    arr = quantize(img)
    if arr.shape[-1] == 1:
        arr = arr[..., 0]
    PILImage.fromarray(arr).save(path, format="PNG")
    return path


def load_png(path: Path | str) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


# -- detector blob ------------------------------------------------------------


def save_detector(det: ToyDetector, path: Path | str) -> Path:
    """Write magic, version, JSON header length, JSON header, raw tensors."""
    tensors = []
    payload = bytearray()
    for name, t in det.net.state_dict().items():
        arr = t.detach().cpu().numpy().astype(np.float64)
        as32 = arr.astype(np.float32)
        dtype = "float32" if np.array_equal(as32.astype(np.float64), arr) else "float64"
        data = (as32 if dtype == "float32" else arr).astype("<" + ("f4" if dtype == "float32" else "f8"))
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": dtype, "nbytes": data.nbytes})
        payload += data.tobytes()
    header = json.dumps(
        {"format_version": BLOB_VERSION, "config": vars(det.config).copy(), "tensors": tensors},
        sort_keys=True,
    ).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(BLOB_MAGIC)
        fh.write(struct.pack("<HI", BLOB_VERSION, len(header)))
        fh.write(header)
        fh.write(bytes(payload))
    return path


def load_detector(path: Path | str) -> ToyDetector:
    raw = Path(path).read_bytes()
    if not raw.startswith(BLOB_MAGIC):
        raise IngestionError(f"{path}: not a detector blob")
    version, hlen = struct.unpack_from("<HI", raw, len(BLOB_MAGIC))
    if version > BLOB_VERSION:
        raise IngestionError(f"{path}: blob version {version} is newer than supported {BLOB_VERSION}")
    offset = len(BLOB_MAGIC) + struct.calcsize("<HI")
    header = json.loads(raw[offset : offset + hlen])
    offset += hlen
    net = ToyNet(ToyConfig(**header["config"]))
    state = {}
    for spec in header["tensors"]:
        dt = "<f4" if spec["dtype"] == "float32" else "<f8"
        arr = np.frombuffer(raw, dtype=dt, count=int(np.prod(spec["shape"])), offset=offset)
        state[spec["name"]] = torch.from_numpy(arr.astype(np.float64).reshape(spec["shape"]))
        offset += spec["nbytes"]
    net.double().load_state_dict(state)
    return ToyDetector(net)


# -- COCO-style datasets ------------------------------------------------------


def save_dataset(data: ShapesDataset, out_dir: Path | str, class_names: Iterable[str] = CLASS_NAMES) -> Path:
    """Write images/NNNNNN.png and annotations.json; returns the annotation path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    images, annotations = [], []
    for i, (img, gt) in enumerate(zip(data.images, data.targets)):
        name = f"{i:06d}.png"
        save_png(img, out / "images" / name)
        images.append({"id": i, "file_name": name, "width": img.shape[1], "height": img.shape[0]})
        for d in gt:
            annotations.append(
                {"id": len(annotations) + 1, "image_id": i, "bbox": d.box.to_xywh(), "category_id": d.label + 1}
            )
    doc = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": k + 1, "name": n} for k, n in enumerate(class_names)],
    }
    path = out / "annotations.json"
    path.write_text(json.dumps(doc, indent=1))
    return path


def load_dataset(annotation_path: Path | str, image_dir: Path | str) -> list[tuple[int, np.ndarray, DetectionSet]]:
    """Load a COCO-subset file into (image_id, image, ground truth) triples.

    Category ids are mapped to contiguous labels in ascending id order.
    """
    try:
        doc = json.loads(Path(annotation_path).read_text())
    except json.JSONDecodeError as e:
        raise IngestionError(f"{annotation_path}: malformed JSON ({e})") from e
    for key in ("images", "annotations", "categories"):
        if key not in doc:
            raise IngestionError(f"{annotation_path}: missing '{key}'")
    cat_ids = sorted(c["id"] for c in doc["categories"])
    label_of = {cid: k for k, cid in enumerate(cat_ids)}
    images = {im["id"]: im for im in doc["images"]}
    per_image: dict[int, list[Detection]] = {i: [] for i in images}
    for ann in doc["annotations"]:
        iid = ann.get("image_id")
        if iid not in images:
            raise IngestionError(f"annotation {ann.get('id')} references missing image id {iid}")
        if ann.get("category_id") not in label_of:
            raise IngestionError(f"annotation {ann.get('id')} references missing category id {ann.get('category_id')}")
        x, y, w, h = ann["bbox"]
        if not (w > 0 and h > 0):
            raise IngestionError(f"annotation {ann.get('id')} on image {iid} has non-positive size")
        per_image[iid].append(Detection(Box.from_xywh(x, y, w, h), label_of[ann["category_id"]], 1.0))
    out = []
    for iid, meta in images.items():
        path = Path(image_dir) / meta["file_name"]
        try:
            img = load_png(path)
        except (OSError, ValueError) as e:
            raise IngestionError(f"image id {iid}: cannot read {path} ({e})") from e
        if img.shape[:2] != (meta["height"], meta["width"]):
            raise IngestionError(f"image id {iid}: size {img.shape[:2]} disagrees with annotation")
        out.append((iid, img, DetectionSet(tuple(per_image[iid]), len(cat_ids))))
    return out


# -- attack artifacts -------------------------------------------------------------


def attention_heatmap(A: np.ndarray, a_max: float) -> np.ndarray:
    """Grayscale uint8, white = strong attention."""
    return np.round(np.clip(A / a_max, 0.0, 1.0) * 255.0).astype(np.uint8)


def perturbation_visual(A: np.ndarray, P: np.ndarray) -> np.ndarray:
    """A * P mapped symmetrically onto [0, 255]; zero maps to mid-gray."""
    d = A[..., None] * P
    m = np.abs(d).max()
    scaled = 0.5 + (0.5 * d / m if m > 0 else 0.0 * d)
    return np.round(np.clip(scaled, 0.0, 1.0) * 255.0).astype(np.uint8)


def attack_record(result: AttackResult, image_id, ground_truth: DetectionSet | None = None,
                  benign_eval: DetectionSet | None = None, adversarial_eval: DetectionSet | None = None) -> dict:
    """JSON-ready per-image record; wall time is left out so reports stay byte-stable."""
    m = result.metrics
    cfg = result.config
    rec = {
        "image_id": image_id,
        "mode": cfg.mode,
        "config": vars(cfg).copy(),
        "degenerate_fallback": result.degenerate_fallback,
        "benign_detections": result.benign_detections.to_records(),
        "adversarial_detections": result.adversarial_detections.to_records(),
        "per_object_success": list(result.per_object_success),
        "metrics": {"l2": m.l2, "l0": m.l0, "linf": m.linf, "ssim": m.ssim, "mean_distortion": m.mean_distortion},
        "loss_trace": [[t.total, t.bbox, t.cls] for t in result.loss_trace],
    }
    if ground_truth is not None:
        rec["ground_truth"] = ground_truth.to_records()
    if benign_eval is not None:
        rec["benign_eval"] = benign_eval.to_records()
    if adversarial_eval is not None:
        rec["adversarial_eval"] = adversarial_eval.to_records()
    return rec


def save_attack_artifacts(result: AttackResult, out_dir: Path | str, image_id=0) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{image_id}" if isinstance(image_id, str) else f"{int(image_id):06d}"
    paths = {
        "adversarial": save_png(result.adversarial_image, out / f"{stem}_adv.png"),
        "attention": out / f"{stem}_attention.png",
        "perturbation": out / f"{stem}_perturbation.png",
        "report": out / f"{stem}_report.json",
    }
    PILImage.fromarray(attention_heatmap(result.attention, result.config.a_max)).save(paths["attention"], format="PNG")
    PILImage.fromarray(perturbation_visual(result.attention, result.perturbation)).save(
        paths["perturbation"], format="PNG"
    )
    write_report({"records": [attack_record(result, image_id)]}, paths["report"])
    return paths


# -- reports ---------------------------------------------------------------------


def write_report(report: dict, path: Path | str) -> Path:
    doc = {"schema_version": REPORT_SCHEMA_VERSION, **{k: v for k, v in report.items() if k != "schema_version"}}
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, allow_nan=True) + "\n")
    return path


def read_report(path: Path | str) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version", 0) > REPORT_SCHEMA_VERSION:
        raise IngestionError(f"{path}: report schema {doc['schema_version']} is newer than supported")
    return doc


def records_detections(records: list[dict], key: str, num_classes: int) -> list[DetectionSet]:
    return [DetectionSet.from_records(r[key], num_classes) for r in records]


def check_detection_records(records: list[dict], key: str) -> None:
    missing = [r["image_id"] for r in records if key not in r]
    if missing:
        raise ValidationError(f"records without '{key}': {missing[:5]}")

"""Dataset-level attack campaigns, the attention ablation and the alpha_A sweep."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Iterable, Sequence

import numpy as np

from afog.data_io import attack_record, records_detections
from afog.engine import run_attack
from afog.metrics import EvalProtocol, EvaluationError, false_positives, mean_average_precision
from afog.types import AttackConfig, DetectionSet
from afog.victim.adapter import VictimAdapter

log = logging.getLogger(__name__)

EVAL_THRESHOLD = 0.05
DEFAULT_SWEEP = (0.0, 0.01, 0.05, 0.1, 0.5)

Item = tuple[object, np.ndarray, "DetectionSet | None"]

_lane_adapter: VictimAdapter | None = None


def _attack_one(adapter: VictimAdapter, item: Item, config: AttackConfig, eval_threshold: float):
    image_id, img, gt = item
    result = run_attack(img, adapter, config, image_id=image_id)
    rec = attack_record(
        result,
        image_id,
        ground_truth=gt,
        benign_eval=adapter.detect(img, eval_threshold),
        adversarial_eval=adapter.detect(result.adversarial_image, eval_threshold),
    )
    return rec, result.metrics.wall_time_s, result


def _lane_init(adapter: VictimAdapter) -> None:
    global _lane_adapter
    _lane_adapter = adapter


def _lane_task(args):
    item, config, eval_threshold = args
    rec, t, _ = _attack_one(_lane_adapter, item, config, eval_threshold)
    return rec, t


def run_campaign(
    items: Sequence[Item],
    adapter: VictimAdapter,
    config: AttackConfig,
    eval_threshold: float = EVAL_THRESHOLD,
    workers: int = 1,
    on_result=None,
) -> tuple[list[dict], list[float], list[tuple[object, str]]]:
    """Attack every item; returns (records, wall times, errors).

    Failures on single images are collected rather than raised so a campaign
    always finishes. ``on_result(result)`` sees each in-process AttackResult.
    """
    records, times, errors = [], [], []
    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_lane_init, initargs=(adapter,)) as pool:
            futures = [pool.submit(_lane_task, (it, config, eval_threshold)) for it in items]
            for it, fut in zip(items, futures):
                try:
                    rec, t = fut.result()
                except Exception as e:  # noqa: BLE001  reported per image
                    errors.append((it[0], str(e)))
                    continue
                records.append(rec)
                times.append(t)
        return records, times, errors
    for it in items:
        try:
            rec, t, result = _attack_one(adapter, it, config, eval_threshold)
        except Exception as e:  # noqa: BLE001
            log.warning("image %s failed: %s", it[0], e)
            errors.append((it[0], str(e)))
            continue
        records.append(rec)
        times.append(t)
        if on_result is not None:
            on_result(it[0], result)
    return records, times, errors


def _safe_map(preds, gts, protocol):
    try:
        return mean_average_precision(preds, gts, protocol)
    except EvaluationError:
        return None


def summarize(records: list[dict], num_classes: int) -> dict:
    """Aggregates recomputable from records alone."""
    if not records:
        return {"n_images": 0}
    metric = lambda k: float(np.mean([r["metrics"][k] for r in records]))  # noqa: E731
    flags = [f for r in records for f in r["per_object_success"]]
    out = {
        "n_images": len(records),
        "mean_l2": metric("l2"),
        "mean_l0": metric("l0"),
        "mean_linf": metric("linf"),
        "mean_ssim": metric("ssim"),
        "mean_distortion": metric("mean_distortion"),
        "max_linf": float(max(r["metrics"]["linf"] for r in records)),
        "object_success_rate": float(np.mean(flags)) if flags else None,
        "vanished_fraction": float(np.mean([len(r["adversarial_detections"]) == 0 for r in records])),
        "degenerate_fallbacks": int(sum(r["degenerate_fallback"] for r in records)),
    }
    if all("ground_truth" in r for r in records):
        gts = records_detections(records, "ground_truth", num_classes)
        at50, coco = EvalProtocol((0.5,), "coco101", num_classes), EvalProtocol.coco(num_classes)
        ben = records_detections(records, "benign_eval", num_classes)
        adv = records_detections(records, "adversarial_eval", num_classes)
        ben_hi = records_detections(records, "benign_detections", num_classes)
        adv_hi = records_detections(records, "adversarial_detections", num_classes)
        out.update(
            benign_map50=_safe_map(ben, gts, at50),
            adversarial_map50=_safe_map(adv, gts, at50),
            benign_map=_safe_map(ben, gts, coco),
            adversarial_map=_safe_map(adv, gts, coco),
            median_benign_fp=float(np.median([false_positives(p, g) for p, g in zip(ben_hi, gts)])),
            median_adversarial_fp=float(np.median([false_positives(p, g) for p, g in zip(adv_hi, gts)])),
        )
    return out


def timing_summary(image_ids: Iterable, times: Sequence[float]) -> dict:
    return {
        "per_image": {str(i): t for i, t in zip(image_ids, times)},
        "mean_wall_time_s": float(np.mean(times)) if len(times) else None,
    }


def improvement_pct(map_off: float, map_on: float) -> float:
    """Relative drop in adversarial mAP credited to attention, in percent."""
    if map_off == 0:
        return 0.0
    return 100.0 * (map_off - map_on) / map_off


def run_ablation(
    items: Sequence[Item], adapter: VictimAdapter, config: AttackConfig, seeds: Sequence[int], **kw
) -> list[dict]:
    """Paired campaigns per seed, identical except for attention_enabled."""
    rows = []
    for seed in seeds:
        for enabled in (True, False):
            cfg = replace(config, seed=seed, attention_enabled=enabled)
            records, _, errors = run_campaign(items, adapter, cfg, **kw)
            s = summarize(records, adapter.num_classes)
            rows.append(
                {"seed": seed, "attention_enabled": enabled, "adversarial_map50": s.get("adversarial_map50"),
                 "adversarial_map": s.get("adversarial_map"), "errors": len(errors), "config": vars(cfg).copy()}
            )  # fmt: skip
    return rows


def ablation_table(rows: list[dict], model: str = "toy") -> list[dict]:
    table = []
    for seed in sorted({r["seed"] for r in rows}):
        on = next(r for r in rows if r["seed"] == seed and r["attention_enabled"])
        off = next(r for r in rows if r["seed"] == seed and not r["attention_enabled"])
        table.append(
            {"model": model, "seed": seed, "map50_with_attention": on["adversarial_map50"],
             "map50_without_attention": off["adversarial_map50"],
             "improvement_pct": improvement_pct(off["adversarial_map50"], on["adversarial_map50"])}
        )  # fmt: skip
    return table


def run_sweep(
    items: Sequence[Item], adapter: VictimAdapter, config: AttackConfig,
    alphas: Sequence[float] = DEFAULT_SWEEP, seeds: Sequence[int] = (0,), **kw,
) -> list[dict]:  # fmt: skip
    rows = []
    for a in alphas:
        maps = []
        for seed in seeds:
            records, _, _ = run_campaign(items, adapter, replace(config, alpha_a=a, seed=seed), **kw)
            maps.append(summarize(records, adapter.num_classes).get("adversarial_map50"))
        rows.append({"alpha_a": a, "seeds": " ".join(map(str, seeds)), "adversarial_map50": float(np.mean(maps))})
    return rows

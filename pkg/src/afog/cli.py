"""Command-line entry points: attack, evaluate, ablate, sweep, gen-data, train.

Exit codes: 0 success, 1 usage error, 2 runtime error. Setting precedence is
flag > --config file > built-in default; every run writes run_manifest.json
echoing the effective values.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from afog import __version__
from afog.types import AttackConfig, DetectionSet, ValidationError
from afog.victim.reference import TRAIN_EPOCHS, TRAIN_SIZE

log = logging.getLogger("afog")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
MODE_ALIASES = {"afog": "generic", "generic": "generic", "vanish": "vanish", "fabricate": "fabricate"}
CONFIG_FLAGS = {
    "eps": "epsilon",
    "iters": "iterations",
    "alpha_p": "alpha_p",
    "alpha_a": "alpha_a",
    "conf_threshold": "conf_threshold",
    "gamma": "gamma",
    "seed": "seed",
    "a_max": "a_max",
    "mode": "mode",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def default_out_root() -> Path:
    return Path(os.environ.get("AFOG_OUT", "runs"))


def _add_attack_flags(p: argparse.ArgumentParser, with_mode: bool = True) -> None:
    if with_mode:
        p.add_argument("--mode", choices=sorted(MODE_ALIASES), help="attack variant (default afog)")
    p.add_argument("--eps", type=float, help="L-inf budget on the [0,1] scale (default 0.031)")
    p.add_argument("--iters", type=int, help="attack iterations T (default 10)")
    p.add_argument("--alpha-p", type=float, help="perturbation step size (default 2/255)")
    p.add_argument("--alpha-a", type=float, help="attention step size (default 0.1)")
    p.add_argument("--conf-threshold", type=float, help="benign confidence threshold (default 0.5)")
    p.add_argument("--gamma", type=float, help="IoU threshold of the success rule (default 0.5)")
    p.add_argument("--a-max", type=float, help="attention clamp (default 2.0)")
    p.add_argument("--seed", type=int, help="RNG seed for the initial perturbation (default 0)")
    p.add_argument("--no-attention", action="store_true", help="disable attention updates")
    p.add_argument("--config", type=Path, help="JSON file of AttackConfig fields")


def _add_data_flags(p: argparse.ArgumentParser, allow_image: bool = True) -> None:
    src = p.add_mutually_exclusive_group()
    if allow_image:
        src.add_argument("--image", type=Path, help="single PNG image")
    src.add_argument(
        "--dataset",
        default=None,
        help="COCO-style annotation JSON, or toy:SEED:N for an in-memory shapes split (default toy:1:200)",
    )
    p.add_argument("--image-dir", type=Path, help="image folder (default: <annotations dir>/images)")
    p.add_argument("--limit", type=int, help="use only the first N images")
    p.add_argument("--adapter", default="toy", help="'toy' for the bundled detector, or a detector blob path")
    p.add_argument("--out", type=Path, help="output directory (default $AFOG_OUT/<command> or runs/<command>)")
    p.add_argument("--workers", type=int, default=1, help="parallel worker lanes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="afog", description="Attention-focused adversarial attacks on object detectors.")
    parser.add_argument("--version", action="version", version=f"afog {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("attack", help="attack one image or a dataset")
    _add_attack_flags(p)
    _add_data_flags(p)
    p.add_argument("--no-artifacts", action="store_true", help="skip PNG artifacts")
    p.add_argument("--manifest", type=Path, help="rerun from a run_manifest.json")

    p = sub.add_parser("evaluate", help="benign vs adversarial mAP")
    p.add_argument("--report", type=Path, help="report.json written by 'attack'")
    p.add_argument("--predictions", type=Path, help="COCO results JSON (list of detections)")
    p.add_argument("--adversarial", type=Path, help="second COCO results JSON with adversarial predictions")
    p.add_argument("--gt", type=Path, help="COCO annotation JSON for --predictions")
    p.add_argument("--model", default="toy", help="row label")
    p.add_argument("--out", type=Path, help="also write the table as JSON here")

    p = sub.add_parser("ablate", help="paired campaigns with and without attention")
    _add_attack_flags(p)
    _add_data_flags(p, allow_image=False)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])

    p = sub.add_parser("sweep", help="campaign per attention learning rate")
    _add_attack_flags(p)
    _add_data_flags(p, allow_image=False)
    p.add_argument("--alphas", type=float, nargs="+", default=[0.0, 0.01, 0.05, 0.1, 0.5])
    p.add_argument("--seeds", type=int, nargs="+", default=[0])

    p = sub.add_parser("gen-data", help="write a synthetic shapes dataset (PNG + annotations.json)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("-n", type=int, default=200)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train the toy detector and write a weight blob")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-n", type=int, default=TRAIN_SIZE, help="training images")
    p.add_argument("--epochs", type=int, default=TRAIN_EPOCHS)
    p.add_argument("--out", type=Path, required=True)
    return parser


# -- helpers ---------------------------------------------------------------------


def resolve_config(args: argparse.Namespace, file_values: dict | None = None) -> AttackConfig:
    """Merge defaults, config file and flags; raises UsageError on bad values."""
    values: dict = {}
    known = {f.name for f in fields(AttackConfig)}
    for k, v in (file_values or {}).items():
        if k not in known:
            raise UsageError(f"unknown config key {k!r}")
        values[k] = v
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config file {args.config}: {e}") from e
        for k, v in doc.items():
            if k not in known:
                raise UsageError(f"unknown config key {k!r} in {args.config}")
            values[k] = v
    for flag, name in CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    if getattr(args, "no_attention", False):
        values["attention_enabled"] = False
    if "mode" in values:
        if values["mode"] not in MODE_ALIASES:
            raise UsageError(f"unknown mode {values['mode']!r}")
        values["mode"] = MODE_ALIASES[values["mode"]]
    try:
        return AttackConfig(**values)
    except (ValidationError, TypeError) as e:
        raise UsageError(str(e)) from e


def load_adapter(spec: str):
    from afog.data_io import load_detector
    from afog.victim.reference import reference_detector

    if spec == "toy":
        return reference_detector()
    path = Path(spec)
    if not path.exists():
        raise UsageError(f"adapter {spec!r} is neither 'toy' nor an existing detector blob")
    return load_detector(path)


def load_items(args: argparse.Namespace, num_classes: int):
    """Return (items, description) where items are (image_id, image, gt-or-None)."""
    from afog.data_io import load_dataset, load_png
    from afog.victim.shapes import generate_shapes_dataset

    if getattr(args, "image", None):
        if not args.image.exists():
            raise UsageError(f"image {args.image} does not exist")
        return [(args.image.stem, load_png(args.image), None)], {"image": str(args.image)}
    ds = args.dataset or "toy:1:200"
    if ds.startswith("toy:"):
        try:
            _, seed, n = ds.split(":")
            seed, n = int(seed), int(n)
        except ValueError as e:
            raise UsageError(f"bad toy dataset spec {ds!r}; expected toy:SEED:N") from e
        if args.limit:
            n = min(n, args.limit)
        data = generate_shapes_dataset(seed, n)
        items = [(i, img, gt) for i, (img, gt) in enumerate(zip(data.images, data.targets))]
        return items, {"dataset": ds}
    ann = Path(ds)
    if not ann.exists():
        raise UsageError(f"annotation file {ann} does not exist")
    image_dir = args.image_dir or ann.parent / "images"
    items = load_dataset(ann, image_dir)
    if args.limit:
        items = items[: args.limit]
    return items, {"dataset": str(ann), "image_dir": str(image_dir)}


def write_manifest(out: Path, command: str, config: AttackConfig | None, data: dict, adapter: str, extra=None):
    manifest = {
        "command": command,
        "config": vars(config).copy() if config else None,
        "data": data,
        "adapter": adapter,
        "out": str(out),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "tool_version": __version__,
        **(extra or {}),
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _bar_plot(path: Path, labels, values, ylabel: str, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar([str(l) for l in labels], values, color="0.35")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def _out_dir(args, command: str) -> Path:
    out = args.out or default_out_root() / command
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands --------------------------------------------------------------------


def cmd_attack(args: argparse.Namespace) -> int:
    from afog.campaign import run_campaign, summarize, timing_summary
    from afog.data_io import save_attack_artifacts, write_report

    file_values = None
    if args.manifest:
        try:
            manifest = json.loads(args.manifest.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read manifest {args.manifest}: {e}") from e
        file_values = manifest["config"]
        data = manifest.get("data", {})
        if "image" in data and not args.image:
            args.image = Path(data["image"])
        elif "dataset" in data and not args.dataset:
            args.dataset = data["dataset"]
            if "image_dir" in data and not args.image_dir:
                args.image_dir = Path(data["image_dir"])
        if args.adapter == "toy":
            args.adapter = manifest.get("adapter", "toy")
        if args.limit is None:
            args.limit = manifest.get("limit")
    config = resolve_config(args, file_values)
    adapter = load_adapter(args.adapter)
    items, data_desc = load_items(args, adapter.num_classes)
    out = _out_dir(args, "attack")
    write_manifest(out, "attack", config, data_desc, args.adapter, {"limit": args.limit})

    art_dir = out / "artifacts"

    def save(image_id, result):
        if not args.no_artifacts:
            save_attack_artifacts(result, art_dir, image_id)

    records, times, errors = run_campaign(
        items, adapter, config, workers=args.workers, on_result=None if args.workers > 1 else save
    )
    report = {
        "num_classes": adapter.num_classes,
        "records": records,
        "aggregates": summarize(records, adapter.num_classes),
    }
    write_report(report, out / "report.json")
    (out / "timing.json").write_text(json.dumps(timing_summary([r["image_id"] for r in records], times), indent=2))
    agg = report["aggregates"]
    print(f"attacked {len(records)} image(s) in mode {config.mode}; report: {out / 'report.json'}")
    for key in ("benign_map50", "adversarial_map50", "vanished_fraction", "mean_ssim", "max_linf"):
        if agg.get(key) is not None:
            print(f"  {key:<20} {agg[key]:.4f}")
    if errors:
        print(f"{len(errors)} image(s) failed:", file=sys.stderr)
        for image_id, msg in errors:
            print(f"  {image_id}: {msg}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _coco_results(path: Path, gt_ids: list, num_classes: int, label_of: dict) -> list[DetectionSet]:
    from afog.types import Box, Detection

    doc = json.loads(path.read_text())
    per = {i: [] for i in gt_ids}
    for d in doc:
        if d["image_id"] not in per:
            raise ValueError(f"prediction for unknown image id {d['image_id']}")
        per[d["image_id"]].append(Detection(Box.from_xywh(*d["bbox"]), label_of[d["category_id"]], float(d["score"])))
    return [DetectionSet(tuple(per[i]), num_classes) for i in gt_ids]


def evaluation_table(benign, adversarial, gts, num_classes: int, model: str) -> list[dict]:
    from afog.metrics import EvalProtocol, mean_average_precision

    rows = []
    for proto in (EvalProtocol((0.5,), "coco101", num_classes), EvalProtocol.coco(num_classes)):
        row = {"model": model, "protocol": proto.name, "benign": mean_average_precision(benign, gts, proto)}
        if adversarial is not None:
            row["adversarial"] = mean_average_precision(adversarial, gts, proto)
        rows.append(row)
    return rows


def cmd_evaluate(args: argparse.Namespace) -> int:
    from afog.data_io import IngestionError, read_report, records_detections
    from afog.metrics import EvaluationError
    from afog.types import Box, Detection

    if args.report:
        report = read_report(args.report)
        records = report["records"]
        if not records or "ground_truth" not in records[0]:
            raise UsageError("report has no ground truth; evaluate needs a dataset run")
        k = int(report.get("num_classes", 3))
        gts = records_detections(records, "ground_truth", k)
        benign = records_detections(records, "benign_eval", k)
        adversarial = records_detections(records, "adversarial_eval", k)
    elif args.predictions and args.gt:
        doc = json.loads(args.gt.read_text())
        cat_ids = sorted(c["id"] for c in doc["categories"])
        label_of = {c: i for i, c in enumerate(cat_ids)}
        k = len(cat_ids)
        ids = [im["id"] for im in doc["images"]]
        gt_map = {i: [] for i in ids}
        for a in doc["annotations"]:
            if a["image_id"] not in gt_map:
                raise IngestionError(f"annotation references missing image id {a['image_id']}")
            gt_map[a["image_id"]].append(Detection(Box.from_xywh(*a["bbox"]), label_of[a["category_id"]], 1.0))
        gts = [DetectionSet(tuple(gt_map[i]), k) for i in ids]
        benign = _coco_results(args.predictions, ids, k, label_of)
        adversarial = _coco_results(args.adversarial, ids, k, label_of) if args.adversarial else None
    else:
        raise UsageError("evaluate needs --report, or --predictions with --gt")
    try:
        rows = evaluation_table(benign, adversarial, gts, k, args.model)
    except EvaluationError as e:
        print(f"evaluation error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    header = f"{'Model':<10} {'Protocol':<24} {'Benign':>8}" + (f" {'Adversarial':>12}" if adversarial else "")
    print(header)
    for r in rows:
        line = f"{r['model']:<10} {r['protocol']:<24} {100 * r['benign']:8.2f}"
        if "adversarial" in r:
            line += f" {100 * r['adversarial']:12.2f}"
        print(line)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(rows, indent=2) + "\n")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    from afog.campaign import ablation_table, run_ablation

    config = resolve_config(args)
    adapter = load_adapter(args.adapter)
    items, data_desc = load_items(args, adapter.num_classes)
    out = _out_dir(args, "ablate")
    write_manifest(out, "ablate", config, data_desc, args.adapter, {"seeds": args.seeds, "limit": args.limit})
    rows = run_ablation(items, adapter, config, args.seeds, workers=args.workers)
    table = ablation_table(rows, model=str(args.adapter))
    _write_csv(out / "ablation_runs.csv", rows, ["seed", "attention_enabled", "adversarial_map50", "adversarial_map"])
    _write_csv(out / "ablation.csv", table, list(table[0]))
    _bar_plot(out / "ablation.png", [r["seed"] for r in table], [r["improvement_pct"] for r in table],
              "improvement (%)", "attention vs no attention")  # fmt: skip
    for r in table:
        print(f"seed {r['seed']}: mAP50 on {r['map50_with_attention']:.4f} off "
              f"{r['map50_without_attention']:.4f} improvement {r['improvement_pct']:+.2f}%")  # fmt: skip
    return EXIT_RUNTIME if any(r["errors"] for r in rows) else EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    from afog.campaign import run_sweep

    if any(a < 0 for a in args.alphas):
        raise UsageError("attention learning rates must be >= 0")
    config = resolve_config(args)
    adapter = load_adapter(args.adapter)
    items, data_desc = load_items(args, adapter.num_classes)
    out = _out_dir(args, "sweep")
    write_manifest(out, "sweep", config, data_desc, args.adapter,
                   {"alphas": args.alphas, "seeds": args.seeds, "limit": args.limit})  # fmt: skip
    rows = run_sweep(items, adapter, config, args.alphas, args.seeds, workers=args.workers)
    _write_csv(out / "sweep.csv", rows, ["alpha_a", "seeds", "adversarial_map50"])
    _bar_plot(out / "sweep.png", [r["alpha_a"] for r in rows], [r["adversarial_map50"] for r in rows],
              "adversarial mAP@0.5", "attention learning rate")  # fmt: skip
    for r in rows:
        print(f"alpha_a={r['alpha_a']:<6} adversarial mAP50 {r['adversarial_map50']:.4f}")
    return EXIT_OK


def cmd_gen_data(args: argparse.Namespace) -> int:
    from afog.data_io import save_dataset
    from afog.victim.shapes import generate_shapes_dataset

    if args.n < 1:
        raise UsageError("-n must be >= 1")
    path = save_dataset(generate_shapes_dataset(args.seed, args.n), args.out)
    print(f"wrote {args.n} images and {path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from afog.data_io import save_detector
    from afog.victim.shapes import generate_shapes_dataset
    from afog.victim.toy import train_toy_detector

    if args.n < 1 or args.epochs < 0:
        raise UsageError("-n must be >= 1 and --epochs >= 0")
    det = train_toy_detector(generate_shapes_dataset(args.seed, args.n), args.epochs, seed=args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_detector(det, args.out)
    print(f"wrote {args.out} (checksum {det.checksum()[:12]})")
    return EXIT_OK


COMMANDS = {
    "attack": cmd_attack,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"afog {args.command}: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001  top-level runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"afog {args.command}: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

import csv
import json

import pytest

from afog.campaign import run_ablation
from afog.cli import main
from afog.data_io import save_dataset
from afog.types import AttackConfig
from afog.victim.shapes import generate_shapes_dataset


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def toy_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("shapes")
    ann = save_dataset(generate_shapes_dataset(1, 6), root)
    return ann


class TestUsage:
    def test_zero_iterations_is_a_usage_error(self, tmp_path, capsys):
        assert main(["attack", "--iters", "0", "--limit", "1", "--out", str(tmp_path / "o")]) == 1
        assert "iterations" in capsys.readouterr().err
        assert not (tmp_path / "o" / "report.json").exists()

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["attack", "--bogus"])
        assert e.value.code == 1

    def test_bad_mode_choice(self):
        with pytest.raises(SystemExit) as e:
            main(["attack", "--mode", "targeted"])
        assert e.value.code == 1

    def test_missing_image(self, tmp_path):
        assert main(["attack", "--image", str(tmp_path / "nope.png"), "--out", str(tmp_path)]) == 1

    def test_config_precedence(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"iterations": 2, "alpha_a": 0.3, "mode": "vanish"}))
        out = tmp_path / "run"
        args = ["attack", "--config", str(cfg), "--alpha-a", "0.2", "--limit", "1", "--no-artifacts", "--out", str(out)]
        assert main(args) == 0
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["config"]["alpha_a"] == 0.2  # flag beats file
        assert manifest["config"]["iterations"] == 2  # file beats default
        assert manifest["config"]["epsilon"] == 0.031  # default
        assert manifest["config"]["mode"] == "vanish"

    def test_env_sets_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("AFOG_OUT", str(tmp_path / "root"))
        assert main(["attack", "--iters", "1", "--limit", "1", "--no-artifacts"]) == 0
        assert (tmp_path / "root" / "attack" / "report.json").exists()


class TestAttack:
    def test_vanish_on_default_split(self, tmp_path):
        out = tmp_path / "v"
        assert main(["attack", "--mode", "vanish", "--no-artifacts", "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        records = report["records"]
        assert len(records) == 200
        empty = sum(len(r["adversarial_detections"]) == 0 for r in records) / len(records)
        assert empty >= 0.9
        assert report["aggregates"]["vanished_fraction"] == empty

    def test_same_seed_gives_identical_bytes(self, tmp_path):
        outs = [tmp_path / "a", tmp_path / "b"]
        for o in outs:
            assert main(["attack", "--limit", "3", "--seed", "4", "--out", str(o)]) == 0
        assert (outs[0] / "report.json").read_bytes() == (outs[1] / "report.json").read_bytes()
        names = sorted(p.name for p in (outs[0] / "artifacts").iterdir())
        assert len(names) == 12
        for n in names:
            assert (outs[0] / "artifacts" / n).read_bytes() == (outs[1] / "artifacts" / n).read_bytes()

    def test_manifest_rerun_reproduces_report(self, tmp_path):
        first = tmp_path / "first"
        assert main(["attack", "--mode", "fabricate", "--iters", "3", "--limit", "2", "--out", str(first)]) == 0
        again = tmp_path / "again"
        assert main(["attack", "--manifest", str(first / "run_manifest.json"), "--out", str(again)]) == 0
        assert (first / "report.json").read_bytes() == (again / "report.json").read_bytes()

    def test_single_image(self, tmp_path, toy_dataset):
        img = toy_dataset.parent / "images" / "000000.png"
        out = tmp_path / "one"
        assert main(["attack", "--image", str(img), "--iters", "2", "--out", str(out)]) == 0
        assert (out / "artifacts" / "000000_attention.png").exists()
        report = json.loads((out / "report.json").read_text())
        assert report["records"][0]["image_id"] == "000000"

    def test_annotation_dataset_and_custom_adapter(self, tmp_path, toy_dataset):
        blob = tmp_path / "untrained.bin"
        assert main(["train", "-n", "2", "--epochs", "0", "--out", str(blob)]) == 0
        out = tmp_path / "ds"
        args = ["attack", "--dataset", str(toy_dataset), "--adapter", str(blob), "--iters", "1", "--out", str(out)]
        assert main(args) == 0
        report = json.loads((out / "report.json").read_text())
        assert len(report["records"]) == 6
        # an untrained victim has nothing above 0.5, so every image falls back
        assert report["aggregates"]["degenerate_fallbacks"] == 6


class TestEvaluate:
    def coco_results(self, ann, path, keep=True):
        doc = json.loads(ann.read_text())
        res = [{"image_id": a["image_id"], "bbox": a["bbox"], "category_id": a["category_id"], "score": 1.0}
               for a in doc["annotations"]] if keep else []  # fmt: skip
        path.write_text(json.dumps(res))
        return path

    def test_perfect_predictions(self, tmp_path, toy_dataset, capsys):
        preds = self.coco_results(toy_dataset, tmp_path / "p.json")
        out = tmp_path / "table.json"
        assert main(["evaluate", "--predictions", str(preds), "--gt", str(toy_dataset), "--out", str(out)]) == 0
        rows = json.loads(out.read_text())
        assert all(r["benign"] == 1.0 for r in rows)
        assert "100.00" in capsys.readouterr().out

    def test_empty_predictions(self, tmp_path, toy_dataset):
        preds = self.coco_results(toy_dataset, tmp_path / "p.json", keep=False)
        out = tmp_path / "table.json"
        assert main(["evaluate", "--predictions", str(preds), "--gt", str(toy_dataset), "--out", str(out)]) == 0
        assert all(r["benign"] == 0.0 for r in json.loads(out.read_text()))

    def test_benign_run_from_report(self, tmp_path, capsys):
        run = tmp_path / "run"
        assert main(["attack", "--iters", "1", "--limit", "40", "--no-artifacts", "--out", str(run)]) == 0
        table = tmp_path / "t.json"
        assert main(["evaluate", "--report", str(run / "report.json"), "--out", str(table)]) == 0
        rows = json.loads(table.read_text())
        assert rows[0]["protocol"] == "AP@0.50/coco101"
        assert rows[0]["benign"] >= 0.6
        assert rows[0]["adversarial"] < rows[0]["benign"]

    def test_missing_inputs(self):
        assert main(["evaluate"]) == 1


class TestAblationAndSweep:
    def test_ablation_pairs_runs(self, tmp_path):
        out = tmp_path / "abl"
        assert main(["ablate", "--limit", "4", "--seeds", "0", "1", "--iters", "3", "--out", str(out)]) == 0
        runs = read_csv(out / "ablation_runs.csv")
        assert [(r["seed"], r["attention_enabled"]) for r in runs] == [
            ("0", "True"), ("0", "False"), ("1", "True"), ("1", "False")
        ]  # fmt: skip
        table = read_csv(out / "ablation.csv")
        assert len(table) == 2
        for row in table:
            on, off = float(row["map50_with_attention"]), float(row["map50_without_attention"])
            assert float(row["improvement_pct"]) == pytest.approx(100 * (off - on) / off)
        assert (out / "ablation.png").stat().st_size > 0

    def test_paired_configs_differ_only_in_attention(self, detector, fixtures):
        items = [(i, img, gt) for i, (img, gt) in enumerate(fixtures[:2])]
        rows = run_ablation(items, detector, AttackConfig(iterations=2), seeds=[5])
        assert len(rows) == 2
        a, b = (dict(r["config"]) for r in rows)
        assert a.pop("attention_enabled") is True and b.pop("attention_enabled") is False
        assert a == b

    def test_sweep_rows_and_zero_rate(self, tmp_path):
        common = ["--limit", "4", "--iters", "3", "--seeds", "0"]
        sweep = tmp_path / "sweep"
        assert main(["sweep", "--alphas", "0", "0.05", "0.5", *common, "--out", str(sweep)]) == 0
        rows = read_csv(sweep / "sweep.csv")
        assert [float(r["alpha_a"]) for r in rows] == [0.0, 0.05, 0.5]
        abl = tmp_path / "abl"
        assert main(["ablate", *common, "--out", str(abl)]) == 0
        off = next(r for r in read_csv(abl / "ablation_runs.csv") if r["attention_enabled"] == "False")
        assert float(rows[0]["adversarial_map50"]) == float(off["adversarial_map50"])

    def test_sweep_deterministic(self, tmp_path):
        args = ["sweep", "--alphas", "0.1", "--limit", "3", "--iters", "2"]
        assert main([*args, "--out", str(tmp_path / "a")]) == 0
        assert main([*args, "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()

    def test_negative_rate_rejected(self, tmp_path):
        assert main(["sweep", "--alphas", "-0.1", "--out", str(tmp_path)]) == 1


def test_gen_data_round_trip(tmp_path):
    assert main(["gen-data", "--seed", "3", "-n", "4", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "annotations.json").read_text())
    assert len(doc["images"]) == 4
    assert {c["name"] for c in doc["categories"]} == {"circle", "square", "triangle"}

"""Command-line interface behavior via the click test runner."""
from __future__ import annotations

import base64
import json

import numpy as np
import pytest
from click.testing import CliRunner

from blackcatt.cli import main
from blackcatt.harness import image_seed
from blackcatt.imagecore import Image, save_png
from blackcatt.saliency import ResponsibilityMap

from corpus import G, image_12, scenario_12


@pytest.fixture()
def workspace(tmp_path):
    scenario = scenario_12(1, 1, 0.49)
    dataset = tmp_path / "dataset"
    dataset.mkdir()
    base = image_12(scenario)
    for k, stem in enumerate(("a", "b")):
        data = base.data.copy()
        data[0, 0, :] = (40 + k) * G
        save_png(Image(data=data, image_id=stem), dataset / f"{stem}.png")
    flat = Image(data=np.full((12, 12, 3), 32 * G), image_id="zero")
    save_png(flat, dataset / "zero.png")
    scenario_path = tmp_path / "scenario.json"
    scenario.save_json(scenario_path)
    return tmp_path, dataset, scenario_path


def write_config(tmp_path, dataset, scenario_path, **over):
    payload = {
        "dataset_dir": str(dataset),
        "output_dir": str(tmp_path / "out"),
        "synthetic_scenario": str(scenario_path),
        "methods": ["noise"],
        "seed": 11,
    }
    payload.update(over)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return path


@pytest.fixture()
def runner():
    return CliRunner()


def test_help_lists_commands(runner):
    result = runner.invoke(main, ["--help"])
    assert result.exit_code == 0
    for command in ("ingest", "attack", "report", "saliency"):
        assert command in result.output


class TestIngestCommand:
    def test_lists_single_detections(self, runner, workspace):
        tmp_path, dataset, scenario_path = workspace
        result = runner.invoke(
            main, ["ingest", "--dataset", str(dataset), "--synthetic", str(scenario_path)]
        )
        assert result.exit_code == 0
        lines = result.stdout.splitlines()
        assert lines[0] == "a\tdog\t0.8000\t[1, 1, 7, 7]"
        assert lines[1].startswith("b\tdog")
        assert len(lines) == 2
        assert "kept 2 single-detection images" in result.stderr

    def test_requires_exactly_one_detector(self, runner, workspace):
        _, dataset, scenario_path = workspace
        both = runner.invoke(
            main,
            [
                "ingest",
                "--dataset",
                str(dataset),
                "--synthetic",
                str(scenario_path),
                "--detector",
                "http://localhost:1",
            ],
        )
        assert both.exit_code == 2
        assert "exactly one" in both.stderr
        neither = runner.invoke(main, ["ingest", "--dataset", str(dataset)])
        assert neither.exit_code == 2

    def test_missing_dataset(self, runner, workspace, tmp_path):
        _, _, scenario_path = workspace
        result = runner.invoke(
            main,
            ["ingest", "--dataset", str(tmp_path / "absent"), "--synthetic", str(scenario_path)],
        )
        assert result.exit_code == 2

    def test_unreachable_detector(self, runner, workspace):
        _, dataset, _ = workspace
        result = runner.invoke(
            main, ["ingest", "--dataset", str(dataset), "--detector", "http://127.0.0.1:9"]
        )
        assert result.exit_code == 3

    def test_bad_scenario_file(self, runner, workspace, tmp_path):
        _, dataset, _ = workspace
        bad = tmp_path / "scenario_bad.json"
        bad.write_text("{broken")
        result = runner.invoke(
            main, ["ingest", "--dataset", str(dataset), "--synthetic", str(bad)]
        )
        assert result.exit_code == 2


class TestAttackCommand:
    def test_runs_experiment(self, runner, workspace):
        tmp_path, dataset, scenario_path = workspace
        config_path = write_config(tmp_path, dataset, scenario_path)
        result = runner.invoke(main, ["attack", "--config", str(config_path)])
        assert result.exit_code == 0
        assert "records.jsonl" in result.stdout
        records_file = tmp_path / "out" / "records.jsonl"
        records = [json.loads(line) for line in records_file.read_text().splitlines()]
        assert [r["image_id"] for r in records] == ["a", "b"]
        assert records[0]["seed"] == image_seed(11, "a")

    def test_env_seed_override(self, runner, workspace):
        tmp_path, dataset, scenario_path = workspace
        config_path = write_config(tmp_path, dataset, scenario_path)
        result = runner.invoke(
            main, ["attack", "--config", str(config_path)], env={"BLACKCATT_SEED": "123"}
        )
        assert result.exit_code == 0
        records_file = tmp_path / "out" / "records.jsonl"
        first = json.loads(records_file.read_text().splitlines()[0])
        assert first["seed"] == image_seed(123, "a")

    def test_invalid_method_rejected(self, runner, workspace):
        tmp_path, dataset, scenario_path = workspace
        config_path = write_config(tmp_path, dataset, scenario_path, methods=["warp"])
        result = runner.invoke(main, ["attack", "--config", str(config_path)])
        assert result.exit_code == 2
        assert "error:" in result.stderr

    def test_config_not_json(self, runner, tmp_path):
        bad = tmp_path / "config.json"
        bad.write_text("{broken")
        result = runner.invoke(main, ["attack", "--config", str(bad)])
        assert result.exit_code == 2


class TestReportCommand:
    def test_reports_after_attack(self, runner, workspace):
        tmp_path, dataset, scenario_path = workspace
        config_path = write_config(tmp_path, dataset, scenario_path)
        assert runner.invoke(main, ["attack", "--config", str(config_path)]).exit_code == 0
        result = runner.invoke(main, ["report", "--results", str(tmp_path / "out")])
        assert result.exit_code == 0
        printed = result.stdout.splitlines()
        assert any(line.endswith("success_table.csv") for line in printed)
        assert any(line.endswith("class_counts.csv") for line in printed)
        assert (tmp_path / "out" / "report" / "curves.csv").exists()

    def test_empty_results(self, runner, tmp_path):
        result = runner.invoke(main, ["report", "--results", str(tmp_path)])
        assert result.exit_code == 0
        assert "nothing to report" in result.stderr


class TestSaliencyCommand:
    def test_stdout_payload(self, runner, workspace):
        _, dataset, scenario_path = workspace
        result = runner.invoke(
            main,
            [
                "saliency",
                "--method",
                "rex",
                "--image",
                str(dataset / "a.png"),
                "--synthetic",
                str(scenario_path),
                "--seed",
                "3",
            ],
        )
        assert result.exit_code == 0
        payload = json.loads(result.stdout)
        assert payload["height"] == 12 and payload["width"] == 12
        assert len(base64.b64decode(payload["data"])) == 12 * 12 * 4
        restored = ResponsibilityMap.from_payload(payload)
        assert restored.values.shape == (12, 12)

    def test_output_file(self, runner, workspace, tmp_path):
        _, dataset, scenario_path = workspace
        out = tmp_path / "map.json"
        result = runner.invoke(
            main,
            [
                "saliency",
                "--method",
                "drise",
                "--image",
                str(dataset / "a.png"),
                "--synthetic",
                str(scenario_path),
            ],
        )
        assert result.exit_code == 0
        result = runner.invoke(
            main,
            [
                "saliency",
                "--method",
                "rex",
                "--image",
                str(dataset / "a.png"),
                "--synthetic",
                str(scenario_path),
                "--output",
                str(out),
            ],
        )
        assert result.exit_code == 0
        assert str(out) in result.stdout
        assert ResponsibilityMap.load(out).values.shape == (12, 12)

    def test_no_detection(self, runner, workspace):
        _, dataset, scenario_path = workspace
        result = runner.invoke(
            main,
            [
                "saliency",
                "--method",
                "rex",
                "--image",
                str(dataset / "zero.png"),
                "--synthetic",
                str(scenario_path),
            ],
        )
        assert result.exit_code == 2
        assert "no detection" in result.stderr

    def test_missing_image(self, runner, workspace, tmp_path):
        _, _, scenario_path = workspace
        result = runner.invoke(
            main,
            [
                "saliency",
                "--method",
                "rex",
                "--image",
                str(tmp_path / "absent.png"),
                "--synthetic",
                str(scenario_path),
            ],
        )
        assert result.exit_code == 2

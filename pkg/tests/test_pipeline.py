import hashlib
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from ringwatch.cli import main as cli_main
from ringwatch.errors import ConfigError
from ringwatch.pipeline import (
    audit_stage,
    calibrate_stage,
    eval_stage,
    load_flag_thresholds,
    load_thresholds,
    sha256_file,
    simulate_stage,
    train_stage,
)
from ringwatch.simulate import GeneratorConfig

SMALL = GeneratorConfig(n_users=40, sessions_per_user=3, separation=1.5, seed=5,
                        duration_target_ms=30_000)


@pytest.fixture(scope="module")
def pipeline_dirs(tmp_path_factory):
    """One small end-to-end pipeline shared by the stage tests."""
    root = tmp_path_factory.mktemp("pipeline")
    data, models, out = root / "data", root / "models", root / "out"
    simulate_stage(data, SMALL)
    train_stage(models, data, seed=5, epochs=6, batch_users=8)
    calibrate_stage(out, data, models, fpr_target=0.05, seed=5, n_pairs=400)
    eval_stage(out, data, models, out / "thresholds.json", seed=5, n_pairs=400)
    audit_stage(out, data, models, out / "thresholds.json", seed=5, n_pairs=400)
    return data, models, out


def test_pipeline_produces_all_artifact_kinds(pipeline_dirs):
    data, models, out = pipeline_dirs
    assert (data / "sessions.jsonl").exists()
    assert (data / "scenario.json").exists()
    for name in ("model-keystroke.rwnet", "model-mouse.rwnet",
                 "model-combined.rwnet", "split.json"):
        assert (models / name).exists()
    assert (out / "thresholds.json").exists()
    assert (out / "report.json").exists()
    assert (out / "fairness.json").exists()
    for stage, where in (("simulate", data), ("train", models),
                         ("calibrate", out), ("eval", out), ("audit", out)):
        manifest = json.loads((where / f"{stage}.manifest.json").read_text())
        assert manifest["schema_version"] == "ringwatch/manifest/v1"
        assert manifest["stage"] == stage
        for name, digest in manifest["outputs"].items():
            assert sha256_file(where / name) == digest


def test_simulate_rerun_is_bit_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    simulate_stage(a, SMALL)
    simulate_stage(b, SMALL)
    assert sha256_file(a / "sessions.jsonl") == sha256_file(b / "sessions.jsonl")
    assert sha256_file(a / "scenario.json") == sha256_file(b / "scenario.json")


def test_thresholds_schema(pipeline_dirs):
    _, _, out = pipeline_dirs
    pair = load_thresholds(out / "thresholds.json")
    flag = load_flag_thresholds(out / "thresholds.json")
    assert set(pair) == {"keystroke", "deep-keystroke", "deep-mouse",
                         "deep-keystroke+mouse"}
    assert set(flag) == {"deep-keystroke", "deep-mouse", "deep-keystroke+mouse"}
    for threshold in pair.values():
        assert threshold.fpr_target == 0.05
    assert all(t.calibrated_on == "decision-replay" for t in flag.values())


def test_eval_report_contents(pipeline_dirs):
    _, _, out = pipeline_dirs
    report = json.loads((out / "report.json").read_text())
    methods = [r["method"] for r in report["reports"]]
    assert methods == ["keystroke", "deep-keystroke", "deep-mouse",
                       "deep-keystroke+mouse"]
    for row in report["reports"]:
        assert 0.0 <= row["auroc"] <= 1.0
        assert row["n_pos"] > 0 and row["n_neg"] > 0


def test_fairness_report_contents(pipeline_dirs):
    _, _, out = pipeline_dirs
    fairness = json.loads((out / "fairness.json").read_text())
    assert fairness["method"] == "deep-keystroke+mouse"
    attributes = {row["attribute"] for row in fairness["rows"]}
    assert attributes == {"gender", "age_band", "region"}


def test_tampering_detected(pipeline_dirs, tmp_path):
    data, models, _ = pipeline_dirs
    tampered = tmp_path / "tampered"
    tampered.mkdir()
    text = (data / "sessions.jsonl").read_text()
    corrupt = tampered / "sessions.jsonl"
    corrupt.write_text(text.replace("u0000", "u9999", 1))
    (tampered / "simulate.manifest.json").write_text(
        (data / "simulate.manifest.json").read_text())
    with pytest.raises(ConfigError, match="modified"):
        train_stage(tmp_path / "m2", tampered, seed=5, epochs=1, batch_users=8)


def test_eval_fails_fast_on_dimension_mismatch(pipeline_dirs, tmp_path):
    data, models, out = pipeline_dirs
    broken = tmp_path / "broken-models"
    broken.mkdir()
    for name in ("model-keystroke.rwnet", "model-mouse.rwnet",
                 "model-combined.rwnet", "split.json"):
        (broken / name).write_bytes((models / name).read_bytes())
    # swap keystroke and mouse models: input dims no longer match
    key = (broken / "model-keystroke.rwnet").read_bytes()
    (broken / "model-keystroke.rwnet").write_bytes(
        (broken / "model-mouse.rwnet").read_bytes())
    (broken / "model-mouse.rwnet").write_bytes(key)
    with pytest.raises(ConfigError, match="input_dim"):
        eval_stage(tmp_path / "e2", data, broken, out / "thresholds.json",
                   seed=5, n_pairs=100)


def test_partial_outputs_removed_on_failure(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(ConfigError):
        train_stage(out, tmp_path / "missing-data", seed=1)
    assert not list(out.glob("*"))


def test_cli_exit_codes(tmp_path):
    runner = CliRunner()
    result = runner.invoke(cli_main, ["train", "--data", str(tmp_path),
                                      "--out", str(tmp_path / "m")])
    assert result.exit_code == 2  # no corpus: config error

    result = runner.invoke(cli_main, ["simulate", "--out", str(tmp_path / "d"),
                                      "--users", "6", "--sessions-per-user", "2",
                                      "--duration-ms", "20000", "--seed", "1"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "d" / "sessions.jsonl").exists()

    result = runner.invoke(cli_main, ["simulate", "--out", str(tmp_path / "bad"),
                                      "--users", "4", "--rings", "9",
                                      "--ring-size", "2"])
    assert result.exit_code == 2


def test_cli_config_file_overrides_flags(tmp_path):
    runner = CliRunner()
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"schema_version": "ringwatch/config/v1",
                                  "users": 7}))
    result = runner.invoke(cli_main, [
        "simulate", "--out", str(tmp_path / "cfg"), "--users", "3",
        "--sessions-per-user", "1", "--duration-ms", "20000",
        "--config", str(config)])
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "cfg" / "sessions.jsonl").read_text().strip().splitlines()
    assert len(lines) == 7  # config value beat the flag

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": "other/v1"}))
    result = runner.invoke(cli_main, ["simulate", "--out", str(tmp_path / "x"),
                                      "--config", str(bad)])
    assert result.exit_code == 2

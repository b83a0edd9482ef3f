import os, sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

import json

import pytest

from pipeline.runner import SUMMARY_FILE, run_pipeline
from storage.checkpoint_store import MANIFEST_NAME
from utils.errors import IntegrityError


def _report(run_dir):
    data = json.loads((run_dir / "eval" / "report.json").read_text())
    return data["rows"], data["overall"]


def test_tiny_pipeline_skips_and_reproduces(tiny_config, tmp_path):
    first = run_pipeline(tiny_config, tmp_path / "run")
    assert first.statuses() == ["completed"] * 5
    for name in ("classification.csv", "report.json", "report.csv", "degraded_inputs.json",
                 "content_similarity.json"):
        assert (tmp_path / "run" / "eval" / name).exists()
    summary = json.loads((tmp_path / "run" / SUMMARY_FILE).read_text())
    assert summary["overall"] == _report(tmp_path / "run")[1]
    assert summary["stages"]["train-restorer"]["inputs"] == ["data", "daclip"]

    again = run_pipeline(tiny_config, tmp_path / "run")
    assert again.statuses() == ["skipped"] * 5

    fresh = run_pipeline(tiny_config, tmp_path / "fresh")
    assert fresh.statuses() == ["completed"] * 5
    assert _report(tmp_path / "fresh") == _report(tmp_path / "run")


def test_corrupted_checkpoint_is_detected(tiny_config, tmp_path):
    run_dir = tmp_path / "run"
    run_pipeline(tiny_config, run_dir)
    expected = _report(run_dir)

    model_dir = run_dir / "restorer" / "model"
    record = json.loads((model_dir / MANIFEST_NAME).read_text())["tensors"][0]
    blob = bytearray((model_dir / record["file"]).read_bytes())
    blob[0] ^= 0xFF
    (model_dir / record["file"]).write_bytes(bytes(blob))

    with pytest.raises(IntegrityError, match=record["name"].replace(".", r"\.")):
        run_pipeline(tiny_config, run_dir)

    resumed = run_pipeline(tiny_config, run_dir, resume=True)
    assert resumed.job_status["train-restorer"]["status"] == "completed"
    assert resumed.job_status["gen-data"]["status"] == "skipped"
    assert _report(run_dir) == expected


def test_config_change_reruns_downstream_only(tiny_config, tmp_path):
    from utils.config import config_to_dict, validate_config

    run_pipeline(tiny_config, tmp_path / "run")
    data = config_to_dict(tiny_config)
    data["restorer"]["lr"] = 1e-3
    changed = run_pipeline(validate_config(data), tmp_path / "run")
    assert changed.statuses() == ["skipped", "skipped", "skipped", "completed", "completed"]

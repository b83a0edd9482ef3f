import os, sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

import json

import pytest

from pipeline.runner import SUMMARY_FILE, STAGE_DIRS, STAGE_INPUTS, STAGES, PipelineRunner, output_checksums
from utils.errors import IntegrityError, StageFailure, exit_code_for


def test_stage_inputs_point_upstream():
    for stage, inputs in STAGE_INPUTS.items():
        assert all(STAGES.index(name) < STAGES.index(stage) for name in inputs)
    assert set(STAGE_DIRS) == set(STAGES)


def test_output_checksums_skip_stage_record(tmp_path):
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "a.txt").write_text("a")
    (tmp_path / "stage.json").write_text("{}")
    assert list(output_checksums(tmp_path)) == [os.path.join("sub", "a.txt")]


def test_stage_key_needs_upstream_records(tiny_config, tmp_path):
    runner = PipelineRunner(tiny_config, tmp_path)
    assert runner.stage_key("gen-data")
    with pytest.raises(IntegrityError):
        runner.stage_key("train-daclip")


def test_failed_stage_is_wrapped(tiny_config, tmp_path):
    runner = PipelineRunner(tiny_config, tmp_path)

    def broken(stage_dir):
        raise RuntimeError("boom")

    runner.handlers["pretrain-clip"] = broken
    with pytest.raises(StageFailure) as info:
        runner.run_stage("pretrain-clip")
    assert info.value.stage == "pretrain-clip"
    assert exit_code_for(info.value) == 3
    assert runner.job_status["pretrain-clip"]["status"] == "failed"


def test_completed_stage_is_skipped_until_it_changes(tiny_config, tmp_path):
    runner = PipelineRunner(tiny_config, tmp_path)
    calls = []

    def write(stage_dir):
        calls.append(stage_dir)
        (stage_dir / "out.txt").write_text("result")

    runner.handlers["gen-data"] = write
    assert runner.run_stage("gen-data") == "completed"
    assert runner.run_stage("gen-data") == "skipped"
    assert len(calls) == 1

    (tmp_path / "data" / "out.txt").write_text("tampered")
    with pytest.raises(IntegrityError):
        runner.run_stage("gen-data")

    resumed = PipelineRunner(tiny_config, tmp_path, resume=True)
    resumed.handlers["gen-data"] = write
    assert resumed.run_stage("gen-data") == "completed"
    assert len(calls) == 2


def _stub_runner(config, run_dir, **kwargs):
    runner = PipelineRunner(config, run_dir, **kwargs)

    def write(stage_dir):
        (stage_dir / "out.txt").write_text(stage_dir.name)

    for stage in STAGES:
        runner.handlers[stage] = write
    return runner


def test_summary_includes_total_pipeline_time(tiny_config, tmp_path):
    _stub_runner(tiny_config, tmp_path / "run").run()
    summary = json.loads((tmp_path / "run" / SUMMARY_FILE).read_text())
    assert summary["metrics"]["timings"]["pipeline"]["count"] == 1
    assert summary["overall"] is None
    assert [summary["stages"][s]["status"] for s in STAGES] == ["completed"] * len(STAGES)


def test_log_dir_overrides_run_logs(tiny_config, tmp_path):
    runner = _stub_runner(tiny_config, tmp_path / "run", log_dir=tmp_path / "elsewhere")
    runner.run()
    assert (tmp_path / "elsewhere" / "app.log").exists()
    assert not (tmp_path / "run" / "logs").exists()
    assert runner.log_path == tmp_path / "elsewhere" / "app.log"

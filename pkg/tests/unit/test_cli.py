import os, sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

import json

import pytest

from main import build_parser, main

CONFIG = os.path.join(os.path.dirname(__file__), '..', '..', 'config', 'tiny_run.json')


def test_bad_config_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"restorer": {"diffusion_T": 0}}))
    assert main(["gen-data", "--config", str(path), "--out", str(tmp_path / "data"),
                 "--log-dir", str(tmp_path / "logs")]) == 2


def test_missing_dataset_exits_2(tmp_path):
    assert main(["train-daclip", "--config", CONFIG, "--clip", str(tmp_path / "clip"),
                 "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "daclip"),
                 "--log-dir", str(tmp_path / "logs")]) == 2


def test_missing_manifest_exits_4(tmp_path):
    (tmp_path / "clip").mkdir()
    assert main(["evaluate", "--what", "content", "--config", CONFIG, "--daclip", str(tmp_path / "clip"),
                 "--data", str(tmp_path), "--out", str(tmp_path / "eval"),
                 "--log-dir", str(tmp_path / "logs")]) == 4


def test_gen_data_with_seed_override(tmp_path):
    assert main(["gen-data", "--config", CONFIG, "--out", str(tmp_path / "data"), "--seed", "5",
                 "--log-dir", str(tmp_path / "logs")]) == 0
    assert (tmp_path / "data" / "train" / "manifest.json").exists()
    assert (tmp_path / "data" / "test" / "manifest.json").exists()


def test_parser_requires_out():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["gen-data"])


def test_pipeline_passes_log_dir(tmp_path, monkeypatch):
    import pipeline.runner

    seen = {}

    class _Runner:
        job_status = {}

        def statuses(self):
            return []

    def fake_run_pipeline(config, run_dir, resume=False, log_dir=None):
        seen.update(run_dir=run_dir, resume=resume, log_dir=log_dir)
        return _Runner()

    monkeypatch.setattr(pipeline.runner, "run_pipeline", fake_run_pipeline)
    assert main(["pipeline", "--config", CONFIG, "--out", str(tmp_path / "run"),
                 "--log-dir", str(tmp_path / "logs")]) == 0
    assert seen == {"run_dir": str(tmp_path / "run"), "resume": False, "log_dir": str(tmp_path / "logs")}

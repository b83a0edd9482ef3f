"""
端到端流程模組
Runs gen-data -> pretrain-clip -> train-daclip -> train-restorer -> evaluate
in one run directory. A stage is skipped when its stage.json records the same
stage key (config sections + upstream outputs) and every output checksum still
matches.
"""
import json
import time
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

from controller.daclip import load_daclip
from controller.trainer import train_controller
from data.dataset_builder import build_all, load_manifest, manifest_path
from data.datasets import DegradedPairs
from evaluation.classification import eval_classification
from evaluation.restoration_eval import content_similarity, eval_degraded_inputs, eval_restoration
from models.pretrain import pretrain_clip
from monitoring.metrics import MetricsCollector, get_system_metrics, timing_metric
from restoration.restorer import load_restorer
from restoration.trainer import load_pairs, train_restorer
from storage.checkpoint_store import git_describe, sha256_bytes, sha256_file, verify_checkpoint
from utils.config import RunConfig, config_hash, config_to_dict, dump_config
from utils.errors import ConfigError, IntegrityError, StageFailure
from utils.logging_config import setup_logging, structured_logger

STAGE_FILE = "stage.json"
SUMMARY_FILE = "run_summary.json"

STAGES = ["gen-data", "pretrain-clip", "train-daclip", "train-restorer", "evaluate"]

STAGE_DIRS = {
    "gen-data": "data",
    "pretrain-clip": "clip",
    "train-daclip": "daclip",
    "train-restorer": "restorer",
    "evaluate": "eval",
}

# config sections each stage reads
STAGE_SECTIONS = {
    "gen-data": ["dataset"],
    "pretrain-clip": ["dataset", "clip"],
    "train-daclip": ["controller"],
    "train-restorer": ["restorer", "eval"],
    "evaluate": ["eval"],
}

# upstream stages whose outputs a stage reads
STAGE_INPUTS = {
    "gen-data": [],
    "pretrain-clip": [],
    "train-daclip": ["gen-data", "pretrain-clip"],
    "train-restorer": ["gen-data", "train-daclip"],
    "evaluate": ["gen-data", "pretrain-clip", "train-daclip", "train-restorer"],
}

CHECKPOINT_STAGES = {"pretrain-clip", "train-daclip", "train-restorer"}


def output_checksums(stage_dir: Path) -> Dict[str, str]:
    """sha256 of every file under a stage directory except its stage record"""
    return {
        str(path.relative_to(stage_dir)): sha256_file(path)
        for path in sorted(stage_dir.rglob("*"))
        if path.is_file() and path.name != STAGE_FILE
    }


class PipelineRunner:
    """流程執行器"""

    def __init__(self, config: RunConfig, run_dir: Union[str, Path], resume: bool = False,
                 log_dir: Optional[Union[str, Path]] = None):
        self.config = config
        self.run_dir = Path(run_dir)
        self.resume = resume
        self.logger = logging.getLogger(__name__)
        self.metrics_collector = MetricsCollector()
        self.log_dir = Path(log_dir) if log_dir else self.run_dir / "logs"
        self.log_path = self.log_dir / "app.log"

        self.job_status: Dict[str, Dict[str, Any]] = {
            stage: {"last_run": None, "status": "pending", "error": None, "duration": 0.0}
            for stage in STAGES
        }
        self.handlers: Dict[str, Callable[[Path], None]] = {
            "gen-data": self._gen_data,
            "pretrain-clip": self._pretrain_clip,
            "train-daclip": self._train_daclip,
            "train-restorer": self._train_restorer,
            "evaluate": self._evaluate,
        }

    def stage_dir(self, stage: str) -> Path:
        return self.run_dir / STAGE_DIRS[stage]

    def model_dir(self, stage: str) -> Path:
        return self.stage_dir(stage) / "model"

    def stage_key(self, stage: str) -> str:
        """Hash of the stage's config sections and the recorded outputs of its inputs"""
        upstream = {}
        for name in STAGE_INPUTS[stage]:
            record = self._read_record(name)
            if record is None:
                raise IntegrityError(f"stage '{stage}' needs '{name}', which has no stage record")
            upstream[name] = record["outputs"]
        blob = json.dumps({"config": config_hash(self.config, STAGE_SECTIONS[stage]), "upstream": upstream},
                          sort_keys=True)
        return sha256_bytes(blob.encode("utf-8"))

    def _read_record(self, stage: str) -> Optional[Dict[str, Any]]:
        path = self.stage_dir(stage) / STAGE_FILE
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def _verify_outputs(self, stage: str, record: Dict[str, Any]) -> None:
        stage_dir = self.stage_dir(stage)
        if stage in CHECKPOINT_STAGES:
            # names the corrupted tensor, if any
            verify_checkpoint(self.model_dir(stage))
        actual = output_checksums(stage_dir)
        for rel, checksum in record["outputs"].items():
            if rel not in actual:
                raise IntegrityError(f"stage '{stage}' output {rel} is missing")
            if actual[rel] != checksum:
                raise IntegrityError(f"stage '{stage}' output {rel} fails its checksum")

    def can_skip(self, stage: str) -> bool:
        record = self._read_record(stage)
        if record is None or record.get("key") != self.stage_key(stage):
            return False
        try:
            self._verify_outputs(stage, record)
        except IntegrityError as e:
            if self.resume:
                self.logger.warning(f"Rerunning {stage}: {e}")
                return False
            raise
        return True

    def _write_record(self, stage: str, duration: float) -> Dict[str, Any]:
        record = {
            "stage": stage,
            "key": self.stage_key(stage),
            "inputs": [str(self.stage_dir(name).relative_to(self.run_dir)) for name in STAGE_INPUTS[stage]],
            "outputs": output_checksums(self.stage_dir(stage)),
            "duration": duration,
            "finished_at": datetime.now(timezone.utc).isoformat(),
        }
        (self.stage_dir(stage) / STAGE_FILE).write_text(json.dumps(record, indent=2, sort_keys=True),
                                                        encoding="utf-8")
        return record

    def run_stage(self, stage: str) -> str:
        """Run or skip one stage; returns "skipped" or "completed" """
        status = self.job_status[stage]
        status["last_run"] = datetime.now(timezone.utc).isoformat()
        if self.can_skip(stage):
            status["status"] = "skipped"
            self.metrics_collector.increment_counter("stages_skipped")
            structured_logger.log_stage(stage, "skipped")
            return "skipped"

        stage_dir = self.stage_dir(stage)
        stage_dir.mkdir(parents=True, exist_ok=True)
        (stage_dir / STAGE_FILE).unlink(missing_ok=True)
        structured_logger.log_stage(stage, "started")
        start_time = time.time()
        try:
            self.handlers[stage](stage_dir)
        except (ConfigError, IntegrityError) as e:
            status.update({"status": "failed", "error": str(e)})
            structured_logger.log_stage(stage, "failed", time.time() - start_time, error=str(e))
            raise
        except Exception as e:
            status.update({"status": "failed", "error": str(e)})
            structured_logger.log_stage(stage, "failed", time.time() - start_time, error=str(e))
            self.logger.error(f"Stage {stage} failed: {e}")
            raise StageFailure(stage, str(self.log_path), e) from e

        duration = time.time() - start_time
        self._write_record(stage, duration)
        status.update({"status": "completed", "duration": duration})
        self.metrics_collector.increment_counter("stages_completed")
        self.metrics_collector.record_timing("stage", duration, {"stage": stage})
        structured_logger.log_stage(stage, "completed", duration)
        return "completed"

    def _gen_data(self, stage_dir: Path) -> None:
        build_all(self.config.dataset, stage_dir, seed=self.config.seed)

    def _pretrain_clip(self, stage_dir: Path) -> None:
        pretrain_clip(self.config, self.model_dir("pretrain-clip"))

    def _train_daclip(self, stage_dir: Path) -> None:
        data = self.stage_dir("gen-data")
        train_controller(self.config, self.model_dir("pretrain-clip"), manifest_path(data, "train"),
                         self.model_dir("train-daclip"), test_data=manifest_path(data, "test"))

    def _train_restorer(self, stage_dir: Path) -> None:
        data = self.stage_dir("gen-data")
        train_restorer(self.config, self.model_dir("train-daclip"), manifest_path(data, "train"),
                       manifest_path(data, "test"), self.model_dir("train-restorer"))

    def _evaluate(self, stage_dir: Path) -> None:
        test = DegradedPairs.from_manifest(load_manifest(manifest_path(self.stage_dir("gen-data"), "test")))
        daclip, _ = load_daclip(self.model_dir("train-daclip"), self.model_dir("pretrain-clip"),
                                device=self.config.device)
        restorer, _, _ = load_restorer(self.model_dir("train-restorer"), device=self.config.device)
        echo = config_to_dict(self.config)

        classification = eval_classification(daclip, test, batch_size=self.config.eval.batch_size)
        classification.save_csv(stage_dir / "classification.csv")
        (stage_dir / "classification.json").write_text(json.dumps(classification.to_dict(), indent=2),
                                                       encoding="utf-8")

        evaluated = load_pairs(test, self.config.restorer.degradations)
        report = eval_restoration(restorer, daclip, evaluated, self.config.restorer.embedding_source, echo,
                                  self.config.eval.sample_seed, self.config.eval.batch_size)
        report.save(stage_dir, "report")
        eval_degraded_inputs(evaluated, echo).save(stage_dir, "degraded_inputs")
        (stage_dir / "content_similarity.json").write_text(
            json.dumps(content_similarity(daclip, test), indent=2, sort_keys=True), encoding="utf-8")

    def run(self) -> Path:
        """
        Execute all stages in order and write run_summary.json

        Returns:
            the run directory
        """
        self.run_dir.mkdir(parents=True, exist_ok=True)
        setup_logging(str(self.log_dir))
        (self.run_dir / "config.json").write_text(dump_config(self.config), encoding="utf-8")
        self.logger.info(f"Pipeline run in {self.run_dir} (resume={self.resume})")

        self.run_stages()
        self.write_summary()
        return self.run_dir

    @timing_metric("pipeline")
    def run_stages(self) -> None:
        for stage in STAGES:
            self.run_stage(stage)

    def write_summary(self) -> Path:
        report_path = self.stage_dir("evaluate") / "report.json"
        report = json.loads(report_path.read_text(encoding="utf-8")) if report_path.exists() else None
        summary = {
            "run_dir": str(self.run_dir),
            "config_hash": config_hash(self.config),
            "git_describe": git_describe(),
            "stages": {
                stage: {
                    **self.job_status[stage],
                    "directory": STAGE_DIRS[stage],
                    "inputs": [STAGE_DIRS[name] for name in STAGE_INPUTS[stage]],
                }
                for stage in STAGES
            },
            "overall": report["overall"] if report else None,
            "metrics": self.metrics_collector.snapshot(),
            "system": get_system_metrics(),
        }
        path = self.run_dir / SUMMARY_FILE
        path.write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
        self.logger.info(f"Run summary written to {path}")
        return path

    def statuses(self) -> List[str]:
        return [self.job_status[stage]["status"] for stage in STAGES]


def run_pipeline(config: RunConfig, run_dir: Union[str, Path], resume: bool = False,
                 log_dir: Optional[Union[str, Path]] = None) -> PipelineRunner:
    runner = PipelineRunner(config, run_dir, resume=resume, log_dir=log_dir)
    runner.run()
    return runner

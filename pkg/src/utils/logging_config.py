"""
日誌配置模組
Structured logging for training runs, pipeline stages and evaluations
"""
import os
import logging
import json
from datetime import datetime, timezone
from typing import Dict, Any, Optional

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(log_dir: Optional[str] = None, level: int = logging.INFO) -> logging.Logger:
    """設置日誌配置

    Args:
        log_dir: directory for app.log / error.log, defaults to $DACLIP_LOG_DIR or "logs"
        level: root log level

    Returns:
        logger of this module
    """
    log_dir = log_dir or os.getenv("DACLIP_LOG_DIR", "logs")
    os.makedirs(log_dir, exist_ok=True)

    root = logging.getLogger()
    # re-running setup (pipeline after CLI) replaces our own handlers only
    for handler in list(root.handlers):
        if getattr(handler, "_daclip", False):
            root.removeHandler(handler)
            handler.close()

    formatter = logging.Formatter(LOG_FORMAT)
    console = logging.StreamHandler()
    app_file = logging.FileHandler(os.path.join(log_dir, "app.log"))
    error_file = logging.FileHandler(os.path.join(log_dir, "error.log"))
    error_file.setLevel(logging.ERROR)

    for handler in (console, app_file, error_file):
        handler.setFormatter(formatter)
        handler._daclip = True
        root.addHandler(handler)
    root.setLevel(level)

    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("PIL").setLevel(logging.WARNING)

    return logging.getLogger(__name__)


class StructuredLogger:
    """結構化日誌記錄器"""

    def __init__(self, name: str):
        self.logger = logging.getLogger(name)

    def _payload(self, message: str, extra: Dict[str, Any]) -> str:
        return json.dumps({
            "message": message,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            **extra
        }, default=str)

    def info(self, message: str, extra: Dict[str, Any] = None):
        """記錄信息日誌"""
        self.logger.info(self._payload(message, extra) if extra else message)

    def error(self, message: str, extra: Dict[str, Any] = None):
        """記錄錯誤日誌"""
        self.logger.error(self._payload(message, extra) if extra else message)

    def warning(self, message: str, extra: Dict[str, Any] = None):
        """記錄警告日誌"""
        self.logger.warning(self._payload(message, extra) if extra else message)

    def debug(self, message: str, extra: Dict[str, Any] = None):
        """記錄調試日誌"""
        self.logger.debug(self._payload(message, extra) if extra else message)

    def log_training_step(self, component: str, epoch: int, step: int,
                          metrics: Dict[str, float]):
        """Log one optimisation step or epoch summary"""
        log_data = {
            "event_type": "training_step",
            "component": component,
            "epoch": epoch,
            "step": step,
            "metrics": {k: float(v) for k, v in metrics.items()},
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        self.logger.info(json.dumps(log_data))

    def log_stage(self, stage: str, status: str, duration: float = 0.0, **kwargs):
        """Log a pipeline stage transition"""
        log_data = {
            "event_type": "pipeline_stage",
            "stage": stage,
            "status": status,
            "duration_ms": duration * 1000,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            **kwargs
        }
        self.logger.info(json.dumps(log_data, default=str))

    def log_error(self, error_type: str, error_message: str,
                  context: Dict[str, Any] = None):
        """記錄錯誤"""
        log_data = {
            "event_type": "error",
            "error_type": error_type,
            "error_message": error_message,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "context": context or {}
        }
        self.logger.error(json.dumps(log_data, default=str))

    def log_performance(self, operation: str, duration: float,
                        metrics: Dict[str, Any] = None):
        """記錄性能指標"""
        log_data = {
            "event_type": "performance",
            "operation": operation,
            "duration_ms": duration * 1000,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "metrics": metrics or {}
        }
        self.logger.info(json.dumps(log_data, default=str))


structured_logger = StructuredLogger("daclip_desk")

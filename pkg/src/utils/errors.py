"""
Exception hierarchy and CLI exit codes
"""
from typing import Optional


class DAClipError(Exception):
    """Base class for all errors raised by daclip-desk"""

    exit_code = 1


class ConfigError(DAClipError, ValueError):
    """Invalid configuration value, unknown key or bad CLI argument"""

    exit_code = 2

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class StageFailure(DAClipError):
    """A pipeline stage failed; carries the stage name and its log path"""

    exit_code = 3

    def __init__(self, stage: str, log_path: str, cause: Optional[BaseException] = None):
        self.stage = stage
        self.log_path = log_path
        self.cause = cause
        detail = f": {cause}" if cause else ""
        super().__init__(f"stage '{stage}' failed{detail} (log: {log_path})")


class IntegrityError(DAClipError):
    """Checksum mismatch, missing artifact or frozen-weight drift"""

    exit_code = 4


class CheckpointVersionError(IntegrityError):
    """Checkpoint written by an incompatible format version"""


class TrainingDivergenceError(DAClipError):
    """Loss became NaN or infinite during training"""

    exit_code = 3

    def __init__(self, component: str, epoch: int, step: int, value: float):
        self.component = component
        self.epoch = epoch
        self.step = step
        self.value = value
        super().__init__(
            f"{component} training diverged at epoch {epoch}, step {step}: loss={value}"
        )


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the process exit code"""
    if isinstance(exc, DAClipError):
        return exc.exit_code
    return 1

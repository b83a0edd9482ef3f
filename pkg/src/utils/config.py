"""
Run configuration: pydantic models, loading, canonical dumping and hashing
"""
import os
import json
import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.errors import ConfigError

logger = logging.getLogger(__name__)

DEGRADATION_LABELS: Tuple[str, ...] = (
    "blurry", "hazy", "jpeg", "low-light", "noisy",
    "raindrop", "rainy", "shadowed", "snowy", "inpainting",
)
SCENE_SIZES = (32, 64, 128, 256)

FloatRange = Tuple[float, float]
IntRange = Tuple[int, int]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DegradationRanges(_Section):
    """Sampling ranges of every degradation operator"""

    blur_kernel_sizes: List[int] = [5, 7, 9, 11]
    blur_sigma: FloatRange = (1.0, 3.0)
    haze_beta: FloatRange = (0.8, 1.6)
    haze_airlight: FloatRange = (0.7, 1.0)
    jpeg_quality: int = Field(10, ge=1, le=95)
    lowlight_scale: FloatRange = (0.1, 0.3)
    lowlight_gamma: FloatRange = (1.5, 2.5)
    lowlight_noise_sigma: float = Field(5.0 / 255.0, ge=0.0)
    noise_sigma: float = Field(50.0 / 255.0, ge=0.0)
    raindrop_count: IntRange = (5, 15)
    raindrop_radius: FloatRange = (0.04, 0.10)
    rain_angle_deg: FloatRange = (-30.0, 30.0)
    rain_density: FloatRange = (0.01, 0.03)
    rain_length: IntRange = (5, 13)
    rain_intensity: FloatRange = (0.5, 0.9)
    shadow_factor: FloatRange = (0.3, 0.6)
    snow_density: FloatRange = (0.004, 0.012)
    snow_radius: FloatRange = (0.6, 2.2)
    inpaint_strokes: IntRange = (2, 5)
    inpaint_width: IntRange = (1, 3)

    @field_validator("blur_kernel_sizes")
    @classmethod
    def _odd_kernels(cls, v: List[int]) -> List[int]:
        if not v or any(k < 1 or k % 2 == 0 for k in v):
            raise ValueError("kernel sizes must be positive odd integers")
        return v

    @model_validator(mode="after")
    def _ordered_ranges(self) -> "DegradationRanges":
        for name, value in self:
            if isinstance(value, tuple) and value[0] > value[1]:
                raise ValueError(f"{name}: lower bound exceeds upper bound")
        return self


class DatasetConfig(_Section):
    size: int = 64
    train_per_type: int = Field(200, ge=1)
    test_per_type: int = Field(40, ge=1)
    train_seed_start: int = Field(0, ge=0)
    test_seed_start: int = Field(1_000_000, ge=0)
    num_workers: int = Field(1, ge=1)
    ranges: DegradationRanges = Field(default_factory=DegradationRanges)

    @field_validator("size")
    @classmethod
    def _scene_size(cls, v: int) -> int:
        if v not in SCENE_SIZES:
            raise ValueError(f"size must be one of {SCENE_SIZES}")
        return v

    def seed_range(self, split: str) -> range:
        if split == "train":
            return range(self.train_seed_start, self.train_seed_start + self.train_per_type * len(DEGRADATION_LABELS))
        if split == "test":
            return range(self.test_seed_start, self.test_seed_start + self.test_per_type * len(DEGRADATION_LABELS))
        raise ValueError(f"unknown split '{split}'")

    @model_validator(mode="after")
    def _disjoint_seeds(self) -> "DatasetConfig":
        train, test = self.seed_range("train"), self.seed_range("test")
        if train.start < test.stop and test.start < train.stop:
            raise ValueError("train and test seed ranges overlap")
        return self


class ClipConfig(_Section):
    embed_dim: int = Field(64, ge=2)
    width: int = Field(128, ge=4)
    depth: int = Field(4, ge=1)
    heads: int = Field(4, ge=1)
    patch_size: int = Field(8, ge=1)
    text_depth: int = Field(2, ge=1)
    max_length: int = Field(12, ge=4)
    mlp_ratio: int = Field(4, ge=1)
    num_pairs: int = Field(2000, ge=2)
    holdout_pairs: int = Field(200, ge=2)
    pair_seed_start: int = Field(5_000_000, ge=0)
    epochs: int = Field(30, ge=1)
    lr: float = Field(5e-4, gt=0)
    weight_decay: float = Field(0.01, ge=0)
    batch_size: int = Field(64, ge=1)
    symmetric_loss: bool = False
    tau_init: float = Field(0.07, gt=0)
    tau_min: float = Field(0.01, gt=0)

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "ClipConfig":
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")
        return self


class ControllerConfig(_Section):
    epochs: int = Field(40, ge=1)
    lr: float = Field(3e-4, gt=0)
    weight_decay: float = Field(0.0, ge=0)
    batch_size: int = Field(64, ge=1)
    zero_init: bool = True
    learn_tau: bool = False
    mode: Literal["controller", "finetune-all"] = "controller"
    symmetric_loss: bool = False


class RestorerConfig(_Section):
    backend: Literal["mse", "diffusion"] = "mse"
    mode: Literal["none", "degradation", "content", "both"] = "both"
    embedding_source: Literal["daclip", "gt", "text"] = "daclip"
    scales: int = Field(3, ge=1, le=5)
    base_width: int = Field(32, ge=8)
    cross_attention_scales: Optional[List[int]] = None
    prompt_enabled: bool = True
    prompt_type: Literal["bank", "film", "mlp"] = "bank"
    prompt_size: int = Field(8, ge=1)
    prompt_dim: int = Field(64, ge=1)
    attention_heads: int = Field(4, ge=1)
    diffusion_T: int = Field(200, ge=1)
    beta_start: float = Field(1e-4, gt=0, lt=1)
    beta_end: float = Field(0.02, gt=0, lt=1)
    epochs: int = Field(20, ge=1)
    lr: float = Field(2e-4, gt=0)
    batch_size: int = Field(32, ge=1)
    patch_size: Optional[int] = Field(None, ge=8)
    val_per_type: Optional[int] = Field(None, ge=1)
    degradations: List[str] = list(DEGRADATION_LABELS)

    @field_validator("degradations")
    @classmethod
    def _known_labels(cls, v: List[str]) -> List[str]:
        unknown = [d for d in v if d not in DEGRADATION_LABELS]
        if unknown or not v:
            raise ValueError(f"unknown or empty degradation labels: {unknown}")
        return v

    @model_validator(mode="after")
    def _scale_sets(self) -> "RestorerConfig":
        if self.cross_attention_scales is not None:
            bad = [s for s in self.cross_attention_scales if not 0 <= s < self.scales]
            if bad:
                raise ValueError(f"cross_attention_scales {bad} outside 0..{self.scales - 1}")
        if self.base_width % 8 or self.base_width % self.attention_heads:
            raise ValueError("base_width must be a multiple of 8 and of attention_heads")
        if self.beta_start >= self.beta_end:
            raise ValueError("beta_start must be below beta_end")
        return self

    def attention_scales(self) -> List[int]:
        """Scale indices with cross-attention; defaults to the lowest resolution"""
        if self.cross_attention_scales is None:
            return [self.scales - 1]
        return sorted(set(self.cross_attention_scales))


class EvalConfig(_Section):
    seeds: List[int] = [0, 1, 2]
    sample_seed: int = 0
    batch_size: int = Field(32, ge=1)
    ordering_slack_db: float = Field(0.05, ge=0)
    gt_slack_db: float = Field(0.1, ge=0)
    uplift_both_db: float = 0.2
    uplift_degradation_db: float = 0.05
    zero_init_slack: float = Field(0.01, ge=0)
    classification_margin: float = 0.30


class RunConfig(_Section):
    seed: int = 0
    device: str = "cpu"
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    clip: ClipConfig = Field(default_factory=ClipConfig)
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    restorer: RestorerConfig = Field(default_factory=RestorerConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def _cross_section(self) -> "RunConfig":
        if self.dataset.size % self.clip.patch_size:
            raise ValueError("clip.patch_size must divide dataset.size")
        patch = self.restorer.patch_size or self.dataset.size
        if patch > self.dataset.size or patch % (2 ** (self.restorer.scales - 1)):
            raise ValueError("restorer.patch_size must not exceed dataset.size and must be divisible by 2**(scales-1)")
        return self


def _error_key(loc: Iterable[Any]) -> str:
    return ".".join(str(part) for part in loc if not isinstance(part, int)) or "<root>"


def validate_config(data: Dict[str, Any]) -> RunConfig:
    """Validate a raw mapping, converting pydantic errors into ConfigError"""
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        key = _error_key(first["loc"])
        raise ConfigError(first["msg"], key=key) from e


def load_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    Load, default and validate a run configuration

    Args:
        path: JSON (or YAML) file; None or an empty file yields all defaults

    Returns:
        validated RunConfig
    """
    load_dotenv()
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        if text.strip():
            try:
                if path.suffix in (".yaml", ".yml"):
                    data = yaml.safe_load(text) or {}
                else:
                    data = json.loads(text)
            except (json.JSONDecodeError, yaml.YAMLError) as e:
                raise ConfigError(f"cannot parse {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"top level of {path} must be an object")

    env_device = os.getenv("DACLIP_DEVICE")
    if env_device and "device" not in data:
        data["device"] = env_device
    env_workers = os.getenv("DACLIP_NUM_WORKERS")
    if env_workers:
        data.setdefault("dataset", {}).setdefault("num_workers", int(env_workers))

    config = validate_config(data)
    logger.debug(f"Loaded config from {path or '<defaults>'}")
    return config


def config_to_dict(config: BaseModel) -> Dict[str, Any]:
    return json.loads(config.model_dump_json())


def dump_config(config: BaseModel) -> str:
    """Canonical JSON form: sorted keys, two-space indent, trailing newline"""
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n"


def config_hash(config: RunConfig, sections: Optional[Iterable[str]] = None) -> str:
    """sha256 over the canonical form of the selected sections plus the global seed"""
    data = config_to_dict(config)
    if sections is not None:
        data = {"seed": data["seed"], **{s: data[s] for s in sections}}
    blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()

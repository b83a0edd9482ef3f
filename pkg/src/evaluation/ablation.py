"""
Restoration ablation runner

Every variant trains with the same dataset, epochs and seeds; only the
factor named by the variant changes. Curves are averaged over seeds and the
summary checks the expected orderings.
"""
import json
import time
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from controller.daclip import DAClip, load_daclip
from data.datasets import DegradedPairs
from evaluation.plots import CurveLog
from restoration.trainer import load_pairs, train_restorer
from utils.config import RunConfig, config_to_dict
from utils.errors import ConfigError
from utils.logging_config import structured_logger

logger = logging.getLogger(__name__)

VariantId = Literal["baseline", "deg_only", "content_only", "both", "gt_embed", "text_embed",
                    "no_prompt", "no_zero_init", "patch32", "patch64"]

ALL_VARIANTS: List[str] = ["baseline", "deg_only", "content_only", "both", "gt_embed", "text_embed",
                           "no_prompt", "no_zero_init", "patch32", "patch64"]

# restorer section overrides per variant
VARIANT_OVERRIDES: Dict[str, Dict[str, Any]] = {
    "baseline": {"mode": "none"},
    "deg_only": {"mode": "degradation"},
    "content_only": {"mode": "content"},
    "both": {"mode": "both"},
    "gt_embed": {"mode": "both", "embedding_source": "gt"},
    "text_embed": {"mode": "both", "embedding_source": "text"},
    "no_prompt": {"mode": "both", "prompt_type": "mlp"},
    "no_zero_init": {"mode": "both"},
    "patch32": {"mode": "both", "patch_size": 32},
    "patch64": {"mode": "both", "patch_size": 64},
}


class AblationSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variants: List[VariantId] = Field(default_factory=lambda: list(ALL_VARIANTS))
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])
    epochs: int = Field(20, ge=1)
    backend: Literal["mse", "diffusion"] = "mse"
    val_per_type: Optional[int] = Field(None, ge=1)
    daclip: Optional[str] = None
    daclip_no_zero: Optional[str] = None
    data: Optional[str] = None

    @field_validator("variants", "seeds")
    @classmethod
    def _non_empty_unique(cls, v: List) -> List:
        if not v or len(set(v)) != len(v):
            raise ValueError("must be a non-empty list without duplicates")
        return v

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AblationSpec":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"ablation spec not found: {path}")
        text = path.read_text(encoding="utf-8")
        try:
            return cls.model_validate(json.loads(text) if text.strip() else {})
        except ValidationError as e:
            first = e.errors()[0]
            key = ".".join(str(p) for p in first["loc"] if not isinstance(p, int))
            raise ConfigError(first["msg"], key=f"ablation.{key}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e

    def variant_config(self, base: RunConfig, variant: str, seed: int) -> RunConfig:
        restorer = {**config_to_dict(base.restorer), **VARIANT_OVERRIDES[variant],
                    "epochs": self.epochs, "backend": self.backend, "val_per_type": self.val_per_type}
        patch = restorer.get("patch_size")
        if patch is not None and patch > base.dataset.size:
            raise ConfigError(f"variant {variant} crops {patch}px patches from {base.dataset.size}px images",
                              key="dataset.size")
        return base.model_copy(update={"seed": seed, "restorer": type(base.restorer)(**restorer)})


@dataclass
class AblationResult:
    curves: List[CurveLog] = field(default_factory=list)
    summary: Optional[pd.DataFrame] = None
    checks: List[Dict[str, Any]] = field(default_factory=list)

    def final(self, variant: str) -> float:
        return float(self.summary.loc[variant, "psnr"])


def mean_curve(variant: str, runs: List[CurveLog]) -> CurveLog:
    """Average seed curves point-wise; all runs share the same steps"""
    curve = CurveLog(variant)
    for split, metric in sorted({(p.split, p.metric) for p in runs[0].points}):
        steps = [p.step for p in runs[0].points if p.metric == metric and p.split == split]
        values = np.mean([run.values(metric, split) for run in runs], axis=0)
        for step, value in zip(steps, values):
            curve.add(step, metric, float(value), split)
    return curve


def check_ordering(summary: pd.DataFrame, slack: float, gt_slack: float) -> List[Dict[str, Any]]:
    """Directional claims among the variants that were run"""
    psnr = summary["psnr"].to_dict()
    claims = [
        ("both", "deg_only", slack),
        ("both", "content_only", slack),
        ("deg_only", "baseline", slack),
        ("content_only", "baseline", slack),
        ("gt_embed", "both", gt_slack),
        ("patch64", "patch32", 0.0),
    ]
    checks = []
    for better, worse, tolerance in claims:
        if better in psnr and worse in psnr:
            checks.append({
                "claim": f"{better} >= {worse} - {tolerance}",
                "holds": bool(psnr[better] >= psnr[worse] - tolerance),
                "lhs": psnr[better],
                "rhs": psnr[worse],
            })
    return checks


def _require(path: Optional[str], what: str, variant: str) -> str:
    if not path:
        raise ConfigError(f"variant {variant} needs a {what} checkpoint", key=f"ablation.{what}")
    if not Path(path).exists():
        raise ConfigError(f"{what} checkpoint not found: {path}", key=f"ablation.{what}")
    return path


def run_ablation(spec: AblationSpec, config: RunConfig, train_data: Union[str, Path, DegradedPairs],
                 val_data: Union[str, Path, DegradedPairs], out_dir: Optional[Union[str, Path]] = None,
                 daclip: Optional[DAClip] = None, daclip_no_zero: Optional[DAClip] = None) -> AblationResult:
    """
    Train every variant for every seed and summarise final validation scores

    Args:
        spec: variants, seeds, epochs and checkpoint paths
        config: base run configuration shared by all variants
        train_data / val_data: manifests or loaded pairs
        out_dir: receives one <variant>.curve.json per variant, summary.csv and summary.json
        daclip / daclip_no_zero: already loaded models, otherwise loaded from the spec paths

    Returns:
        AblationResult with seed-mean curves, summary table and ordering checks
    """
    conditioned = [v for v in spec.variants if v != "baseline"]
    if conditioned and daclip is None:
        daclip, _ = load_daclip(_require(spec.daclip, "daclip", conditioned[0]), device=config.device)
    if "no_zero_init" in spec.variants and daclip_no_zero is None:
        daclip_no_zero, _ = load_daclip(_require(spec.daclip_no_zero, "daclip_no_zero", "no_zero_init"),
                                        device=config.device)

    train = load_pairs(train_data)
    val = load_pairs(val_data)
    result = AblationResult()
    rows = []
    start_time = time.time()
    for variant in spec.variants:
        model = daclip_no_zero if variant == "no_zero_init" else daclip
        runs: List[CurveLog] = []
        scores = []
        for seed in spec.seeds:
            run_config = spec.variant_config(config, variant, seed)
            logger.info(f"Ablation {variant} seed {seed}")
            run = train_restorer(run_config, model, train, val, variant=variant)
            runs.append(run.curve)
            scores.append((run.curve.final("psnr"), run.curve.final("ssim")))
        curve = mean_curve(variant, runs)
        result.curves.append(curve)
        scores = np.asarray(scores)
        rows.append({"variant": variant, "psnr": float(scores[:, 0].mean()), "psnr_std": float(scores[:, 0].std()),
                     "ssim": float(scores[:, 1].mean()), "seeds": len(spec.seeds)})
        structured_logger.info("ablation variant done", {"variant": variant, **rows[-1]})

    result.summary = pd.DataFrame(rows).set_index("variant")
    result.checks = check_ordering(result.summary, config.eval.ordering_slack_db, config.eval.gt_slack_db)
    structured_logger.log_performance(
        operation="run_ablation",
        duration=time.time() - start_time,
        metrics={"variants": len(spec.variants), "seeds": len(spec.seeds)},
    )

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for curve in result.curves:
            curve.save(out_dir / f"{curve.variant}.curve.json")
        result.summary.to_csv(out_dir / "summary.csv", float_format="%.17g")
        (out_dir / "summary.json").write_text(json.dumps({
            "spec": spec.model_dump(),
            "summary": result.summary.reset_index().to_dict(orient="records"),
            "checks": result.checks,
        }, indent=2), encoding="utf-8")
    return result

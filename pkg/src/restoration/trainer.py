"""
Restorer training for both backends

Embeddings are computed once from the full LQ images with the frozen DA-CLIP;
optional random patches are cropped only from the images.
"""
import math
import time
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from controller.daclip import DAClip, load_daclip
from data.dataset_builder import load_manifest
from data.datasets import DegradedPairs
from data.degradations import DegradationType
from evaluation.metrics import batch_psnr, batch_ssim
from evaluation.plots import CurveLog
from restoration.diffusion import ConditionedBatch, diffusion_train_step
from restoration.embeddings import EmbeddingProvider, EmbeddingTable
from restoration.restorer import Restorer, build_restorer, save_restorer, to_signed
from utils.config import RunConfig
from utils.errors import TrainingDivergenceError
from utils.logging_config import structured_logger
from utils.seeding import make_generator, resolve_device, set_seed

logger = logging.getLogger(__name__)


@dataclass
class RestorerResult:
    restorer: Restorer
    losses: List[float] = field(default_factory=list)
    curve: Optional[CurveLog] = None
    history: List[Dict] = field(default_factory=list)

    @property
    def final_psnr(self) -> float:
        return self.curve.final("psnr")


def load_pairs(data: Union[str, Path, DegradedPairs], degradations: Optional[List[str]] = None) -> DegradedPairs:
    if isinstance(data, DegradedPairs):
        if degradations is None:
            return data
        keep = torch.tensor([DegradationType(int(c)).label in degradations for c in data.degradation])
        index = keep.nonzero().flatten()
        if index.numel() == 0:
            raise ValueError("no samples left after filtering by degradation")
        return data.subset(index)
    return DegradedPairs.from_manifest(load_manifest(data), degradations)


def limit_per_type(pairs: DegradedPairs, per_type: Optional[int]) -> DegradedPairs:
    """First `per_type` samples of each degradation, order preserved"""
    if per_type is None:
        return pairs
    index = torch.cat([rows[:per_type] for _, rows in sorted(pairs.by_degradation().items())]).sort().values
    return pairs.subset(index)


def conditioning_tables(config: RunConfig, daclip: Optional[DAClip],
                        *splits: DegradedPairs) -> List[EmbeddingTable]:
    """One EmbeddingTable per split; zeros when the restorer is unconditioned"""
    if config.restorer.mode == "none":
        return [EmbeddingTable.zeros(len(p), config.clip.embed_dim) for p in splits]
    if daclip is None:
        raise ValueError(f"restorer mode '{config.restorer.mode}' needs a DA-CLIP checkpoint")
    provider = EmbeddingProvider(daclip, config.restorer.embedding_source, config.eval.batch_size)
    return [provider.for_pairs(p) for p in splits]


def random_crop(lq: torch.Tensor, hq: torch.Tensor, size: Optional[int],
                generator: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
    """Same random window for the whole batch"""
    if size is None or size >= lq.shape[-1]:
        return lq, hq
    top = int(torch.randint(0, lq.shape[-2] - size + 1, (1,), generator=generator))
    left = int(torch.randint(0, lq.shape[-1] - size + 1, (1,), generator=generator))
    window = (slice(None), slice(None), slice(top, top + size), slice(left, left + size))
    return lq[window], hq[window]


@torch.no_grad()
def restore_split(restorer: Restorer, pairs: DegradedPairs, table: EmbeddingTable,
                  batch_size: int = 32, sample_seed: int = 0) -> torch.Tensor:
    """Restored [N,3,H,W] for a whole split; diffusion noise comes from one seeded generator"""
    restorer.eval()
    device = next(restorer.parameters()).device
    generator = make_generator(sample_seed)
    outputs = []
    for start in range(0, len(pairs), batch_size):
        index = torch.arange(start, min(start + batch_size, len(pairs)))
        e_c, e_d = table.rows(index, device)
        outputs.append(restorer.restore(pairs.lq[index].to(device), e_c, e_d, generator).cpu())
    return torch.cat(outputs)


def validate_restorer(restorer: Restorer, pairs: DegradedPairs, table: EmbeddingTable,
                      batch_size: int = 32, sample_seed: int = 0) -> Dict:
    restored = restore_split(restorer, pairs, table, batch_size, sample_seed)
    psnrs = batch_psnr(restored, pairs.hq)
    ssims = batch_ssim(restored, pairs.hq)
    per_type = {}
    for code, rows in sorted(pairs.by_degradation().items()):
        per_type[DegradationType(code).label] = float(psnrs[rows.numpy()].mean())
    return {"psnr": float(psnrs.mean()), "ssim": float(ssims.mean()), "per_degradation": per_type}


def train_restorer(config: RunConfig, daclip: Optional[Union[str, Path, DAClip]],
                   train_data: Union[str, Path, DegradedPairs],
                   val_data: Optional[Union[str, Path, DegradedPairs]] = None,
                   out_dir: Optional[Union[str, Path]] = None,
                   variant: Optional[str] = None) -> RestorerResult:
    """
    Train a restorer with the configured backend and conditioning mode

    Args:
        config: run configuration (restorer section drives backend, mode and epochs)
        daclip: controller checkpoint directory or loaded DAClip; may be None for mode "none"
        train_data / val_data: manifests or loaded pairs
        out_dir: checkpoint directory; nothing is written when None
        variant: curve label, defaults to "<backend>-<mode>"

    Returns:
        RestorerResult with the step losses and the per-epoch validation curve
    """
    set_seed(config.seed)
    device = resolve_device(config.device)
    cfg = config.restorer
    daclip_dir = None
    if isinstance(daclip, (str, Path)):
        daclip_dir = str(daclip)
        daclip, _ = load_daclip(daclip, device=config.device)

    train = load_pairs(train_data, cfg.degradations)
    val = limit_per_type(load_pairs(val_data, cfg.degradations), cfg.val_per_type) if val_data is not None else None
    tables = conditioning_tables(config, daclip, *([train, val] if val is not None else [train]))
    train_table = tables[0]
    val_table = tables[1] if val is not None else None

    restorer = build_restorer(config, train_table.content.shape[1]).to(device)
    optimizer = torch.optim.AdamW(restorer.parameters(), lr=cfg.lr)
    loader = train.loader(cfg.batch_size, shuffle=True, generator=make_generator(config.seed))
    crop_generator = make_generator(config.seed + 1)
    noise_generator = make_generator(config.seed + 2)

    result = RestorerResult(restorer=restorer, curve=CurveLog(variant or f"{cfg.backend}-{cfg.mode}"))
    start_time = time.time()
    step = 0
    try:
        for epoch in range(cfg.epochs):
            restorer.train()
            epoch_losses = []
            for index, lq, hq, _, _ in tqdm(loader, desc=f"restorer epoch {epoch + 1}/{cfg.epochs}", leave=False):
                e_c, e_d = train_table.rows(index, device)
                lq, hq = random_crop(lq, hq, cfg.patch_size, crop_generator)
                lq, hq = lq.to(device), hq.to(device)
                if cfg.backend == "mse":
                    loss = F.l1_loss(restorer(lq, e_c, e_d), hq)
                else:
                    batch = ConditionedBatch(lq=to_signed(lq), hq=to_signed(hq), e_c=e_c, e_d=e_d)
                    loss = diffusion_train_step(restorer.eps, batch, restorer.schedule, noise_generator)
                if not math.isfinite(loss.item()):
                    structured_logger.log_error("TrainingDivergence", "restorer loss is not finite",
                                                {"epoch": epoch, "step": step, "backend": cfg.backend})
                    raise TrainingDivergenceError("restorer", epoch, step, loss.item())

                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                result.losses.append(loss.item())
                epoch_losses.append(loss.item())
                step += 1

            metrics = {"loss": float(np.mean(epoch_losses))}
            if val is not None:
                report = validate_restorer(restorer, val, val_table, config.eval.batch_size, config.eval.sample_seed)
                result.curve.add(step, "psnr", report["psnr"])
                result.curve.add(step, "ssim", report["ssim"])
                result.history.append({"epoch": epoch, "step": step, **report})
                metrics.update({"val_psnr": report["psnr"], "val_ssim": report["ssim"],
                                **{f"val_psnr/{k}": v for k, v in report["per_degradation"].items()}})
            result.curve.add(step, "loss", metrics["loss"], split="train")
            structured_logger.log_training_step("restorer", epoch, step, metrics)
    except TrainingDivergenceError:
        raise
    except Exception as e:
        logger.error(f"Restorer training failed at step {step}: {e}")
        raise

    structured_logger.log_performance(
        operation="train_restorer",
        duration=time.time() - start_time,
        metrics={"steps": step, "backend": cfg.backend, "mode": cfg.mode,
                 "final_val_psnr": result.history[-1]["psnr"] if result.history else None},
    )
    restorer.eval()
    if out_dir is not None:
        save_restorer(restorer, out_dir, config, {
            "daclip_checkpoint": daclip_dir,
            "embedding_source": cfg.embedding_source,
            "degradations": cfg.degradations,
            "loss_curve": result.losses,
            "history": result.history,
        })
        result.curve.save(Path(out_dir) / f"{result.curve.variant}.curve.json")
    return result

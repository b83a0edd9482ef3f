"""
Controller training with the joint content + degradation contrastive objective

Only the controller (and optionally the temperature) is optimized; the frozen
encoders are hashed before and after so any drift aborts the run.
"""
import math
import time
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import torch
from tqdm import tqdm

from controller.daclip import (
    DAClip,
    EmbeddingQuad,
    degradation_accuracy,
    degradation_only_loss,
    frozen_digest,
    init_controller,
    init_finetune_all,
    joint_loss,
    save_daclip,
)
from data.dataset_builder import load_manifest
from data.datasets import DegradedPairs
from models.clip_model import ToyCLIP
from models.pretrain import load_clip
from utils.config import RunConfig
from utils.errors import IntegrityError, TrainingDivergenceError
from utils.logging_config import structured_logger
from utils.seeding import make_generator, resolve_device, set_seed

logger = logging.getLogger(__name__)


@dataclass
class ControllerResult:
    daclip: DAClip
    losses: List[float] = field(default_factory=list)
    content_losses: List[float] = field(default_factory=list)
    degradation_losses: List[float] = field(default_factory=list)
    heldout_accuracy: Optional[float] = None
    digest_before: str = ""
    digest_after: str = ""


def moving_average(values: Sequence[float], window: int = 20) -> np.ndarray:
    """Trailing moving average; empty when there are fewer values than the window"""
    values = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    if values.size < window:
        return np.empty(0)
    return np.convolve(values, np.ones(window) / window, mode="valid")


def early_loss_rise(losses: Sequence[float], window: int = 20) -> float:
    """Largest step-to-step increase of the moving-average loss over the first half of
    training, relative to the first averaged value; 0.0 when the average never rises"""
    half = np.asarray(losses, dtype=np.float64)[: len(losses) // 2]
    averaged = moving_average(half, window)
    if averaged.size < 2:
        return 0.0
    rise = float(np.diff(averaged).max())
    return max(rise, 0.0) / max(abs(float(averaged[0])), 1e-12)


def _as_pairs(data: Union[str, Path, DegradedPairs]) -> DegradedPairs:
    if isinstance(data, DegradedPairs):
        return data
    return DegradedPairs.from_manifest(load_manifest(data))


def train_controller(config: RunConfig, clip: Union[str, Path, ToyCLIP],
                     train_data: Union[str, Path, DegradedPairs],
                     out_dir: Optional[Union[str, Path]] = None,
                     test_data: Optional[Union[str, Path, DegradedPairs]] = None,
                     clip_dir: Optional[Union[str, Path]] = None) -> ControllerResult:
    """
    Optimize the controller on a mixed-degradation training split

    Args:
        config: run configuration; the controller section selects mode, zero_init and learn_tau
        clip: CLIP checkpoint directory or an already loaded ToyCLIP
        train_data: manifest path/directory or loaded DegradedPairs
        out_dir: checkpoint directory; nothing is written when None
        test_data: optional held-out split for the final accuracy
        clip_dir: CLIP checkpoint path recorded in the controller manifest

    Returns:
        ControllerResult with per-step loss curves and held-out accuracy
    """
    set_seed(config.seed)
    device = resolve_device(config.device)
    ctrl_cfg = config.controller

    if isinstance(clip, ToyCLIP):
        model = clip.to(device)
    else:
        clip_dir = clip_dir or clip
        model, _, _ = load_clip(clip, device=config.device)
    if out_dir is not None and clip_dir is None:
        raise ValueError("clip_dir is required to save a controller trained on an in-memory CLIP")

    if ctrl_cfg.mode == "finetune-all":
        daclip = init_finetune_all(model)
        objective = degradation_only_loss
    else:
        daclip = init_controller(model, zero_init=ctrl_cfg.zero_init, seed=config.seed)
        objective = joint_loss
    daclip.freeze_clip(learn_tau=ctrl_cfg.learn_tau)
    daclip.to(device)

    train = _as_pairs(train_data)
    digest_before = frozen_digest(model)

    with torch.no_grad():
        model.eval()
        caption_embeddings = model.encode_texts(train.captions)
        prompt_embeddings = daclip.prompt_embeddings()

    optimizer = torch.optim.AdamW(daclip.trainable_parameters(), lr=ctrl_cfg.lr,
                                  weight_decay=ctrl_cfg.weight_decay)
    loader = train.loader(ctrl_cfg.batch_size, shuffle=True, generator=make_generator(config.seed))

    result = ControllerResult(daclip=daclip, digest_before=digest_before)
    start_time = time.time()
    step = 0
    try:
        for epoch in range(ctrl_cfg.epochs):
            daclip.train()
            model.eval()
            totals = np.zeros(3)
            batches = 0
            for _, lq, _, degradation, caption_id in tqdm(
                    loader, desc=f"controller epoch {epoch + 1}/{ctrl_cfg.epochs}", leave=False):
                lq = lq.to(device)
                content, degradation_embedding = daclip.encode_controlled(lq)
                quad = EmbeddingQuad(
                    image_content=content,
                    image_degradation=degradation_embedding,
                    text_content=caption_embeddings[caption_id.to(device)],
                    text_degradation=prompt_embeddings[degradation.to(device)],
                )
                loss = objective(quad, model.tau, symmetric=ctrl_cfg.symmetric_loss)
                if not math.isfinite(loss.total.item()):
                    structured_logger.log_error("TrainingDivergence", "controller loss is not finite",
                                                {"epoch": epoch, "step": step})
                    raise TrainingDivergenceError("controller", epoch, step, loss.total.item())

                optimizer.zero_grad()
                loss.total.backward()
                optimizer.step()

                result.losses.append(loss.total.item())
                result.content_losses.append(loss.content.item())
                result.degradation_losses.append(loss.degradation.item())
                totals += (loss.total.item(), loss.content.item(), loss.degradation.item())
                batches += 1
                step += 1

            means = totals / max(batches, 1)
            structured_logger.log_training_step("controller", epoch, step, {
                "loss": float(means[0]),
                "content_loss": float(means[1]),
                "degradation_loss": float(means[2]),
                "tau": float(model.tau),
            })
    except TrainingDivergenceError:
        raise
    except Exception as e:
        logger.error(f"Controller training failed at step {step}: {e}")
        raise

    result.digest_after = frozen_digest(model)
    if result.digest_after != digest_before:
        structured_logger.log_error("IntegrityError", "frozen CLIP weights changed during controller training",
                                    {"before": digest_before, "after": result.digest_after})
        raise IntegrityError("frozen CLIP weights changed during controller training")

    if test_data is not None:
        test = _as_pairs(test_data)
        result.heldout_accuracy = degradation_accuracy(daclip, test.lq, test.degradation)

    structured_logger.log_performance(
        operation="train_controller",
        duration=time.time() - start_time,
        metrics={"steps": step, "mode": daclip.mode, "heldout_accuracy": result.heldout_accuracy,
                 "early_loss_rise": early_loss_rise(result.losses)},
    )
    logger.info(f"Controller training done after {step} steps ({daclip.mode})")

    daclip.eval()
    if out_dir is not None:
        save_daclip(daclip, out_dir, config, clip_dir, {
            "loss_curve": result.losses,
            "content_loss_curve": result.content_losses,
            "degradation_loss_curve": result.degradation_losses,
            "heldout_accuracy": result.heldout_accuracy,
            "frozen_digest": digest_before,
        })
    return result

"""
Contrastive pretraining of the toy CLIP on clean scene/caption pairs
"""
import math
import time
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import torch
from tqdm import tqdm

from data.datasets import CleanPairs
from models.clip_model import ToyCLIP
from models.losses import contrastive_loss
from models.tokenizer import Vocabulary, tokenize_batch
from storage.checkpoint_store import CheckpointManifest, load_checkpoint, save_checkpoint
from utils.config import RunConfig, config_to_dict, validate_config
from utils.errors import IntegrityError, TrainingDivergenceError
from utils.logging_config import structured_logger
from utils.seeding import make_generator, resolve_device, set_seed

logger = logging.getLogger(__name__)

CLIP_COMPONENT = "clip"


@dataclass
class PretrainResult:
    model: ToyCLIP
    losses: List[float] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)
    retrieval_top1: float = 0.0


def build_clip(config: RunConfig, vocab: Optional[Vocabulary] = None) -> ToyCLIP:
    return ToyCLIP(config.clip, config.dataset.size, vocab)


@torch.no_grad()
def retrieval_accuracy(model: ToyCLIP, pairs: CleanPairs, batch_size: int = 256) -> float:
    """Top-1 caption retrieval over the distinct captions of the set"""
    model.eval()
    device = model.log_tau.device
    text = model.encode_texts(pairs.captions)
    correct = 0
    for start in range(0, len(pairs), batch_size):
        images = pairs.images[start:start + batch_size].to(device)
        content, _ = model.encode_image(images)
        predicted = (content @ text.t()).argmax(dim=1).cpu()
        correct += int((predicted == pairs.caption_ids[start:start + batch_size]).sum())
    return correct / len(pairs)


def pretrain_clip(config: RunConfig, out_dir: Optional[Union[str, Path]] = None) -> PretrainResult:
    """
    Train both encoders and the temperature with the contrastive loss

    Args:
        config: run configuration (clip + dataset sections are used)
        out_dir: checkpoint directory; nothing is written when None

    Returns:
        PretrainResult with the trained model, loss curve and held-out retrieval accuracy
    """
    set_seed(config.seed)
    device = resolve_device(config.device)
    clip_cfg = config.clip

    model = build_clip(config).to(device)
    train = CleanPairs.generate(clip_cfg.pair_seed_start, clip_cfg.num_pairs, config.dataset.size)
    holdout = CleanPairs.generate(clip_cfg.pair_seed_start + clip_cfg.num_pairs,
                                  clip_cfg.holdout_pairs, config.dataset.size)
    caption_ids, caption_lengths = tokenize_batch(train.captions, model.vocab, clip_cfg.max_length)
    caption_ids, caption_lengths = caption_ids.to(device), caption_lengths.to(device)

    optimizer = torch.optim.AdamW(model.parameters(), lr=clip_cfg.lr, weight_decay=clip_cfg.weight_decay)
    loader = train.loader(clip_cfg.batch_size, shuffle=True, generator=make_generator(config.seed))

    result = PretrainResult(model=model)
    start_time = time.time()
    step = 0
    for epoch in range(clip_cfg.epochs):
        model.train()
        epoch_total, epoch_batches = 0.0, 0
        for images, cids in tqdm(loader, desc=f"clip epoch {epoch + 1}/{clip_cfg.epochs}", leave=False):
            images, cids = images.to(device), cids.to(device)
            content, _ = model.encode_image(images)
            text = model.encode_text(caption_ids[cids], caption_lengths[cids])
            loss = contrastive_loss(content, text, model.tau, symmetric=clip_cfg.symmetric_loss)
            if not math.isfinite(loss.item()):
                structured_logger.log_error("TrainingDivergence", "clip loss is not finite",
                                            {"epoch": epoch, "step": step})
                raise TrainingDivergenceError("clip", epoch, step, loss.item())

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            result.losses.append(loss.item())
            epoch_total += loss.item()
            epoch_batches += 1
            step += 1

        result.epoch_losses.append(epoch_total / max(epoch_batches, 1))
        structured_logger.log_training_step("clip", epoch, step, {
            "loss": result.epoch_losses[-1],
            "tau": float(model.tau),
        })

    result.retrieval_top1 = retrieval_accuracy(model, holdout)
    structured_logger.log_performance(
        operation="pretrain_clip",
        duration=time.time() - start_time,
        metrics={"steps": step, "retrieval_top1": result.retrieval_top1},
    )
    logger.info(f"CLIP pretraining done: retrieval top-1 {result.retrieval_top1:.3f}")

    if out_dir is not None:
        save_clip(model, out_dir, config, {
            "loss_curve": result.losses,
            "epoch_losses": result.epoch_losses,
            "retrieval_top1": result.retrieval_top1,
        })
    return result


def save_clip(model: ToyCLIP, out_dir: Union[str, Path], config: RunConfig,
              metadata: Optional[dict] = None) -> CheckpointManifest:
    return save_checkpoint(out_dir, CLIP_COMPONENT, model.state_dict(), config=config_to_dict(config),
                           metadata={"vocabulary": model.vocab.words, "image_size": model.visual.image_size,
                                     **(metadata or {})})


def load_clip(ckpt_dir: Union[str, Path], device: Optional[str] = None) -> Tuple[ToyCLIP, RunConfig, CheckpointManifest]:
    """Rebuild a ToyCLIP from its checkpoint directory and return it in eval mode"""
    manifest, tensors = load_checkpoint(ckpt_dir)
    if manifest.component != CLIP_COMPONENT:
        raise IntegrityError(f"{ckpt_dir} holds a '{manifest.component}' checkpoint, expected '{CLIP_COMPONENT}'")
    config = validate_config(manifest.config)
    model = ToyCLIP(config.clip, int(manifest.metadata["image_size"]),
                    Vocabulary(manifest.metadata["vocabulary"][2:]))
    model.load_state_dict(tensors)
    model.to(resolve_device(device or config.device)).eval()
    return model, config, manifest

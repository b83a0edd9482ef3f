"""
Parameter counts and inference runtime
"""
import time
import logging
from typing import Dict, Optional

import pandas as pd
import torch

from controller.daclip import DAClip
from restoration.restorer import Restorer
from restoration.embeddings import EmbeddingProvider, EmbeddingTable
from utils.seeding import make_generator

logger = logging.getLogger(__name__)


def count_parameters(module: Optional[torch.nn.Module], trainable_only: bool = False) -> int:
    if module is None:
        return 0
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


@torch.no_grad()
def time_restorer(restorer: Restorer, lq: torch.Tensor, table: EmbeddingTable, repeats: int = 3) -> float:
    """Mean seconds per image over `repeats` passes of the batch"""
    restorer.eval()
    device = next(restorer.parameters()).device
    e_c, e_d = table.rows(torch.arange(lq.shape[0]), device)
    lq = lq.to(device)
    restorer.restore(lq, e_c, e_d, make_generator(0))
    start = time.perf_counter()
    for _ in range(repeats):
        restorer.restore(lq, e_c, e_d, make_generator(0))
    return (time.perf_counter() - start) / (repeats * lq.shape[0])


def model_complexity(conditioned: Restorer, unconditioned: Restorer, daclip: DAClip,
                     lq: torch.Tensor, repeats: int = 3) -> pd.DataFrame:
    """
    Parameter counts (backbone, injectors, DA-CLIP) and per-image inference
    time of a conditioned restorer (embedding time included) vs an unconditioned one
    """
    provider = EmbeddingProvider(daclip)
    start = time.perf_counter()
    table = provider.for_images(lq)
    embed_seconds = (time.perf_counter() - start) / lq.shape[0]
    zeros = EmbeddingTable.zeros(lq.shape[0], unconditioned.config.embed_dim)

    rows = [
        {
            "model": "restorer",
            "backbone_params": unconditioned.unet.backbone_parameters(),
            "injector_params": unconditioned.unet.injector_parameters(),
            "daclip_params": 0,
            "seconds_per_image": time_restorer(unconditioned, lq, zeros, repeats),
        },
        {
            "model": "restorer+daclip",
            "backbone_params": conditioned.unet.backbone_parameters(),
            "injector_params": conditioned.unet.injector_parameters(),
            "daclip_params": count_parameters(daclip),
            "seconds_per_image": time_restorer(conditioned, lq, table, repeats) + embed_seconds,
        },
    ]
    frame = pd.DataFrame(rows)
    logger.info(f"Model complexity:\n{frame.to_string(index=False)}")
    return frame

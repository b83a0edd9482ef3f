"""
Conditioning embeddings for restoration, precomputed per split

Sources:
    daclip: controlled content and degradation embeddings of the full LQ image
    gt:     frozen encoder embedding of the HQ image + true degradation prompt
    text:   caption text embedding + true degradation prompt
"""
import logging
from dataclasses import dataclass
from typing import Optional

import torch

from controller.daclip import DAClip
from data.datasets import DegradedPairs

logger = logging.getLogger(__name__)

EMBEDDING_SOURCES = ("daclip", "gt", "text")


@dataclass
class EmbeddingTable:
    """Row-aligned [N,E] content and degradation embeddings"""
    content: torch.Tensor
    degradation: torch.Tensor

    def __len__(self) -> int:
        return self.content.shape[0]

    def rows(self, index: torch.Tensor, device: Optional[torch.device] = None):
        content, degradation = self.content[index], self.degradation[index]
        if device is not None:
            content, degradation = content.to(device), degradation.to(device)
        return content, degradation

    @classmethod
    def zeros(cls, n: int, embed_dim: int) -> "EmbeddingTable":
        return cls(torch.zeros(n, embed_dim), torch.zeros(n, embed_dim))


class EmbeddingProvider:
    """Computes conditioning embeddings from a frozen DA-CLIP"""

    def __init__(self, daclip: DAClip, source: str = "daclip", batch_size: int = 128):
        if source not in EMBEDDING_SOURCES:
            raise ValueError(f"unknown embedding source '{source}', expected one of {EMBEDDING_SOURCES}")
        self.daclip = daclip
        self.source = source
        self.batch_size = batch_size
        self.stats = {"images_embedded": 0}

    @property
    def device(self) -> torch.device:
        return self.daclip.clip.log_tau.device

    @torch.no_grad()
    def for_images(self, lq: torch.Tensor) -> EmbeddingTable:
        """Predicted embeddings of LQ images (daclip source only needs the images)"""
        self.daclip.eval()
        content, degradation = [], []
        for start in range(0, lq.shape[0], self.batch_size):
            c, d = self.daclip.encode_controlled(lq[start:start + self.batch_size].to(self.device))
            content.append(c.cpu())
            degradation.append(d.cpu())
        self.stats["images_embedded"] += lq.shape[0]
        return EmbeddingTable(torch.cat(content), torch.cat(degradation))

    @torch.no_grad()
    def for_pairs(self, pairs: DegradedPairs) -> EmbeddingTable:
        if self.source == "daclip":
            return self.for_images(pairs.lq)

        clip = self.daclip.clip
        clip.eval()
        prompts = self.daclip.prompt_embeddings().cpu()
        degradation = prompts[pairs.degradation]
        if self.source == "text":
            content = clip.encode_texts(pairs.captions).cpu()[pairs.caption_ids]
        else:
            chunks = []
            for start in range(0, len(pairs), self.batch_size):
                c, _ = clip.encode_image(pairs.hq[start:start + self.batch_size].to(self.device))
                chunks.append(c.cpu())
            content = torch.cat(chunks)
        self.stats["images_embedded"] += len(pairs)
        logger.debug(f"Computed {self.source} embeddings for {len(pairs)} samples")
        return EmbeddingTable(content, degradation)

"""
Toy contrastive vision-language model

A patch transformer image encoder and a token transformer text encoder, both
projected into a shared unit-sphere embedding space, plus a learnable
temperature stored as log(tau).
"""
import math
import logging
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from models.tokenizer import Vocabulary, default_vocabulary, tokenize_batch
from utils.config import ClipConfig

logger = logging.getLogger(__name__)

EncoderActivations = List[torch.Tensor]


class Attention(nn.Module):
    """Multi-head self-attention with an optional key mask"""

    def __init__(self, width: int, heads: int):
        super().__init__()
        if width % heads:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, key_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        n, t, d = x.shape
        q, k, v = self.qkv(x).reshape(n, t, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-2, -1) / math.sqrt(d // self.heads)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        out = scores.softmax(dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(n, t, d))


class TransformerBlock(nn.Module):
    """Pre-norm transformer block"""

    def __init__(self, width: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.ln_1 = nn.LayerNorm(width)
        self.attn = Attention(width, heads)
        self.ln_2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, width * mlp_ratio),
            nn.GELU(),
            nn.Linear(width * mlp_ratio, width),
        )

    def forward(self, x: torch.Tensor, key_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        x = x + self.attn(self.ln_1(x), key_mask)
        return x + self.mlp(self.ln_2(x))


class ImageEncoder(nn.Module):
    """ViT-style encoder with class-token pooling"""

    def __init__(self, image_size: int, patch_size: int, width: int, depth: int,
                 heads: int, embed_dim: int, mlp_ratio: int = 4):
        super().__init__()
        if image_size % patch_size:
            raise ValueError(f"patch size {patch_size} must divide image size {image_size}")
        self.image_size = image_size
        self.patch_size = patch_size
        self.width = width
        self.num_tokens = (image_size // patch_size) ** 2 + 1

        self.patch_embed = nn.Conv2d(3, width, kernel_size=patch_size, stride=patch_size, bias=False)
        self.class_embedding = nn.Parameter(torch.randn(width) * width ** -0.5)
        self.positional_embedding = nn.Parameter(torch.randn(self.num_tokens, width) * 0.02)
        self.ln_pre = nn.LayerNorm(width)
        self.blocks = nn.ModuleList([TransformerBlock(width, heads, mlp_ratio) for _ in range(depth)])
        self.ln_post = nn.LayerNorm(width)
        self.proj = nn.Linear(width, embed_dim, bias=False)

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def check_input(self, images: torch.Tensor) -> None:
        expected = (3, self.image_size, self.image_size)
        if images.dim() != 4 or tuple(images.shape[1:]) != expected:
            raise ValueError(f"images must be [N, {expected[0]}, {expected[1]}, {expected[2]}], got {tuple(images.shape)}")

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        """Patch + class tokens with positions, after ln_pre: [N, T, D]"""
        self.check_input(images)
        x = self.patch_embed(images * 2.0 - 1.0)
        x = x.flatten(2).transpose(1, 2)
        cls = self.class_embedding.to(x.dtype).expand(x.shape[0], 1, -1)
        x = torch.cat([cls, x], dim=1) + self.positional_embedding.to(x.dtype)
        return self.ln_pre(x)

    def forward(self, images: torch.Tensor,
                controls: Optional[Sequence[torch.Tensor]] = None) -> Tuple[torch.Tensor, EncoderActivations]:
        """
        Encode images, optionally adding a hidden control to every block output

        Args:
            images: [N,3,S,S] in [0,1]
            controls: one [N,T,D] tensor per block, added to that block's output
                before the next block consumes it

        Returns:
            (unit-norm content embedding [N,E], per-block activations)
        """
        if controls is not None and len(controls) != self.depth:
            raise ValueError(f"expected {self.depth} controls, got {len(controls)}")
        x = self.embed(images)
        activations: EncoderActivations = []
        for b, block in enumerate(self.blocks):
            x = block(x)
            if controls is not None:
                if controls[b].shape != x.shape:
                    raise ValueError(f"control {b} has shape {tuple(controls[b].shape)}, expected {tuple(x.shape)}")
                x = x + controls[b]
            activations.append(x)
        pooled = self.ln_post(x[:, 0])
        return F.normalize(self.proj(pooled), dim=-1), activations


class TextEncoder(nn.Module):
    """Token transformer with last-token pooling"""

    def __init__(self, vocab_size: int, max_length: int, width: int, depth: int,
                 heads: int, embed_dim: int, mlp_ratio: int = 4):
        super().__init__()
        self.max_length = max_length
        self.token_embedding = nn.Embedding(vocab_size, width)
        self.positional_embedding = nn.Parameter(torch.randn(max_length, width) * 0.01)
        self.blocks = nn.ModuleList([TransformerBlock(width, heads, mlp_ratio) for _ in range(depth)])
        self.ln_final = nn.LayerNorm(width)
        self.proj = nn.Linear(width, embed_dim, bias=False)

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(ids.shape[1], device=ids.device)
        # an empty sequence still attends to (and pools) position 0
        effective = lengths.clamp(min=1)
        key_mask = positions[None, :] < effective[:, None]
        x = self.token_embedding(ids) + self.positional_embedding[: ids.shape[1]]
        for block in self.blocks:
            x = block(x, key_mask)
        x = self.ln_final(x)
        pooled = x[torch.arange(ids.shape[0], device=ids.device), effective - 1]
        return F.normalize(self.proj(pooled), dim=-1)


class ToyCLIP(nn.Module):
    """Image encoder, text encoder and learnable temperature"""

    def __init__(self, config: ClipConfig, image_size: int, vocab: Optional[Vocabulary] = None):
        super().__init__()
        self.config = config
        self.vocab = vocab or default_vocabulary()
        self.visual = ImageEncoder(image_size, config.patch_size, config.width, config.depth,
                                   config.heads, config.embed_dim, config.mlp_ratio)
        self.text = TextEncoder(len(self.vocab), config.max_length, config.width, config.text_depth,
                                config.heads, config.embed_dim, config.mlp_ratio)
        self.log_tau = nn.Parameter(torch.tensor(math.log(config.tau_init)))

    @property
    def tau(self) -> torch.Tensor:
        return self.log_tau.exp().clamp(min=self.config.tau_min)

    def encode_image(self, images: torch.Tensor,
                     controls: Optional[Sequence[torch.Tensor]] = None) -> Tuple[torch.Tensor, EncoderActivations]:
        return self.visual(images, controls)

    def encode_text(self, ids: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        return self.text(ids, lengths)

    def encode_texts(self, texts: Sequence[str]) -> torch.Tensor:
        """Tokenize and encode a list of strings"""
        ids, lengths = tokenize_batch(texts, self.vocab, self.config.max_length)
        device = self.log_tau.device
        return self.encode_text(ids.to(device), lengths.to(device))

    def encoder_state(self) -> "dict[str, torch.Tensor]":
        """Image and text encoder tensors (temperature excluded)"""
        return {k: v for k, v in self.state_dict().items() if not k.startswith("log_tau")}

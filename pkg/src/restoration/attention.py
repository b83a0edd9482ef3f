"""
Cross-attention from restoration features to the content embedding
"""
from typing import Tuple, Union

import torch
import torch.nn as nn

from restoration.prompt_module import zero_module


class ContentCrossAttention(nn.Module):
    """
    Queries from feature tokens, key/value from the content embedding

    The context is a single token, so every attention row is exactly 1 and the
    op reduces to a per-sample additive term. The output projection starts at
    zero which makes the block an identity at initialization.
    """

    def __init__(self, channels: int, context_dim: int, heads: int = 4):
        super().__init__()
        if channels % heads != 0:
            raise ValueError(f"channels ({channels}) must be divisible by heads ({heads})")
        self.heads = heads
        self.norm = nn.GroupNorm(min(8, channels), channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(context_dim, channels, bias=False)
        self.to_v = nn.Linear(context_dim, channels, bias=False)
        self.to_out = zero_module(nn.Linear(channels, channels))

    def forward(self, features: torch.Tensor, context: torch.Tensor,
                return_attention: bool = False) -> Union[torch.Tensor, Tuple[torch.Tensor, torch.Tensor]]:
        """
        Args:
            features: [N,C,H,W]
            context: [N,E] or [N,K,E] context tokens

        Returns:
            features of the same shape (and the [N,heads,HW,K] attention weights when asked)
        """
        n, c, h, w = features.shape
        if context.dim() == 2:
            context = context[:, None, :]
        tokens = self.norm(features).flatten(2).transpose(1, 2)  # [N,HW,C]

        head_dim = c // self.heads
        q = self.to_q(tokens).view(n, -1, self.heads, head_dim).transpose(1, 2)
        k = self.to_k(context).view(n, -1, self.heads, head_dim).transpose(1, 2)
        v = self.to_v(context).view(n, -1, self.heads, head_dim).transpose(1, 2)

        attention = (q @ k.transpose(-2, -1) * head_dim ** -0.5).softmax(dim=-1)
        out = (attention @ v).transpose(1, 2).reshape(n, h * w, c)
        out = self.to_out(out).transpose(1, 2).reshape(n, c, h, w)
        result = features + out
        if return_attention:
            return result, attention
        return result

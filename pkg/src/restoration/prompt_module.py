"""
Degradation-embedding prompt modules for the restoration U-Net

Every variant maps (features, e_d) to features plus a per-channel term that is
zero at initialization, so a conditioned network starts out computing the
unconditioned function.
"""
from typing import Optional

import torch
import torch.nn as nn

PROMPT_TYPES = ("bank", "film", "mlp")


def zero_module(module: nn.Module) -> nn.Module:
    """Zero every parameter of a module in place and return it"""
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


def _broadcast(term: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
    # [N,C] -> [N,C,1,1] for conv maps, [N,1,C] for token sequences
    if features.dim() == 4:
        return term[:, :, None, None]
    if features.dim() == 3:
        return term[:, None, :]
    raise ValueError(f"features must be [N,C,H,W] or [N,T,C], got {tuple(features.shape)}")


class PromptBank(nn.Module):
    """
    Learnable prompts addressed by softmax similarity between keys and e_d

    w = softmax(keys . e_d); p = sum_i w_i prompts_i; features + project(p)
    """

    def __init__(self, embed_dim: int, channels: int, num_prompts: int = 8, prompt_dim: int = 64):
        super().__init__()
        if num_prompts < 1:
            raise ValueError("num_prompts must be >= 1")
        self.prompts = nn.Parameter(torch.randn(num_prompts, prompt_dim) * 0.02)
        self.keys = nn.Parameter(torch.randn(num_prompts, embed_dim))
        self.project = zero_module(nn.Linear(prompt_dim, channels))

    @property
    def num_prompts(self) -> int:
        return self.prompts.shape[0]

    def weights(self, degradation: torch.Tensor) -> torch.Tensor:
        """[N,E] -> [N,P] softmax weights"""
        return (degradation @ self.keys.t()).softmax(dim=-1)

    def pooled(self, degradation: torch.Tensor) -> torch.Tensor:
        return self.weights(degradation) @ self.prompts

    def forward(self, features: torch.Tensor, degradation: torch.Tensor) -> torch.Tensor:
        return features + _broadcast(self.project(self.pooled(degradation)), features)


class FiLMPrompt(nn.Module):
    """Feature-wise scale and shift predicted from e_d"""

    def __init__(self, embed_dim: int, channels: int):
        super().__init__()
        self.film = zero_module(nn.Linear(embed_dim, 2 * channels))

    def forward(self, features: torch.Tensor, degradation: torch.Tensor) -> torch.Tensor:
        gamma, beta = self.film(degradation).chunk(2, dim=-1)
        return features * (1 + _broadcast(gamma, features)) + _broadcast(beta, features)


class MLPPrompt(nn.Module):
    """Plain two-layer network on e_d added to the features"""

    def __init__(self, embed_dim: int, channels: int, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(embed_dim, hidden),
            nn.GELU(),
            zero_module(nn.Linear(hidden, channels)),
        )

    def forward(self, features: torch.Tensor, degradation: torch.Tensor) -> torch.Tensor:
        return features + _broadcast(self.net(degradation), features)


def build_prompt_module(prompt_type: str, embed_dim: int, channels: int,
                        num_prompts: int = 8, prompt_dim: int = 64) -> nn.Module:
    if prompt_type == "bank":
        return PromptBank(embed_dim, channels, num_prompts, prompt_dim)
    if prompt_type == "film":
        return FiLMPrompt(embed_dim, channels)
    if prompt_type == "mlp":
        return MLPPrompt(embed_dim, channels, hidden=prompt_dim)
    raise ValueError(f"unknown prompt type '{prompt_type}', expected one of {PROMPT_TYPES}")


def prompt_forward(features: torch.Tensor, degradation: torch.Tensor,
                   bank: Optional[nn.Module]) -> torch.Tensor:
    return features if bank is None else bank(features, degradation)

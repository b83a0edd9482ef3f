"""
Contrastive loss over paired unit embeddings
"""
import math
from typing import Union

import torch
import torch.nn.functional as F

Temperature = Union[float, torch.Tensor]


def contrastive_loss(x: torch.Tensor, y: torch.Tensor, tau: Temperature,
                     symmetric: bool = False) -> torch.Tensor:
    """
    L = -(1/N) sum_i log( exp(x_i.y_i / tau) / sum_j exp(x_i.y_j / tau) )

    Rows of x index the softmax (one-directional). With symmetric=True the
    y->x direction is averaged in.

    Args:
        x: [N, E] unit vectors
        y: [N, E] unit vectors paired with x by row
        tau: positive temperature

    Returns:
        scalar loss
    """
    if x.dim() != 2 or x.shape != y.shape:
        raise ValueError(f"x and y must be matching [N, E] tensors, got {tuple(x.shape)} and {tuple(y.shape)}")
    if x.shape[0] < 1:
        raise ValueError("contrastive loss needs at least one pair")
    if not (torch.isfinite(x).all() and torch.isfinite(y).all()):
        raise ValueError("contrastive loss received non-finite embeddings")
    tau_value = float(tau)
    if not (math.isfinite(tau_value) and tau_value > 0.0):
        raise ValueError(f"tau must be a positive finite temperature, got {tau_value}")

    logits = x @ y.t() / tau
    targets = torch.arange(x.shape[0], device=x.device)
    loss = F.cross_entropy(logits, targets)
    if symmetric:
        loss = 0.5 * (loss + F.cross_entropy(logits.t(), targets))
    return loss

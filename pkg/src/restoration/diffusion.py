"""
DDPM forward noising, noise-matching loss and ancestral sampling

Timesteps are indexed 1..T. Images enter the diffusion process scaled to
[-1, 1]; callers convert at the boundary.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import torch
import torch.nn.functional as F

logger = logging.getLogger(__name__)

EpsModel = Callable[..., torch.Tensor]


class DiffusionSchedule:
    """Linear beta schedule with the derived cumulative products"""

    def __init__(self, T: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02):
        if T < 1:
            raise ValueError(f"T must be >= 1, got {T}")
        if not 0 < beta_start <= beta_end < 1:
            raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
        self.T = T
        self.betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
        self.alphas = 1.0 - self.betas
        self.alpha_bars = torch.cumprod(self.alphas, dim=0)
        self.alpha_bars_prev = torch.cat([torch.ones(1, dtype=torch.float64), self.alpha_bars[:-1]])
        self.posterior_variance = self.betas * (1.0 - self.alpha_bars_prev) / (1.0 - self.alpha_bars)

    @classmethod
    def from_config(cls, restorer_config) -> "DiffusionSchedule":
        return cls(restorer_config.diffusion_T, restorer_config.beta_start, restorer_config.beta_end)

    def check_t(self, t: torch.Tensor) -> None:
        if t.numel() and (int(t.min()) < 1 or int(t.max()) > self.T):
            raise ValueError(f"timesteps must lie in [1, {self.T}], got [{int(t.min())}, {int(t.max())}]")

    def gather(self, values: torch.Tensor, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
        """values[t-1] reshaped to broadcast over an image batch"""
        self.check_t(t)
        out = values.to(like.device)[t.long().to(like.device) - 1].to(like.dtype)
        return out.view(-1, *([1] * (like.dim() - 1)))

    def sample_t(self, n: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        return torch.randint(1, self.T + 1, (n,), generator=generator)


def q_sample(schedule: DiffusionSchedule, x0: torch.Tensor, t: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise"""
    alpha_bar = schedule.gather(schedule.alpha_bars, t, x0)
    return alpha_bar.sqrt() * x0 + (1.0 - alpha_bar).sqrt() * noise


@dataclass
class ConditionedBatch:
    """Per-sample aligned restoration inputs; images already in [-1, 1]"""
    lq: torch.Tensor
    hq: torch.Tensor
    e_c: Optional[torch.Tensor] = None
    e_d: Optional[torch.Tensor] = None
    t: Optional[torch.Tensor] = None
    noise: Optional[torch.Tensor] = None
    x_t: Optional[torch.Tensor] = None

    def __post_init__(self):
        n = self.lq.shape[0]
        if self.hq.shape != self.lq.shape:
            raise ValueError(f"lq {tuple(self.lq.shape)} and hq {tuple(self.hq.shape)} differ")
        for name in ("e_c", "e_d", "t", "noise"):
            value = getattr(self, name)
            if value is not None and value.shape[0] != n:
                raise ValueError(f"{name} has {value.shape[0]} rows for a batch of {n}")


def diffusion_train_step(model: EpsModel, batch: ConditionedBatch, schedule: DiffusionSchedule,
                         generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """
    Noise-matching loss mean ||eps - eps_theta(x_t, mu, t, e_c, e_d)||^2

    Missing t and noise are drawn from the generator (CPU) and filled into the
    batch, so callers can inspect what was used.
    """
    n = batch.hq.shape[0]
    if batch.t is None:
        batch.t = schedule.sample_t(n, generator)
    schedule.check_t(batch.t)
    if batch.noise is None:
        batch.noise = torch.randn(batch.hq.shape, generator=generator, dtype=batch.hq.dtype).to(batch.hq.device)
    t = batch.t.to(batch.hq.device)
    batch.x_t = q_sample(schedule, batch.hq, t, batch.noise)
    predicted = model(batch.x_t, batch.lq, t, batch.e_c, batch.e_d)
    return F.mse_loss(predicted, batch.noise)


@torch.no_grad()
def sample(model: EpsModel, mu: torch.Tensor, schedule: DiffusionSchedule,
           e_c: Optional[torch.Tensor] = None, e_d: Optional[torch.Tensor] = None,
           generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """
    Ancestral reverse process from Gaussian noise, T steps

    Args:
        mu: [N,3,H,W] condition in [-1, 1]
        generator: CPU generator; all noise is drawn on CPU then moved

    Returns:
        x_0 estimate in [-1, 1] scale (not clamped)
    """
    shape = mu.shape
    x = torch.randn(shape, generator=generator, dtype=mu.dtype).to(mu.device)
    for step in range(schedule.T, 0, -1):
        t = torch.full((shape[0],), step, dtype=torch.long, device=mu.device)
        eps = model(x, mu, t, e_c, e_d)
        beta = schedule.gather(schedule.betas, t, x)
        alpha = schedule.gather(schedule.alphas, t, x)
        alpha_bar = schedule.gather(schedule.alpha_bars, t, x)
        mean = (x - beta / (1.0 - alpha_bar).sqrt() * eps) / alpha.sqrt()
        if step > 1:
            z = torch.randn(shape, generator=generator, dtype=mu.dtype).to(mu.device)
            x = mean + schedule.gather(schedule.posterior_variance, t, x).sqrt() * z
        else:
            x = mean
    return x

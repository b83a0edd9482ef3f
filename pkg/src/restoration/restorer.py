"""
Restorer: conditional U-Net plus its backend (direct regression or diffusion)
"""
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import torch
import torch.nn as nn

from restoration.diffusion import DiffusionSchedule, sample
from restoration.unet import ConditionalUNet, UNetConfig
from storage.checkpoint_store import CheckpointManifest, load_checkpoint, save_checkpoint
from utils.config import RunConfig, config_to_dict, validate_config
from utils.errors import IntegrityError
from utils.seeding import resolve_device

logger = logging.getLogger(__name__)

RESTORER_COMPONENT = "restorer"
BACKENDS = ("mse", "diffusion")


def to_signed(images: torch.Tensor) -> torch.Tensor:
    return images * 2.0 - 1.0


def to_unit(images: torch.Tensor) -> torch.Tensor:
    return (images + 1.0) / 2.0


class Restorer(nn.Module):
    """
    mse: hq_hat = lq + f(lq, lq) (residual regression)
    diffusion: f is the noise predictor eps_theta(x_t, lq, t, e_c, e_d)
    """

    def __init__(self, unet_config: UNetConfig, backend: str = "mse",
                 schedule: Optional[DiffusionSchedule] = None):
        super().__init__()
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend '{backend}', expected one of {BACKENDS}")
        if backend == "diffusion" and schedule is None:
            raise ValueError("the diffusion backend needs a schedule")
        if unet_config.time_conditioned != (backend == "diffusion"):
            raise ValueError("only the diffusion backend is time-conditioned")
        self.backend = backend
        self.schedule = schedule
        self.unet = ConditionalUNet(unet_config)

    @property
    def config(self) -> UNetConfig:
        return self.unet.config

    def forward(self, lq: torch.Tensor, e_c: Optional[torch.Tensor] = None,
                e_d: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Regression prediction in [0,1] scale (unclamped)"""
        mu = to_signed(lq)
        return to_unit(mu + self.unet(mu, mu, None, e_c, e_d))

    def eps(self, x_t: torch.Tensor, mu: torch.Tensor, t: torch.Tensor,
            e_c: Optional[torch.Tensor] = None, e_d: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self.unet(x_t, mu, t, e_c, e_d)

    @torch.no_grad()
    def restore(self, lq: torch.Tensor, e_c: Optional[torch.Tensor] = None, e_d: Optional[torch.Tensor] = None,
                generator: Optional[torch.Generator] = None) -> torch.Tensor:
        """HQ estimate clamped to [0,1]; diffusion sampling is deterministic for a seeded generator"""
        if self.backend == "mse":
            out = self(lq, e_c, e_d)
        else:
            out = to_unit(sample(self.eps, to_signed(lq), self.schedule, e_c, e_d, generator))
        return out.clamp(0.0, 1.0)


def build_restorer(config: RunConfig, embed_dim: Optional[int] = None) -> Restorer:
    """Seeded construction: same seed, same backbone for every conditioning mode"""
    restorer_cfg = config.restorer
    unet_config = UNetConfig.from_restorer(restorer_cfg, embed_dim or config.clip.embed_dim)
    schedule = DiffusionSchedule.from_config(restorer_cfg) if restorer_cfg.backend == "diffusion" else None
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        return Restorer(unet_config, restorer_cfg.backend, schedule)


def save_restorer(restorer: Restorer, out_dir: Union[str, Path], config: RunConfig,
                  metadata: Optional[dict] = None) -> CheckpointManifest:
    meta = {"backend": restorer.backend, "unet": restorer.config.model_dump(), **(metadata or {})}
    return save_checkpoint(out_dir, RESTORER_COMPONENT, restorer.state_dict(),
                           config=config_to_dict(config), metadata=meta)


def load_restorer(ckpt_dir: Union[str, Path], device: Optional[str] = None) -> Tuple[Restorer, RunConfig, CheckpointManifest]:
    manifest, tensors = load_checkpoint(ckpt_dir)
    if manifest.component != RESTORER_COMPONENT:
        raise IntegrityError(
            f"{ckpt_dir} holds a '{manifest.component}' checkpoint, expected '{RESTORER_COMPONENT}'")
    config = validate_config(manifest.config)
    backend = manifest.metadata["backend"]
    schedule = DiffusionSchedule.from_config(config.restorer) if backend == "diffusion" else None
    restorer = Restorer(UNetConfig(**manifest.metadata["unet"]), backend, schedule)
    restorer.load_state_dict(tensors)
    restorer.to(resolve_device(device or config.device)).eval()
    logger.info(f"Loaded {backend} restorer ({restorer.config.mode}) from {ckpt_dir}")
    return restorer, config, manifest

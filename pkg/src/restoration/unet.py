"""
Conditional U-Net backbone for restoration

The input is x and mu concatenated channel-wise. A prompt module on e_d sits
after every block and cross-attention on e_c sits at the configured scales
(lowest resolution by default). All injectors are built after the backbone,
so two networks seeded alike share bit-identical backbone weights whatever
their conditioning mode.
"""
import math
from typing import Dict, List, Literal, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator

from restoration.attention import ContentCrossAttention
from restoration.prompt_module import build_prompt_module
from utils.config import RestorerConfig

CONDITIONING_MODES = ("none", "degradation", "content", "both")
# bottleneck ResBlocks at the lowest scale
MID_BLOCKS = 2


class UNetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    in_channels: int = Field(6, ge=1)
    out_channels: int = Field(3, ge=1)
    scales: int = Field(3, ge=1)
    base_width: int = Field(32, ge=8)
    cross_attention_scales: Optional[List[int]] = None
    prompt_enabled: bool = True
    prompt_type: Literal["bank", "film", "mlp"] = "bank"
    prompt_size: int = Field(8, ge=1)
    prompt_dim: int = Field(64, ge=1)
    attention_heads: int = Field(4, ge=1)
    mode: Literal["none", "degradation", "content", "both"] = "both"
    embed_dim: int = Field(64, ge=1)
    time_conditioned: bool = False

    @model_validator(mode="after")
    def _scales_exist(self) -> "UNetConfig":
        if self.cross_attention_scales is None:
            self.cross_attention_scales = [self.scales - 1]
        bad = [s for s in self.cross_attention_scales if not 0 <= s < self.scales]
        if bad:
            raise ValueError(f"cross_attention_scales {bad} outside 0..{self.scales - 1}")
        return self

    @classmethod
    def from_restorer(cls, restorer: RestorerConfig, embed_dim: int) -> "UNetConfig":
        return cls(
            scales=restorer.scales,
            base_width=restorer.base_width,
            cross_attention_scales=restorer.attention_scales(),
            prompt_enabled=restorer.prompt_enabled,
            prompt_type=restorer.prompt_type,
            prompt_size=restorer.prompt_size,
            prompt_dim=restorer.prompt_dim,
            attention_heads=restorer.attention_heads,
            mode=restorer.mode,
            embed_dim=embed_dim,
            time_conditioned=restorer.backend == "diffusion",
        )

    @property
    def uses_degradation(self) -> bool:
        return self.mode in ("degradation", "both") and self.prompt_enabled

    @property
    def uses_content(self) -> bool:
        return self.mode in ("content", "both")

    def width(self, scale: int) -> int:
        return self.base_width * 2 ** scale


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of (integer) timesteps, [N] -> [N, dim]"""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64, device=t.device) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ResBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, time_dim: Optional[int] = None):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(8, in_channels), in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_channels) if time_dim else None
        self.norm2 = nn.GroupNorm(min(8, out_channels), out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = nn.Conv2d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()

    def forward(self, x: torch.Tensor, temb: Optional[torch.Tensor] = None) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        if self.time_proj is not None and temb is not None:
            h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class Upsample(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class ConditionalUNet(nn.Module):
    """eps/residual network f(x, mu, t, e_c, e_d)"""

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        widths = [config.width(s) for s in range(config.scales)]
        time_dim = 4 * config.base_width if config.time_conditioned else None

        # backbone
        if config.time_conditioned:
            self.time_mlp = nn.Sequential(
                nn.Linear(config.base_width, time_dim),
                nn.SiLU(),
                nn.Linear(time_dim, time_dim),
            )
        else:
            self.time_mlp = None
        self.in_conv = nn.Conv2d(config.in_channels, widths[0], 3, padding=1)
        self.enc_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = widths[0]
        for s, width in enumerate(widths):
            self.enc_blocks.append(ResBlock(prev, width, time_dim))
            if s < config.scales - 1:
                self.downs.append(nn.Conv2d(width, width, 3, stride=2, padding=1))
            prev = width
        self.mid_blocks = nn.ModuleList([ResBlock(widths[-1], widths[-1], time_dim) for _ in range(MID_BLOCKS)])
        self.dec_blocks = nn.ModuleList()
        self.ups = nn.ModuleList()
        for s in range(config.scales):
            self.dec_blocks.append(ResBlock(2 * widths[s], widths[s], time_dim))
            self.ups.append(Upsample(widths[s], widths[s - 1]) if s > 0 else nn.Identity())
        self.out_norm = nn.GroupNorm(min(8, widths[0]), widths[0])
        self.out_conv = nn.Conv2d(widths[0], config.out_channels, 3, padding=1)

        # injectors, constructed after the backbone
        self.prompts = nn.ModuleDict()
        self.attentions = nn.ModuleDict()
        for key, scale in self.injection_points():
            if config.uses_degradation:
                self.prompts[key] = build_prompt_module(
                    config.prompt_type, config.embed_dim, widths[scale], config.prompt_size, config.prompt_dim)
            if config.uses_content and scale in config.cross_attention_scales:
                self.attentions[key] = ContentCrossAttention(widths[scale], config.embed_dim, config.attention_heads)

    def injection_points(self) -> List[tuple]:
        """(block key, scale index) in forward order"""
        last = self.config.scales - 1
        points = [(f"enc{s}", s) for s in range(self.config.scales)]
        points += [(f"mid{i}", last) for i in range(MID_BLOCKS)]
        points += [(f"dec{s}", s) for s in reversed(range(self.config.scales))]
        return points

    def injector_parameters(self) -> int:
        return sum(p.numel() for p in self.prompts.parameters()) + sum(p.numel() for p in self.attentions.parameters())

    def backbone_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters()) - self.injector_parameters()

    def _check_inputs(self, x: torch.Tensor, mu: torch.Tensor, t: Optional[torch.Tensor],
                      e_c: Optional[torch.Tensor], e_d: Optional[torch.Tensor]) -> None:
        if x.dim() != 4 or mu.dim() != 4 or x.shape[0] != mu.shape[0] or x.shape[2:] != mu.shape[2:]:
            raise ValueError(f"x {tuple(x.shape)} and mu {tuple(mu.shape)} must be aligned [N,C,H,W] batches")
        if x.shape[1] + mu.shape[1] != self.config.in_channels:
            raise ValueError(
                f"x and mu carry {x.shape[1] + mu.shape[1]} channels, network expects {self.config.in_channels}")
        factor = 2 ** (self.config.scales - 1)
        if x.shape[2] % factor or x.shape[3] % factor:
            raise ValueError(f"spatial size {tuple(x.shape[2:])} must be divisible by {factor}")
        if self.config.time_conditioned and t is None:
            raise ValueError("a time-conditioned network needs t")
        for name, emb, needed in (("e_c", e_c, bool(self.attentions)), ("e_d", e_d, bool(self.prompts))):
            if needed and (emb is None or emb.shape != (x.shape[0], self.config.embed_dim)):
                raise ValueError(f"{name} must be [{x.shape[0]}, {self.config.embed_dim}]")

    def _inject(self, key: str, h: torch.Tensor, e_c: Optional[torch.Tensor],
                e_d: Optional[torch.Tensor]) -> torch.Tensor:
        if key in self.prompts:
            h = self.prompts[key](h, e_d)
        if key in self.attentions:
            h = self.attentions[key](h, e_c)
        return h

    def forward(self, x: torch.Tensor, mu: torch.Tensor, t: Optional[torch.Tensor] = None,
                e_c: Optional[torch.Tensor] = None, e_d: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        Args:
            x: [N,3,H,W] network state (x_t for diffusion, mu itself for regression)
            mu: [N,3,H,W] low-quality condition
            t: [N] integer timesteps (diffusion only)
            e_c, e_d: [N,E] content and degradation embeddings

        Returns:
            [N,out_channels,H,W]
        """
        self._check_inputs(x, mu, t, e_c, e_d)
        temb = None
        if self.time_mlp is not None:
            temb = self.time_mlp(timestep_embedding(t, self.config.base_width).to(x.dtype))

        h = self.in_conv(torch.cat([x, mu], dim=1))
        skips: Dict[int, torch.Tensor] = {}
        for s, block in enumerate(self.enc_blocks):
            h = self._inject(f"enc{s}", block(h, temb), e_c, e_d)
            skips[s] = h
            if s < self.config.scales - 1:
                h = self.downs[s](h)

        for i, block in enumerate(self.mid_blocks):
            h = self._inject(f"mid{i}", block(h, temb), e_c, e_d)

        for s in reversed(range(self.config.scales)):
            h = self._inject(f"dec{s}", self.dec_blocks[s](torch.cat([h, skips[s]], dim=1), temb), e_c, e_d)
            h = self.ups[s](h)
        return self.out_conv(F.silu(self.out_norm(h)))

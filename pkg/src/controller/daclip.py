"""
Degradation-aware controller over a frozen toy CLIP

The controller is a trainable copy of the image encoder (patch embedding and
transformer blocks). Each controller block output passes through a dense
connection whose weights and bias start at zero; the result is added to the
frozen encoder's output of the same block before the next block consumes it.
The controller's own pooled class token is projected to the degradation
embedding.
"""
import copy
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from data.degradations import all_degradation_texts
from models.clip_model import ImageEncoder, ToyCLIP
from models.losses import Temperature, contrastive_loss
from models.pretrain import load_clip
from storage.checkpoint_store import CheckpointManifest, load_checkpoint, save_checkpoint
from utils.config import RunConfig, config_to_dict
from utils.errors import IntegrityError

logger = logging.getLogger(__name__)

CONTROLLER_COMPONENT = "controller"
CONTROLLER_MODES = ("controller", "finetune-all")


class ZeroLinear(nn.Linear):
    """Dense connection with weight and bias initialized to exactly zero"""

    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__(in_features, out_features, bias=bias)
        nn.init.zeros_(self.weight)
        if self.bias is not None:
            nn.init.zeros_(self.bias)


class ImageController(nn.Module):
    """Copy of the encoder trunk, zero-initialized connections and a degradation head"""

    def __init__(self, encoder: ImageEncoder, embed_dim: int, zero_init: bool = True, seed: int = 0):
        super().__init__()
        self.trunk = copy.deepcopy(encoder)
        # the projection stays outside the controlled trunk
        self.trunk.proj = None
        self.trunk.requires_grad_(True)
        self.zero_init = zero_init

        width = encoder.width
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            if zero_init:
                self.connections = nn.ModuleList([ZeroLinear(width, width) for _ in range(encoder.depth)])
            else:
                self.connections = nn.ModuleList([nn.Linear(width, width) for _ in range(encoder.depth)])
            self.degradation_head = nn.Linear(width, embed_dim)

    def forward(self, images: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        """
        Returns:
            (unit-norm degradation embedding [N,E], hidden controls: one [N,T,D] per block)
        """
        x = self.trunk.embed(images)
        controls = []
        for block, connection in zip(self.trunk.blocks, self.connections):
            x = block(x)
            controls.append(connection(x))
        pooled = self.trunk.ln_post(x[:, 0])
        return F.normalize(self.degradation_head(pooled), dim=-1), controls


class DAClip(nn.Module):
    """
    Frozen ToyCLIP plus either a controller (default) or, for the
    "finetune-all" ablation, a trainable copy of the whole image encoder
    """

    def __init__(self, clip: ToyCLIP, controller: Optional[ImageController] = None,
                 finetuned: Optional[ImageEncoder] = None):
        super().__init__()
        if (controller is None) == (finetuned is None):
            raise ValueError("DAClip needs exactly one of controller or finetuned encoder")
        self.clip = clip
        self.controller = controller
        self.finetuned = finetuned

    @property
    def mode(self) -> str:
        return "controller" if self.controller is not None else "finetune-all"

    def freeze_clip(self, learn_tau: bool = False) -> None:
        self.clip.requires_grad_(False)
        self.clip.log_tau.requires_grad_(learn_tau)

    def trainable_parameters(self) -> List[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def encode_controlled(self, images: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Returns:
            (content embedding e_c^I, degradation embedding e_d^I), both unit-norm [N,E]
        """
        if self.finetuned is not None:
            embedding, _ = self.finetuned(images)
            return embedding, embedding
        degradation, controls = self.controller(images)
        content, _ = self.clip.encode_image(images, controls)
        return content, degradation

    @torch.no_grad()
    def prompt_embeddings(self) -> torch.Tensor:
        """Text embeddings of the ten 'a [degradation] photo' prompts, [10,E]"""
        return self.clip.encode_texts(list(all_degradation_texts()))

    @torch.no_grad()
    def classify(self, images: torch.Tensor,
                 prompt_embeddings: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        prompts = prompt_embeddings if prompt_embeddings is not None else self.prompt_embeddings()
        _, degradation = self.encode_controlled(images)
        return classify_degradation(degradation, prompts, self.clip.tau)


def init_controller(clip: ToyCLIP, zero_init: bool = True, seed: int = 0) -> DAClip:
    """Wrap a frozen ToyCLIP with a freshly initialized controller"""
    controller = ImageController(clip.visual, clip.config.embed_dim, zero_init=zero_init, seed=seed)
    controller.to(clip.log_tau.device)
    daclip = DAClip(clip, controller=controller)
    daclip.freeze_clip()
    return daclip


def init_finetune_all(clip: ToyCLIP) -> DAClip:
    finetuned = copy.deepcopy(clip.visual).requires_grad_(True)
    daclip = DAClip(clip, finetuned=finetuned)
    daclip.freeze_clip()
    return daclip


@dataclass
class EmbeddingQuad:
    """Batched (e_c^I, e_d^I, e_c^T, e_d^T), each [N,E]"""
    image_content: torch.Tensor
    image_degradation: torch.Tensor
    text_content: torch.Tensor
    text_degradation: torch.Tensor

    def __len__(self) -> int:
        return self.image_content.shape[0]


class JointLoss(NamedTuple):
    total: torch.Tensor
    content: torch.Tensor
    degradation: torch.Tensor


def joint_loss(quad: EmbeddingQuad, tau: Temperature, symmetric: bool = False) -> JointLoss:
    """L_con(e_c^I, e_c^T) + L_con(e_d^I, e_d^T) with one shared temperature"""
    if len(quad) == 0:
        raise ValueError("joint loss needs a non-empty batch")
    content = contrastive_loss(quad.image_content, quad.text_content, tau, symmetric)
    degradation = contrastive_loss(quad.image_degradation, quad.text_degradation, tau, symmetric)
    return JointLoss(total=content + degradation, content=content, degradation=degradation)


def degradation_only_loss(quad: EmbeddingQuad, tau: Temperature, symmetric: bool = False) -> JointLoss:
    """Objective of the finetune-all ablation: the encoder output matches the degradation prompt"""
    degradation = contrastive_loss(quad.image_degradation, quad.text_degradation, tau, symmetric)
    return JointLoss(total=degradation, content=torch.zeros_like(degradation), degradation=degradation)


def classify_degradation(degradation: torch.Tensor, prompt_embeddings: torch.Tensor,
                         tau: Temperature) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Args:
        degradation: [N,E] degradation embeddings
        prompt_embeddings: [10,E] prompt text embeddings in code order

    Returns:
        (labels [N], softmax scores [N,10] of the cosines at tau)
    """
    cosines = F.normalize(degradation, dim=-1) @ F.normalize(prompt_embeddings, dim=-1).t()
    return cosines.argmax(dim=1), (cosines / tau).softmax(dim=1)


def frozen_digest(clip: ToyCLIP) -> str:
    """sha256 over the frozen image and text encoder tensors (temperature excluded)"""
    digest = hashlib.sha256()
    for name, tensor in sorted(clip.encoder_state().items()):
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


@torch.no_grad()
def degradation_accuracy(daclip: DAClip, lq: torch.Tensor, labels: torch.Tensor, batch_size: int = 128) -> float:
    if lq.shape[0] == 0:
        raise ValueError("degradation accuracy needs at least one image")
    daclip.eval()
    device = daclip.clip.log_tau.device
    prompts = daclip.prompt_embeddings()
    correct = 0
    for start in range(0, lq.shape[0], batch_size):
        predicted, _ = daclip.classify(lq[start:start + batch_size].to(device), prompts)
        correct += int((predicted.cpu() == labels[start:start + batch_size]).sum())
    return correct / lq.shape[0]


def daclip_tensors(daclip: DAClip) -> Dict[str, torch.Tensor]:
    prefix, module = ("controller.", daclip.controller) if daclip.controller is not None else ("finetuned.", daclip.finetuned)
    tensors = {prefix + k: v for k, v in module.state_dict().items()}
    if daclip.clip.log_tau.requires_grad:
        tensors["log_tau"] = daclip.clip.log_tau.detach()
    return tensors


def save_daclip(daclip: DAClip, out_dir: Union[str, Path], config: RunConfig, clip_dir: Union[str, Path],
                metadata: Optional[dict] = None) -> CheckpointManifest:
    meta = {
        "mode": daclip.mode,
        "zero_init": bool(daclip.controller.zero_init) if daclip.controller is not None else None,
        "learn_tau": bool(daclip.clip.log_tau.requires_grad),
        "clip_checkpoint": str(Path(clip_dir).resolve()),
        "clip_digest": frozen_digest(daclip.clip),
        **(metadata or {}),
    }
    return save_checkpoint(out_dir, CONTROLLER_COMPONENT, daclip_tensors(daclip),
                           config=config_to_dict(config), metadata=meta)


def load_daclip(ckpt_dir: Union[str, Path], clip_dir: Optional[Union[str, Path]] = None,
                device: Optional[str] = None) -> Tuple[DAClip, CheckpointManifest]:
    """
    Rebuild a DAClip from a controller checkpoint and the CLIP checkpoint it was trained on

    Args:
        ckpt_dir: controller checkpoint directory
        clip_dir: CLIP checkpoint; defaults to the path recorded at save time

    Returns:
        (DAClip in eval mode, controller manifest)
    """
    manifest, tensors = load_checkpoint(ckpt_dir)
    if manifest.component != CONTROLLER_COMPONENT:
        raise IntegrityError(
            f"{ckpt_dir} holds a '{manifest.component}' checkpoint, expected '{CONTROLLER_COMPONENT}'")
    clip_path = clip_dir or manifest.metadata.get("clip_checkpoint")
    if not clip_path:
        raise IntegrityError(f"{ckpt_dir} does not record its CLIP checkpoint")

    clip, _, _ = load_clip(clip_path, device=device)
    if frozen_digest(clip) != manifest.metadata.get("clip_digest"):
        raise IntegrityError(f"CLIP weights at {clip_path} differ from the ones {ckpt_dir} was trained on")

    if "log_tau" in tensors:
        clip.log_tau.data.copy_(tensors.pop("log_tau"))
    if manifest.metadata.get("mode") == "finetune-all":
        daclip = init_finetune_all(clip)
        daclip.finetuned.load_state_dict({k[len("finetuned."):]: v for k, v in tensors.items()})
    else:
        daclip = init_controller(clip, zero_init=bool(manifest.metadata.get("zero_init", True)))
        daclip.controller.load_state_dict({k[len("controller."):]: v for k, v in tensors.items()})
    daclip.to(clip.log_tau.device).eval()
    logger.info(f"Loaded {daclip.mode} DA-CLIP from {ckpt_dir}")
    return daclip, manifest

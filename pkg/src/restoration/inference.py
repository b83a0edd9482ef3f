"""
Restore LQ images with a trained restorer and its DA-CLIP
"""
import logging
from pathlib import Path
from typing import List, Optional, Union

import torch

from controller.daclip import DAClip, load_daclip
from data.datasets import to_chw
from restoration.embeddings import EmbeddingProvider, EmbeddingTable
from restoration.restorer import Restorer, load_restorer
from storage.image_io import load_png, save_png
from utils.seeding import make_generator

logger = logging.getLogger(__name__)


@torch.no_grad()
def restore(lq: torch.Tensor, restorer: Restorer, daclip: Optional[DAClip] = None,
            seed: int = 0, batch_size: int = 32) -> torch.Tensor:
    """
    Args:
        lq: [N,3,H,W] in [0,1]
        daclip: frozen DA-CLIP providing predicted embeddings; unused by an unconditioned restorer
        seed: diffusion sampling seed

    Returns:
        [N,3,H,W] estimate clamped to [0,1]
    """
    restorer.eval()
    if restorer.config.mode == "none":
        table = EmbeddingTable.zeros(lq.shape[0], restorer.config.embed_dim)
    else:
        if daclip is None:
            raise ValueError(f"a '{restorer.config.mode}' restorer needs a DA-CLIP model")
        table = EmbeddingProvider(daclip, "daclip", batch_size).for_images(lq)

    device = next(restorer.parameters()).device
    generator = make_generator(seed)
    outputs = []
    for start in range(0, lq.shape[0], batch_size):
        index = torch.arange(start, min(start + batch_size, lq.shape[0]))
        e_c, e_d = table.rows(index, device)
        outputs.append(restorer.restore(lq[index].to(device), e_c, e_d, generator).cpu())
    return torch.cat(outputs)


def _input_files(path: Path) -> List[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".png")
    else:
        files = [path]
    if not files:
        raise ValueError(f"no PNG images found at {path}")
    return files


def restore_files(model_dir: Union[str, Path], daclip_dir: Optional[Union[str, Path]],
                  in_path: Union[str, Path], out_dir: Union[str, Path], seed: int = 0,
                  device: Optional[str] = None) -> List[Path]:
    """Restore one PNG or every PNG of a directory; outputs keep the input file names"""
    restorer, config, _ = load_restorer(model_dir, device)
    daclip = load_daclip(daclip_dir, device=device)[0] if daclip_dir else None
    files = _input_files(Path(in_path))

    images = [load_png(p) for p in files]
    size = config.dataset.size
    bad = [str(p) for p, img in zip(files, images) if img.shape != (size, size, 3)]
    if bad:
        raise ValueError(f"images must be {size}x{size} RGB: {bad}")

    restored = restore(torch.stack([to_chw(img) for img in images]), restorer, daclip, seed,
                       config.eval.batch_size)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for path, image in zip(files, restored):
        target = out_dir / path.name
        save_png(target, image.permute(1, 2, 0).numpy())
        written.append(target)
    logger.info(f"Restored {len(written)} image(s) into {out_dir}")
    return written

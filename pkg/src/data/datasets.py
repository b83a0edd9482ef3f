"""
In-memory torch views of manifests and clean caption sets
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, TensorDataset

from data.dataset_builder import DatasetManifest
from data.degradations import DegradationType
from data.scenes import caption_for, generate_scene
from storage.image_io import load_png

logger = logging.getLogger(__name__)


def to_chw(image: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).float()


def _caption_index(captions: Sequence[str]) -> Tuple[List[str], torch.Tensor]:
    unique = sorted(set(captions))
    lookup = {c: i for i, c in enumerate(unique)}
    return unique, torch.tensor([lookup[c] for c in captions], dtype=torch.long)


@dataclass
class DegradedPairs:
    """LQ/HQ tensors [N,3,H,W] with degradation codes and caption ids"""
    lq: torch.Tensor
    hq: torch.Tensor
    degradation: torch.Tensor
    caption_ids: torch.Tensor
    captions: List[str]
    seeds: List[int]

    def __len__(self) -> int:
        return self.lq.shape[0]

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest,
                      degradations: Optional[Sequence[str]] = None) -> "DegradedPairs":
        allowed = None
        if degradations is not None:
            allowed = {int(DegradationType.from_label(d)) for d in degradations}
        entries = [e for e in manifest.entries if allowed is None or e.degradation in allowed]
        if not entries:
            raise ValueError(f"no entries left in {manifest.split} split after filtering")

        lq = torch.stack([to_chw(load_png(manifest.resolve(e.lq))) for e in entries])
        hq = torch.stack([to_chw(load_png(manifest.resolve(e.hq))) for e in entries])
        captions, caption_ids = _caption_index([e.caption for e in entries])
        logger.info(f"Loaded {len(entries)} {manifest.split} samples from {manifest.root}")
        return cls(
            lq=lq,
            hq=hq,
            degradation=torch.tensor([e.degradation for e in entries], dtype=torch.long),
            caption_ids=caption_ids,
            captions=captions,
            seeds=[e.seed for e in entries],
        )

    def loader(self, batch_size: int, shuffle: bool, generator: Optional[torch.Generator] = None) -> DataLoader:
        """Batches of (index, lq, hq, degradation, caption_id)"""
        dataset = TensorDataset(torch.arange(len(self)), self.lq, self.hq, self.degradation, self.caption_ids)
        return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle, generator=generator,
                          num_workers=0, drop_last=False)

    def subset(self, index: torch.Tensor) -> "DegradedPairs":
        """Rows at `index`; the caption table is shared"""
        return DegradedPairs(
            lq=self.lq[index], hq=self.hq[index], degradation=self.degradation[index],
            caption_ids=self.caption_ids[index], captions=self.captions,
            seeds=[self.seeds[i] for i in index.tolist()],
        )

    def by_degradation(self) -> Dict[int, torch.Tensor]:
        """Sample indices grouped by degradation code"""
        return {int(code): torch.nonzero(self.degradation == code).flatten()
                for code in torch.unique(self.degradation)}


@dataclass
class CleanPairs:
    """Clean scenes and their captions for contrastive pretraining"""
    images: torch.Tensor
    caption_ids: torch.Tensor
    captions: List[str]

    def __len__(self) -> int:
        return self.images.shape[0]

    @classmethod
    def generate(cls, seed_start: int, count: int, size: int) -> "CleanPairs":
        scenes = [generate_scene(seed, size) for seed in range(seed_start, seed_start + count)]
        captions, caption_ids = _caption_index([caption_for(s) for s in scenes])
        return cls(images=torch.stack([to_chw(s.image) for s in scenes]),
                   caption_ids=caption_ids, captions=captions)

    def loader(self, batch_size: int, shuffle: bool, generator: Optional[torch.Generator] = None) -> DataLoader:
        dataset = TensorDataset(self.images, self.caption_ids)
        return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle, generator=generator,
                          num_workers=0, drop_last=False)

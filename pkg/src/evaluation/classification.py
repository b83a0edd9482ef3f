"""
Degradation classification accuracy tables
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

import pandas as pd
import torch

from controller.daclip import DAClip, classify_degradation
from data.datasets import DegradedPairs
from data.degradations import DegradationType
from models.clip_model import ToyCLIP
from utils.config import DEGRADATION_LABELS

logger = logging.getLogger(__name__)

BASELINE_ROW = "frozen-clip"


@dataclass
class ClassificationTable:
    """Per-class accuracy rows (one per model) plus their averages"""
    rows: Dict[str, Dict[str, float]] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)

    def add_row(self, name: str, per_class: Mapping[str, float]) -> None:
        self.rows[name] = {label: float(per_class[label]) for label in DEGRADATION_LABELS}

    def average(self, name: str) -> float:
        row = self.rows[name]
        return sum(row.values()) / len(row)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame.from_dict(self.rows, orient="index", columns=list(DEGRADATION_LABELS))
        frame["average"] = [self.average(name) for name in frame.index]
        frame.index.name = "model"
        return frame

    def to_dict(self) -> Dict:
        return {
            "rows": [{"model": name, **row, "average": self.average(name)} for name, row in self.rows.items()],
            "counts": self.counts,
        }

    def save_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, float_format="%.17g")
        return path


def per_class_accuracy(predicted: torch.Tensor, labels: torch.Tensor) -> Dict[str, float]:
    """Accuracy for each of the ten classes; every class must be present"""
    accuracy = {}
    for d in DegradationType:
        mask = labels == int(d)
        count = int(mask.sum())
        if count == 0:
            raise ValueError(f"test set has no '{d.label}' samples")
        accuracy[d.label] = float((predicted[mask] == int(d)).sum()) / count
    return accuracy


@torch.no_grad()
def predict_labels(encode, lq: torch.Tensor, prompts: torch.Tensor, tau, batch_size: int = 128) -> torch.Tensor:
    """`encode` maps an image batch to the embedding compared against the prompts"""
    predicted = []
    for start in range(0, lq.shape[0], batch_size):
        labels, _ = classify_degradation(encode(lq[start:start + batch_size].to(prompts.device)), prompts, tau)
        predicted.append(labels.cpu())
    return torch.cat(predicted)


def _frozen_content(clip: ToyCLIP):
    def encode(images: torch.Tensor) -> torch.Tensor:
        return clip.encode_image(images)[0]
    return encode


def _controlled_degradation(daclip: DAClip):
    def encode(images: torch.Tensor) -> torch.Tensor:
        return daclip.encode_controlled(images)[1]
    return encode


@torch.no_grad()
def eval_classification(daclip: DAClip, test: DegradedPairs, extra: Optional[Mapping[str, DAClip]] = None,
                        include_baseline: bool = True, batch_size: int = 128,
                        name: str = "daclip") -> ClassificationTable:
    """
    Classify every test image against the ten "a [degradation] photo" prompts

    Args:
        daclip: trained DA-CLIP
        test: held-out pairs containing all ten degradations
        extra: further named DA-CLIP models (e.g. no_zero_init, finetune-all)
        include_baseline: add the frozen CLIP row (content embedding vs prompts)

    Returns:
        ClassificationTable with one row per model
    """
    if len(test) == 0:
        raise ValueError("classification needs a non-empty test set")
    daclip.eval()
    clip = daclip.clip
    prompts = daclip.prompt_embeddings()
    table = ClassificationTable(counts={
        d.label: int((test.degradation == int(d)).sum()) for d in DegradationType
    })

    models: List = []
    if include_baseline:
        models.append((BASELINE_ROW, _frozen_content(clip), clip.tau))
    models.append((name, _controlled_degradation(daclip), clip.tau))
    for extra_name, model in (extra or {}).items():
        model.eval()
        models.append((extra_name, _controlled_degradation(model), model.clip.tau))

    for row_name, encode, tau in models:
        predicted = predict_labels(encode, test.lq, prompts, tau, batch_size)
        table.add_row(row_name, per_class_accuracy(predicted, test.degradation))
        logger.info(f"Classification {row_name}: average {table.average(row_name):.3f}")
    return table

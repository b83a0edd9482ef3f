"""
Restoration scoreboards (PSNR / SSIM per degradation) and the content-embedding comparison
"""
import json
import math
import time
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F

from controller.daclip import DAClip
from data.datasets import DegradedPairs
from data.degradations import DegradationType
from evaluation.metrics import SSIM_VARIANT, batch_psnr, batch_ssim
from restoration.embeddings import EmbeddingProvider, EmbeddingTable
from restoration.restorer import Restorer
from restoration.trainer import restore_split
from utils.logging_config import structured_logger

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["degradation", "psnr", "ssim", "n"]


@dataclass
class MetricRow:
    degradation: str
    psnr: float
    ssim: float
    n: int


@dataclass
class MetricReport:
    rows: List[MetricRow]
    config: Dict[str, Any] = field(default_factory=dict)
    seeds: List[int] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(r.n for r in self.rows)

    @property
    def overall(self) -> Dict[str, float]:
        """Count-weighted mean over the rows"""
        total = self.total
        return {
            "psnr": sum(r.psnr * r.n for r in self.rows) / total,
            "ssim": sum(r.ssim * r.n for r in self.rows) / total,
        }

    def row(self, degradation: str) -> MetricRow:
        for r in self.rows:
            if r.degradation == degradation:
                return r
        raise KeyError(degradation)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config,
            "seeds": self.seeds,
            "rows": [r.__dict__ for r in self.rows],
            "overall": self.overall,
            "ssim_variant": SSIM_VARIANT,
            "lpips": None,
            "fid": None,
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.rows], columns=REPORT_COLUMNS)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path], config: Optional[Dict] = None,
                 seeds: Optional[List[int]] = None) -> "MetricReport":
        frame = pd.read_csv(path, float_precision="round_trip")
        rows = [MetricRow(str(r.degradation), float(r.psnr), float(r.ssim), int(r.n)) for r in frame.itertuples()]
        return cls(rows=rows, config=config or {}, seeds=seeds or [])

    def save(self, out_dir: Union[str, Path], name: str = "report") -> Dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / f"{name}.json"
        json_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False), encoding="utf-8")
        return {"csv": self.to_csv(out_dir / f"{name}.csv"), "json": json_path}

    @classmethod
    def load(cls, json_path: Union[str, Path]) -> "MetricReport":
        data = json.loads(Path(json_path).read_text(encoding="utf-8"))
        return cls(rows=[MetricRow(**r) for r in data["rows"]], config=data.get("config", {}),
                   seeds=data.get("seeds", []))


def report_from_scores(pairs: DegradedPairs, psnrs: np.ndarray, ssims: np.ndarray,
                       config: Optional[Dict] = None, seeds: Optional[List[int]] = None) -> MetricReport:
    rows = []
    for code, index in sorted(pairs.by_degradation().items()):
        index = index.numpy()
        rows.append(MetricRow(DegradationType(code).label, float(psnrs[index].mean()),
                              float(ssims[index].mean()), int(index.size)))
    return MetricReport(rows=rows, config=config or {}, seeds=list(seeds or []))


def eval_restoration(restorer: Restorer, daclip: Optional[DAClip], test: DegradedPairs,
                     embedding_source: str = "daclip", config: Optional[Dict] = None,
                     sample_seed: int = 0, batch_size: int = 32) -> MetricReport:
    """
    Restore the test split and score it per degradation

    Args:
        restorer: trained restorer (any backend)
        daclip: frozen DA-CLIP; None only for an unconditioned restorer
        embedding_source: the source the restorer was trained with
        config: echoed into the report
        sample_seed: diffusion sampling seed

    Returns:
        MetricReport with one row per degradation present in the test split
    """
    start_time = time.time()
    if restorer.config.mode == "none":
        table = EmbeddingTable.zeros(len(test), restorer.config.embed_dim)
    else:
        if daclip is None:
            raise ValueError(f"a '{restorer.config.mode}' restorer needs a DA-CLIP model")
        table = EmbeddingProvider(daclip, embedding_source, batch_size).for_pairs(test)

    restored = restore_split(restorer, test, table, batch_size, sample_seed)
    report = report_from_scores(test, batch_psnr(restored, test.hq), batch_ssim(restored, test.hq),
                                config, [sample_seed])
    structured_logger.log_performance(
        operation="eval_restoration",
        duration=time.time() - start_time,
        metrics={"samples": len(test), **report.overall},
    )
    return report


def eval_degraded_inputs(test: DegradedPairs, config: Optional[Dict] = None) -> MetricReport:
    """Scores of the LQ images themselves, the do-nothing reference"""
    return report_from_scores(test, batch_psnr(test.lq, test.hq), batch_ssim(test.lq, test.hq), config)


@torch.no_grad()
def content_similarity(daclip: DAClip, test: DegradedPairs, batch_size: int = 128) -> Dict[str, float]:
    """
    Mean cosine to the caption text embedding of:
        frozen_lq: frozen encoder content embedding of LQ
        daclip_lq: controlled content embedding of LQ
        frozen_hq: frozen encoder content embedding of HQ (reference)
    """
    daclip.eval()
    clip = daclip.clip
    device = clip.log_tau.device
    text = clip.encode_texts(test.captions).cpu()[test.caption_ids]
    sums = {"frozen_lq": 0.0, "daclip_lq": 0.0, "frozen_hq": 0.0}
    for start in range(0, len(test), batch_size):
        lq = test.lq[start:start + batch_size].to(device)
        hq = test.hq[start:start + batch_size].to(device)
        target = text[start:start + batch_size]
        embeddings = {
            "frozen_lq": clip.encode_image(lq)[0],
            "daclip_lq": daclip.encode_controlled(lq)[0],
            "frozen_hq": clip.encode_image(hq)[0],
        }
        for key, emb in embeddings.items():
            sums[key] += float(F.cosine_similarity(emb.cpu(), target, dim=-1).sum())
    result = {k: v / len(test) for k, v in sums.items()}
    if not all(math.isfinite(v) for v in result.values()):
        raise ValueError("content similarity produced non-finite values")
    return result

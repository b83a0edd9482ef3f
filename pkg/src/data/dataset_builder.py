"""
Image-text-degradation dataset construction

Writes LQ/HQ PNG pairs plus a JSON manifest per split. Every sample depends
only on its own seed, so generation is parallel over samples and the manifest
is written once at the end.
"""
import os
import json
import time
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np

from data.degradations import DegradationType, apply_degradation
from data.scenes import caption_for, generate_scene
from storage.image_io import save_png
from utils.config import DEGRADATION_LABELS, DatasetConfig
from utils.errors import ConfigError, IntegrityError
from utils.logging_config import structured_logger

logger = logging.getLogger(__name__)

SPLITS = ("train", "test")
MANIFEST_NAME = "manifest.json"


@dataclass
class ManifestEntry:
    lq: str
    hq: str
    caption: str
    degradation: int
    params: Dict[str, Any]
    seed: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ManifestEntry":
        return cls(
            lq=data["lq"],
            hq=data["hq"],
            caption=data["caption"],
            degradation=int(data["degradation"]),
            params=data["params"],
            seed=int(data["seed"]),
        )


@dataclass
class DatasetManifest:
    """Description of one split; paths are relative to the manifest directory"""
    split: str
    size: int
    entries: List[ManifestEntry] = field(default_factory=list)
    counts: Dict[str, int] = field(default_factory=dict)
    root: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "split": self.split,
            "size": self.size,
            "entries": [e.to_dict() for e in self.entries],
            "counts": dict(self.counts),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: Dict[str, Any], root: str = "") -> "DatasetManifest":
        return cls(
            split=data["split"],
            size=int(data["size"]),
            entries=[ManifestEntry.from_dict(e) for e in data["entries"]],
            counts={k: int(v) for k, v in data["counts"].items()},
            root=root,
        )

    def resolve(self, relative: str) -> str:
        return os.path.join(self.root, relative)

    def validate(self) -> None:
        """Every referenced file exists and the per-degradation counts match the entries"""
        actual = {label: 0 for label in DEGRADATION_LABELS}
        for entry in self.entries:
            actual[DegradationType(entry.degradation).label] += 1
            for rel in (entry.lq, entry.hq):
                if not os.path.exists(self.resolve(rel)):
                    raise IntegrityError(f"manifest references missing file {rel}")
        declared = {label: self.counts.get(label, 0) for label in DEGRADATION_LABELS}
        if actual != declared:
            raise IntegrityError(f"per-degradation counts {declared} do not match entries {actual}")


def manifest_path(root: Union[str, Path], split: str) -> Path:
    return Path(root) / split / MANIFEST_NAME


def _check_seed_ranges(config: DatasetConfig) -> None:
    train, test = config.seed_range("train"), config.seed_range("test")
    if train.start < test.stop and test.start < train.stop:
        raise ConfigError("train and test seed ranges overlap", key="dataset")


def _render_sample(index: int, seed: int, code: int, config: DatasetConfig, split_dir: Path) -> ManifestEntry:
    scene = generate_scene(seed, config.size)
    rng = np.random.default_rng([seed, code])
    lq, params = apply_degradation(scene.image, code, rng, config.ranges)
    lq_rel, hq_rel = f"lq/{index:06d}.png", f"hq/{index:06d}.png"
    save_png(split_dir / lq_rel, lq)
    save_png(split_dir / hq_rel, scene.image)
    return ManifestEntry(lq=lq_rel, hq=hq_rel, caption=caption_for(scene),
                         degradation=code, params=params, seed=seed)


def build_dataset(config: DatasetConfig, out_dir: Union[str, Path], split: str,
                  seed: int = 0) -> DatasetManifest:
    """
    Generate one split and write its manifest

    Args:
        config: dataset section of the run config
        out_dir: dataset root; files land in <out_dir>/<split>/{lq,hq}/ and manifest.json
        split: "train" or "test"
        seed: shuffle seed for the degradation assignment

    Returns:
        the written DatasetManifest
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split '{split}'")
    _check_seed_ranges(config)

    split_dir = Path(out_dir) / split
    try:
        (split_dir / "lq").mkdir(parents=True, exist_ok=True)
        (split_dir / "hq").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        logger.error(f"Output directory {split_dir} is not writable: {e}")
        raise

    seeds = list(config.seed_range(split))
    # round-robin assignment, then a seeded shuffle
    codes = np.arange(len(seeds)) % len(DEGRADATION_LABELS)
    shuffle_rng = np.random.default_rng([seed, SPLITS.index(split)])
    codes = shuffle_rng.permutation(codes)

    start_time = time.time()
    with ThreadPoolExecutor(max_workers=config.num_workers) as pool:
        entries = list(pool.map(
            lambda args: _render_sample(args[0], args[1], int(args[2]), config, split_dir),
            zip(range(len(seeds)), seeds, codes),
        ))

    counts = {label: 0 for label in DEGRADATION_LABELS}
    for entry in entries:
        counts[DEGRADATION_LABELS[entry.degradation]] += 1

    manifest = DatasetManifest(split=split, size=config.size, entries=entries,
                               counts=counts, root=str(split_dir))
    (split_dir / MANIFEST_NAME).write_text(manifest.to_json(), encoding="utf-8")

    structured_logger.log_performance(
        operation="build_dataset",
        duration=time.time() - start_time,
        metrics={"split": split, "entries": len(entries), "size": config.size},
    )
    return manifest


def build_all(config: DatasetConfig, out_dir: Union[str, Path], seed: int = 0) -> Dict[str, DatasetManifest]:
    return {split: build_dataset(config, out_dir, split, seed=seed) for split in SPLITS}


def load_manifest(path: Union[str, Path], validate: bool = True) -> DatasetManifest:
    """Load a manifest from its file, its split directory, or a dataset root plus split file"""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise IntegrityError(f"manifest not found: {path}")
    manifest = DatasetManifest.from_dict(json.loads(path.read_text(encoding="utf-8")), root=str(path.parent))
    if validate:
        manifest.validate()
    return manifest

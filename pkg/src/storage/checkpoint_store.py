"""
Checkpoint storage: one raw little-endian float32 blob per named tensor plus a
manifest.json describing shapes, checksums, config echo and provenance
"""
import os
import json
import hashlib
import logging
import subprocess
from collections import OrderedDict
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import torch

from utils.errors import CheckpointVersionError, IntegrityError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_SUFFIX = ".f32"

PathLike = Union[str, os.PathLike]


def git_describe() -> str:
    """Best-effort `git describe` of the source tree"""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5,
        )
        return result.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class TensorRecord:
    name: str
    shape: List[int]
    dtype: str
    file: str
    checksum: str

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TensorRecord":
        return cls(name=data["name"], shape=list(data["shape"]), dtype=data["dtype"],
                   file=data["file"], checksum=data["checksum"])


@dataclass
class CheckpointManifest:
    """Named-tensor directory description"""
    component: str
    tensors: List[TensorRecord] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)
    created_at: str = ""
    git_describe: str = "unknown"
    format_version: int = FORMAT_VERSION

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["tensors"] = [asdict(t) for t in self.tensors]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CheckpointManifest":
        return cls(
            component=data["component"],
            tensors=[TensorRecord.from_dict(t) for t in data.get("tensors", [])],
            config=data.get("config", {}),
            metadata=data.get("metadata", {}),
            created_at=data.get("created_at", ""),
            git_describe=data.get("git_describe", "unknown"),
            format_version=int(data.get("format_version", -1)),
        )

    def fingerprint(self) -> str:
        """Digest over every tensor name and checksum"""
        joined = "\n".join(f"{t.name}:{t.checksum}" for t in self.tensors)
        return sha256_bytes(joined.encode("utf-8"))


class CheckpointStore:
    """Reads and writes checkpoint directories"""

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        self.stats = {
            'checkpoints_saved': 0,
            'checkpoints_loaded': 0,
            'bytes_written': 0,
            'integrity_errors': 0,
        }

    def save(self, directory: PathLike, component: str, tensors: Mapping[str, torch.Tensor],
             config: Optional[Dict[str, Any]] = None,
             metadata: Optional[Dict[str, Any]] = None) -> CheckpointManifest:
        """
        Write every tensor as float32 little-endian row-major blob

        Args:
            directory: checkpoint directory, created if missing
            component: component name recorded in the manifest
            tensors: named tensors (e.g. a state_dict)
            config: config echo
            metadata: free-form JSON-serializable extras

        Returns:
            the written manifest
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)

        records = []
        for name, tensor in tensors.items():
            tensor = tensor.detach().cpu()
            if not torch.isfinite(tensor).all():
                raise IntegrityError(f"refusing to save non-finite tensor '{name}'")
            array = tensor.to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
            blob = array.tobytes(order="C")
            file_name = f"{name}{BLOB_SUFFIX}"
            (directory / file_name).write_bytes(blob)
            self.stats['bytes_written'] += len(blob)
            records.append(TensorRecord(name=name, shape=list(array.shape), dtype="float32",
                                        file=file_name, checksum=sha256_bytes(blob)))

        manifest = CheckpointManifest(
            component=component,
            tensors=records,
            config=config or {},
            metadata=metadata or {},
            created_at=datetime.now(timezone.utc).isoformat(),
            git_describe=git_describe(),
        )
        (directory / MANIFEST_NAME).write_text(
            json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.stats['checkpoints_saved'] += 1
        self.logger.info(f"Saved {component} checkpoint with {len(records)} tensors to {directory}")
        return manifest

    def read_manifest(self, directory: PathLike) -> CheckpointManifest:
        path = Path(directory) / MANIFEST_NAME
        if not path.exists():
            raise IntegrityError(f"checkpoint manifest not found: {path}")
        manifest = CheckpointManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
        if manifest.format_version != FORMAT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint {directory} uses format version {manifest.format_version}, "
                f"this build reads version {FORMAT_VERSION}; re-export it with a matching build"
            )
        return manifest

    def load(self, directory: PathLike) -> Tuple[CheckpointManifest, "OrderedDict[str, torch.Tensor]"]:
        """Load all tensors, verifying every checksum"""
        directory = Path(directory)
        manifest = self.read_manifest(directory)
        tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()
        try:
            for record in manifest.tensors:
                blob_path = directory / record.file
                if not blob_path.exists():
                    raise IntegrityError(f"missing blob for tensor '{record.name}' ({record.file})")
                blob = blob_path.read_bytes()
                if sha256_bytes(blob) != record.checksum:
                    raise IntegrityError(f"checksum mismatch for tensor '{record.name}' in {directory}")
                array = np.frombuffer(blob, dtype="<f4").reshape(record.shape)
                tensors[record.name] = torch.from_numpy(array.astype(np.float32, copy=True))
        except IntegrityError as e:
            self.stats['integrity_errors'] += 1
            self.logger.error(f"Checkpoint integrity check failed: {e}")
            raise
        self.stats['checkpoints_loaded'] += 1
        return manifest, tensors

    def verify(self, directory: PathLike) -> CheckpointManifest:
        manifest, _ = self.load(directory)
        return manifest


_store = CheckpointStore()


def get_checkpoint_store() -> CheckpointStore:
    return _store


def save_checkpoint(directory: PathLike, component: str, tensors: Mapping[str, torch.Tensor],
                    config: Optional[Dict[str, Any]] = None,
                    metadata: Optional[Dict[str, Any]] = None) -> CheckpointManifest:
    return _store.save(directory, component, tensors, config=config, metadata=metadata)


def load_checkpoint(directory: PathLike) -> Tuple[CheckpointManifest, "OrderedDict[str, torch.Tensor]"]:
    return _store.load(directory)


def verify_checkpoint(directory: PathLike) -> CheckpointManifest:
    return _store.verify(directory)

import os, sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

import json

import pytest
import torch

from storage.checkpoint_store import (
    FORMAT_VERSION,
    MANIFEST_NAME,
    CheckpointStore,
    load_checkpoint,
    save_checkpoint,
    verify_checkpoint,
)
from utils.errors import CheckpointVersionError, IntegrityError


@pytest.fixture
def tensors():
    generator = torch.Generator().manual_seed(0)
    return {"layer.weight": torch.randn(3, 4, generator=generator), "layer.bias": torch.zeros(4),
            "scalar": torch.tensor(0.5)}


def test_round_trip_is_exact(tensors, tmp_path):
    manifest = save_checkpoint(tmp_path / "ckpt", "clip", tensors, config={"seed": 1}, metadata={"note": "x"})
    assert manifest.format_version == FORMAT_VERSION
    loaded_manifest, loaded = load_checkpoint(tmp_path / "ckpt")
    assert list(loaded) == list(tensors)
    for name, tensor in tensors.items():
        assert torch.equal(loaded[name], tensor)
    assert loaded_manifest.config == {"seed": 1}
    assert loaded_manifest.fingerprint() == manifest.fingerprint()


def test_blob_layout(tensors, tmp_path):
    save_checkpoint(tmp_path / "ckpt", "clip", tensors)
    blob = (tmp_path / "ckpt" / "layer.weight.f32").read_bytes()
    assert len(blob) == 3 * 4 * 4
    assert torch.equal(torch.frombuffer(bytearray(blob), dtype=torch.float32).view(3, 4), tensors["layer.weight"])


def test_corrupted_blob_names_the_tensor(tensors, tmp_path):
    save_checkpoint(tmp_path / "ckpt", "clip", tensors)
    path = tmp_path / "ckpt" / "layer.weight.f32"
    blob = bytearray(path.read_bytes())
    blob[0] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(IntegrityError, match="layer.weight"):
        verify_checkpoint(tmp_path / "ckpt")


def test_missing_blob(tensors, tmp_path):
    save_checkpoint(tmp_path / "ckpt", "clip", tensors)
    (tmp_path / "ckpt" / "scalar.f32").unlink()
    with pytest.raises(IntegrityError, match="scalar"):
        load_checkpoint(tmp_path / "ckpt")


def test_version_mismatch(tensors, tmp_path):
    save_checkpoint(tmp_path / "ckpt", "clip", tensors)
    path = tmp_path / "ckpt" / MANIFEST_NAME
    data = json.loads(path.read_text())
    data["format_version"] = FORMAT_VERSION + 1
    path.write_text(json.dumps(data))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(tmp_path / "ckpt")


def test_non_finite_tensors_are_refused(tmp_path):
    store = CheckpointStore()
    with pytest.raises(IntegrityError):
        store.save(tmp_path / "ckpt", "clip", {"w": torch.tensor([float("nan")])})
    assert store.stats["checkpoints_saved"] == 0

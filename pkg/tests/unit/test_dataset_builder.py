import os, sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

import json

import numpy as np
import pytest

from data.dataset_builder import build_all, build_dataset, load_manifest, manifest_path
from data.datasets import DegradedPairs
from data.scenes import caption_for, generate_scene
from storage.image_io import load_png
from utils.config import DEGRADATION_LABELS
from utils.errors import IntegrityError


def test_balanced_splits(tiny_config, tiny_dataset):
    train = load_manifest(manifest_path(tiny_dataset, "train"))
    test = load_manifest(manifest_path(tiny_dataset, "test"))
    assert len(train.entries) == 10 * tiny_config.dataset.train_per_type
    assert len(test.entries) == 10 * tiny_config.dataset.test_per_type
    assert train.counts == {label: tiny_config.dataset.train_per_type for label in DEGRADATION_LABELS}
    assert not {e.seed for e in train.entries} & {e.seed for e in test.entries}


def test_entries_match_scene_and_caption(tiny_config, tiny_dataset):
    manifest = load_manifest(manifest_path(tiny_dataset, "test"))
    entry = manifest.entries[0]
    scene = generate_scene(entry.seed, tiny_config.dataset.size)
    assert entry.caption == caption_for(scene)
    hq = load_png(manifest.resolve(entry.hq))
    assert np.allclose(hq, scene.image, atol=1.0 / 255.0)
    for label in DEGRADATION_LABELS:
        assert label not in entry.caption.split()


def test_rebuild_is_identical(tiny_config, tiny_dataset, tmp_path):
    again = build_dataset(tiny_config.dataset, tmp_path / "again", "train", seed=tiny_config.seed)
    first = load_manifest(manifest_path(tiny_dataset, "train"))
    assert [e.to_dict() for e in again.entries] == [e.to_dict() for e in first.entries]
    for a, b in zip(first.entries[:5], again.entries[:5]):
        with open(first.resolve(a.lq), "rb") as fa, open(again.resolve(b.lq), "rb") as fb:
            assert fa.read() == fb.read()


def test_missing_file_fails_validation(tiny_dataset):
    manifest = load_manifest(manifest_path(tiny_dataset, "train"))
    os.remove(manifest.resolve(manifest.entries[0].lq))
    with pytest.raises(IntegrityError):
        load_manifest(manifest_path(tiny_dataset, "train"))


def test_count_mismatch_fails_validation(tiny_dataset):
    path = manifest_path(tiny_dataset, "test")
    data = json.loads(path.read_text())
    data["counts"]["noisy"] += 1
    path.write_text(json.dumps(data))
    with pytest.raises(IntegrityError):
        load_manifest(path)


def test_pairs_view(tiny_config, tiny_dataset):
    pairs = DegradedPairs.from_manifest(load_manifest(manifest_path(tiny_dataset, "test")))
    size = tiny_config.dataset.size
    assert pairs.lq.shape == (len(pairs), 3, size, size)
    assert pairs.hq.shape == pairs.lq.shape
    assert sorted(pairs.by_degradation()) == list(range(10))
    only = DegradedPairs.from_manifest(load_manifest(manifest_path(tiny_dataset, "test")), ["noisy"])
    assert set(only.degradation.tolist()) == {4}


def _pixel_statistics(images):
    gray = images.mean(dim=1).numpy().astype(np.float64)
    edges = np.diff(gray, axis=1)[:, :, :-1] ** 2 + np.diff(gray, axis=2)[:, :-1, :] ** 2
    return np.stack([gray.mean(axis=(1, 2)), gray.var(axis=(1, 2)), edges.mean(axis=(1, 2))], axis=1)


def test_degradations_are_separable_from_pixel_statistics(tiny_config, tmp_path):
    config = tiny_config.dataset.model_copy(update={"train_per_type": 8, "test_per_type": 5})
    manifests = build_all(config, tmp_path / "data", seed=0)
    train = DegradedPairs.from_manifest(manifests["train"])
    test = DegradedPairs.from_manifest(manifests["test"])

    train_x, test_x = _pixel_statistics(train.lq), _pixel_statistics(test.lq)
    mean, std = train_x.mean(axis=0), train_x.std(axis=0) + 1e-12
    train_x, test_x = (train_x - mean) / std, (test_x - mean) / std
    labels = train.degradation.numpy()
    centroids = np.stack([train_x[labels == code].mean(axis=0) for code in range(len(DEGRADATION_LABELS))])

    distances = ((test_x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    accuracy = float((distances.argmin(axis=1) == test.degradation.numpy()).mean())
    assert accuracy > 1.0 / len(DEGRADATION_LABELS)

import os, sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

import json

import pandas as pd
import pytest

from controller.daclip import init_controller
from data.dataset_builder import load_manifest, manifest_path
from data.datasets import DegradedPairs
from evaluation.ablation import ALL_VARIANTS, VARIANT_OVERRIDES, AblationSpec, check_ordering, mean_curve, run_ablation
from evaluation.plots import CurveLog
from utils.errors import ConfigError


def test_every_variant_has_overrides():
    assert set(ALL_VARIANTS) == set(VARIANT_OVERRIDES)


def test_spec_loading(tmp_path):
    path = tmp_path / "ablation.json"
    path.write_text(json.dumps({"variants": ["baseline", "both"], "seeds": [0], "epochs": 2}))
    spec = AblationSpec.load(path)
    assert spec.variants == ["baseline", "both"]
    path.write_text(json.dumps({"variants": ["baseline", "sideways"]}))
    with pytest.raises(ConfigError) as info:
        AblationSpec.load(path)
    assert info.value.key.startswith("ablation.variants")
    path.write_text(json.dumps({"seeds": [1, 1]}))
    with pytest.raises(ConfigError):
        AblationSpec.load(path)


def test_variant_config_changes_one_factor(tiny_config):
    spec = AblationSpec(epochs=2)
    gt = spec.variant_config(tiny_config, "gt_embed", seed=4)
    assert gt.seed == 4
    assert gt.restorer.embedding_source == "gt"
    assert gt.restorer.mode == "both"
    assert gt.restorer.epochs == 2
    assert gt.dataset == tiny_config.dataset
    assert spec.variant_config(tiny_config, "patch32", 0).restorer.patch_size == 32
    with pytest.raises(ConfigError):
        spec.variant_config(tiny_config, "patch64", 0)


def test_mean_curve():
    runs = []
    for offset in (0.0, 2.0):
        curve = CurveLog("both")
        curve.add(10, "psnr", 20.0 + offset)
        curve.add(20, "psnr", 22.0 + offset)
        runs.append(curve)
    mean = mean_curve("both", runs)
    assert mean.values("psnr") == [21.0, 23.0]


def test_check_ordering():
    summary = pd.DataFrame({"psnr": {"baseline": 20.0, "deg_only": 20.5, "content_only": 19.97, "both": 21.0}})
    checks = {c["claim"]: c["holds"] for c in check_ordering(summary, 0.05, 0.1)}
    assert checks["both >= deg_only - 0.05"]
    assert checks["content_only >= baseline - 0.05"]
    summary.loc["content_only", "psnr"] = 19.9
    checks = {c["claim"]: c["holds"] for c in check_ordering(summary, 0.05, 0.1)}
    assert not checks["content_only >= baseline - 0.05"]
    assert len(checks) == 4


def test_missing_checkpoint_is_a_config_error(tiny_config, tiny_dataset):
    spec = AblationSpec(variants=["both"], seeds=[0], epochs=1)
    with pytest.raises(ConfigError):
        run_ablation(spec, tiny_config, manifest_path(tiny_dataset, "train"), manifest_path(tiny_dataset, "test"))


def test_tiny_ablation_run(tiny_config, tiny_clip, tiny_dataset, tmp_path):
    train = DegradedPairs.from_manifest(load_manifest(manifest_path(tiny_dataset, "train")))
    test = DegradedPairs.from_manifest(load_manifest(manifest_path(tiny_dataset, "test")))
    spec = AblationSpec(variants=["baseline", "deg_only"], seeds=[0, 1], epochs=1)
    result = run_ablation(spec, tiny_config, train, test, tmp_path / "ablation", daclip=init_controller(tiny_clip))

    assert list(result.summary.index) == ["baseline", "deg_only"]
    assert (result.summary["seeds"] == 2).all()
    assert [c["claim"] for c in result.checks] == ["deg_only >= baseline - 0.05"]
    assert (tmp_path / "ablation" / "baseline.curve.json").exists()
    assert (tmp_path / "ablation" / "summary.csv").exists()
    summary = json.loads((tmp_path / "ablation" / "summary.json").read_text())
    assert summary["spec"]["seeds"] == [0, 1]

import os, sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..', 'src'))

import json

import pytest
import torch

from evaluation.classification import BASELINE_ROW, ClassificationTable, per_class_accuracy
from evaluation.restoration_eval import MetricReport, MetricRow
from utils.config import DEGRADATION_LABELS


@pytest.fixture
def report():
    return MetricReport(
        rows=[MetricRow("noisy", 27.123456789012345, 0.8123456789, 40),
              MetricRow("hazy", 21.5, 0.7, 10)],
        config={"seed": 0},
        seeds=[0],
    )


def test_overall_is_count_weighted(report):
    overall = report.overall
    assert overall["psnr"] == pytest.approx((27.123456789012345 * 40 + 21.5 * 10) / 50, abs=1e-9)
    assert overall["ssim"] == pytest.approx((0.8123456789 * 40 + 0.7 * 10) / 50, abs=1e-9)


def test_csv_round_trip_is_exact(report, tmp_path):
    path = report.to_csv(tmp_path / "report.csv")
    loaded = MetricReport.from_csv(path)
    assert loaded.rows == report.rows


def test_json_schema(report, tmp_path):
    paths = report.save(tmp_path, "report")
    data = json.loads(paths["json"].read_text())
    assert data["lpips"] is None and data["fid"] is None
    assert "8x8" in data["ssim_variant"]
    assert data["config"] == {"seed": 0}
    recomputed = sum(r["psnr"] * r["n"] for r in data["rows"]) / sum(r["n"] for r in data["rows"])
    assert abs(recomputed - data["overall"]["psnr"]) <= 1e-9
    assert MetricReport.load(paths["json"]).rows == report.rows


def test_per_class_accuracy():
    labels = torch.arange(10).repeat(2)
    predicted = labels.clone()
    predicted[0] = 1
    accuracy = per_class_accuracy(predicted, labels)
    assert accuracy["blurry"] == 0.5
    assert accuracy["noisy"] == 1.0
    with pytest.raises(ValueError):
        per_class_accuracy(torch.zeros(3, dtype=torch.long), torch.zeros(3, dtype=torch.long))


def test_classification_table(tmp_path):
    table = ClassificationTable()
    table.add_row(BASELINE_ROW, {label: 0.1 for label in DEGRADATION_LABELS})
    table.add_row("daclip", {label: 1.0 if i else 0.5 for i, label in enumerate(DEGRADATION_LABELS)})
    assert table.average("daclip") == pytest.approx(0.95)
    frame = table.to_frame()
    assert list(frame.index) == [BASELINE_ROW, "daclip"]
    assert frame.loc["daclip", "average"] == pytest.approx(0.95)
    assert table.save_csv(tmp_path / "classification.csv").exists()


def test_identical_pairs_give_strict_json(tmp_path):
    from data.datasets import DegradedPairs
    from evaluation.metrics import PSNR_CEILING_DB
    from evaluation.restoration_eval import eval_degraded_inputs

    hq = torch.rand(4, 3, 16, 16, generator=torch.Generator().manual_seed(0))
    pairs = DegradedPairs(lq=hq.clone(), hq=hq, degradation=torch.tensor([9, 9, 4, 4]),
                          caption_ids=torch.zeros(4, dtype=torch.long), captions=["a photo"], seeds=[0, 1, 2, 3])
    report = eval_degraded_inputs(pairs, {"seed": 0})
    assert report.row("inpainting").psnr == PSNR_CEILING_DB
    paths = report.save(tmp_path, "identity")
    text = paths["json"].read_text()
    assert "Infinity" not in text and "NaN" not in text
    assert json.loads(text)["overall"]["psnr"] == PSNR_CEILING_DB

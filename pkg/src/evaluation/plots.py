"""
Training-curve logs and line plots
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["step", "variant", "metric", "value"]


@dataclass
class CurvePoint:
    step: int
    split: str
    metric: str
    value: float


@dataclass
class CurveLog:
    """Curve points of one variant; steps strictly increase per metric"""
    variant: str
    points: List[CurvePoint] = field(default_factory=list)

    def add(self, step: int, metric: str, value: float, split: str = "val") -> None:
        last = self.last_step(metric, split)
        if last is not None and step <= last:
            raise ValueError(f"{self.variant}/{split}/{metric}: step {step} does not follow {last}")
        self.points.append(CurvePoint(int(step), split, metric, float(value)))

    def last_step(self, metric: str, split: str = "val"):
        steps = [p.step for p in self.points if p.metric == metric and p.split == split]
        return steps[-1] if steps else None

    def values(self, metric: str, split: str = "val") -> List[float]:
        return [p.value for p in self.points if p.metric == metric and p.split == split]

    def final(self, metric: str, split: str = "val") -> float:
        values = self.values(metric, split)
        if not values:
            raise ValueError(f"{self.variant} has no '{metric}' points")
        return values[-1]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {"step": p.step, "variant": self.variant, "split": p.split, "metric": p.metric, "value": p.value}
            for p in self.points
        ], columns=["step", "variant", "split", "metric", "value"])

    def to_dict(self) -> Dict:
        return {"variant": self.variant, "points": [p.__dict__ for p in self.points]}

    @classmethod
    def from_dict(cls, data: Dict) -> "CurveLog":
        curve = cls(variant=data["variant"])
        for p in data.get("points", []):
            curve.add(p["step"], p["metric"], p["value"], p.get("split", "val"))
        return curve

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        return path


def load_curves(directory: Union[str, Path]) -> List[CurveLog]:
    """Every *.curve.json below a directory, sorted by variant"""
    curves = [CurveLog.from_dict(json.loads(p.read_text(encoding="utf-8")))
              for p in sorted(Path(directory).rglob("*.curve.json"))]
    return sorted(curves, key=lambda c: c.variant)


def emit_plots(curves: Sequence[CurveLog], out_dir: Union[str, Path]) -> Dict[str, Dict[str, Path]]:
    """
    One PNG (all variants overlaid) and one CSV per metric

    Returns:
        {metric: {"png": path, "csv": path}}
    """
    frames = [c.to_frame() for c in curves if c.points]
    if not frames:
        raise ValueError("emit_plots needs at least one non-empty curve")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = pd.concat(frames, ignore_index=True)

    outputs: Dict[str, Dict[str, Path]] = {}
    for metric, rows in table.groupby("metric", sort=True):
        safe = metric.replace("/", "_")
        csv_path = out_dir / f"{safe}.csv"
        rows[CURVE_COLUMNS].to_csv(csv_path, index=False)

        fig, ax = plt.subplots(figsize=(6, 4))
        for variant, series in rows.groupby("variant", sort=True):
            ax.plot(series["step"], series["value"], marker="o", markersize=3, label=variant)
        ax.set_xlabel("step")
        ax.set_ylabel(metric)
        ax.set_title(metric)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
        png_path = out_dir / f"{safe}.png"
        fig.tight_layout()
        fig.savefig(png_path, dpi=100)
        plt.close(fig)

        outputs[metric] = {"png": png_path, "csv": csv_path}
    logger.info(f"Wrote {len(outputs)} plot(s) for {len(frames)} curve(s) to {out_dir}")
    return outputs

"""Quantitative evaluation: normalised landmark errors, statistics, CED curves.

The per-item error is the mean per-landmark Euclidean distance divided by
the diagonal of the ground-truth landmark bounding box; the standard
deviation uses the population convention (ddof=0).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fitting import landmark_loss
from .images import write_png

DEFAULT_THRESHOLDS = tuple(round(0.01 * i, 2) for i in range(11))
MARKER_COLOUR = (0.0, 1.0, 0.0)


@dataclass
class EvalReport:
    errors: list[float]
    mean: float
    std: float
    median: float
    frac_le_010: float
    frac_le_006: float
    ced_thresholds: list[float]
    ced_values: list[float]

    def to_dict(self) -> dict:
        return {
            "schema": "eval/1",
            "errors": self.errors,
            "mean": self.mean,
            "std": self.std,
            "median": self.median,
            "frac_le_010": self.frac_le_010,
            "frac_le_006": self.frac_le_006,
            "ced_thresholds": self.ced_thresholds,
            "ced_values": self.ced_values,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        if data.get("schema") != "eval/1":
            raise ValueError("unknown evaluation report schema")
        return cls(errors=list(data["errors"]), mean=data["mean"], std=data["std"],
                   median=data["median"], frac_le_010=data["frac_le_010"],
                   frac_le_006=data["frac_le_006"],
                   ced_thresholds=list(data["ced_thresholds"]),
                   ced_values=list(data["ced_values"]))


def evaluate(predictions, ground_truth, thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    """Aggregate normalised landmark errors over aligned prediction/truth lists."""
    if len(predictions) == 0 or len(predictions) != len(ground_truth):
        raise ValueError("predictions and ground truth must be equal-length, non-empty lists")
    errors = [landmark_loss(np.asarray(p), np.asarray(g))
              for p, g in zip(predictions, ground_truth)]
    arr = np.asarray(errors)
    thresholds = [float(t) for t in thresholds]
    ced = [float((arr <= t).mean()) for t in thresholds]
    return EvalReport(
        errors=[float(e) for e in errors],
        mean=float(arr.mean()),
        std=float(arr.std(ddof=0)),
        median=float(np.median(arr)),
        frac_le_010=float((arr <= 0.10).mean()),
        frac_le_006=float((arr <= 0.06).mean()),
        ced_thresholds=thresholds,
        ced_values=ced,
    )


def overlay_landmarks(image: np.ndarray, landmarks: np.ndarray,
                      colour=MARKER_COLOUR, radius: int = 1) -> np.ndarray:
    """Copy of the image with a square marker drawn at every landmark."""
    out = np.asarray(image, dtype=float).copy()
    h, w = out.shape[:2]
    for x, y in np.asarray(landmarks, dtype=float):
        ix, iy = int(np.floor(x)), int(np.floor(y))
        y0, y1 = max(iy - radius, 0), min(iy + radius + 1, h)
        x0, x1 = max(ix - radius, 0), min(ix + radius + 1, w)
        if y0 < y1 and x0 < x1:
            out[y0:y1, x0:x1] = colour
    return out


def emit_report(report: EvalReport, out_dir, overlays=None) -> list[Path]:
    """Write report.json and ced.csv; optionally landmark overlay PNGs.

    ``overlays`` is an iterable of (id, image, landmarks) triples.
    Returns the list of written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n")
    written.append(json_path)

    csv_path = out_dir / "ced.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "fraction"])
        for t, v in zip(report.ced_thresholds, report.ced_values):
            writer.writerow([repr(t), repr(v)])
    written.append(csv_path)

    if overlays is not None:
        for item_id, image, landmarks in overlays:
            path = out_dir / f"overlay_{item_id}.png"
            write_png(path, overlay_landmarks(image, landmarks))
            written.append(path)
    return written


def load_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))

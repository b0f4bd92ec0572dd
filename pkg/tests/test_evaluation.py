import csv
import json

import numpy as np
import pytest

from earfit.evaluation import (EvalReport, emit_report, evaluate, load_report,
                               overlay_landmarks)
from earfit.images import read_png


def _sets_with_errors(errors, diag=100.0):
    """Prediction/truth pairs whose landmark_loss equals the given values."""
    gt = np.zeros((55, 2))
    gt[:, 0] = np.linspace(0, 60, 55)
    gt[:, 1] = np.linspace(0, 80, 55)  # diagonal 100
    preds = [gt + [e * diag, 0.0] for e in errors]
    return preds, [gt] * len(errors)


class TestEvaluate:
    def test_perfect_predictions(self):
        preds, gts = _sets_with_errors([0.0, 0.0, 0.0])
        report = evaluate(preds, gts)
        assert report.errors == [0.0, 0.0, 0.0]
        assert report.mean == 0.0 and report.median == 0.0
        assert all(v == 1.0 for v in report.ced_values[1:])

    def test_hand_arithmetic(self):
        preds, gts = _sets_with_errors([0.03, 0.05, 0.07])
        report = evaluate(preds, gts)
        assert report.mean == pytest.approx(0.05, abs=1e-12)
        assert report.median == pytest.approx(0.05, abs=1e-12)
        assert report.frac_le_006 == pytest.approx(2 / 3, abs=1e-12)
        assert report.frac_le_010 == 1.0
        assert report.std == pytest.approx(np.std([0.03, 0.05, 0.07]), abs=1e-12)

    def test_ced_monotone(self):
        rng = np.random.default_rng(0)
        preds, gts = _sets_with_errors(rng.uniform(0, 0.12, 20))
        report = evaluate(preds, gts)
        assert all(b >= a for a, b in zip(report.ced_values, report.ced_values[1:]))

    def test_order_invariant(self):
        preds, gts = _sets_with_errors([0.01, 0.04, 0.09])
        a = evaluate(preds, gts)
        b = evaluate(preds[::-1], gts[::-1])
        assert a.mean == b.mean and a.median == b.median and a.std == b.std

    def test_empty_or_mismatched(self):
        with pytest.raises(ValueError):
            evaluate([], [])
        preds, gts = _sets_with_errors([0.01])
        with pytest.raises(ValueError):
            evaluate(preds, gts + gts)


class TestReportRoundTrip:
    def test_emit_then_load_exact(self, tmp_path):
        preds, gts = _sets_with_errors([0.013, 0.047, 0.066, 0.101])
        report = evaluate(preds, gts)
        emit_report(report, tmp_path)
        back = load_report(tmp_path / "report.json")
        assert back == report

    def test_reference_statistics_fixture_round_trips(self, tmp_path):
        # published-style reference row: carried as data, not reproduced here
        ref = EvalReport(errors=[], mean=0.0398, std=0.009, median=0.0391,
                         frac_le_010=1.0, frac_le_006=0.962,
                         ced_thresholds=[0.06, 0.1], ced_values=[0.962, 1.0])
        (tmp_path / "ref.json").write_text(json.dumps(ref.to_dict()))
        back = load_report(tmp_path / "ref.json")
        assert back.mean == 0.0398 and back.median == 0.0391
        assert back.frac_le_006 == 0.962 and back.frac_le_010 == 1.0

    def test_ced_csv_matches_report(self, tmp_path):
        preds, gts = _sets_with_errors([0.02, 0.08])
        report = evaluate(preds, gts)
        emit_report(report, tmp_path)
        with open(tmp_path / "ced.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["threshold", "fraction"]
        got_t = [float(r[0]) for r in rows[1:]]
        got_v = [float(r[1]) for r in rows[1:]]
        assert got_t == report.ced_thresholds
        assert got_v == report.ced_values

    def test_unknown_schema_rejected(self, tmp_path):
        (tmp_path / "x.json").write_text(json.dumps({"schema": "eval/99"}))
        with pytest.raises(ValueError):
            load_report(tmp_path / "x.json")


class TestOverlays:
    def test_marker_pixel_count(self, tmp_path):
        rng = np.random.default_rng(1)
        image = np.full((64, 64, 3), 0.5)
        # landmarks on a sparse grid so 3x3 markers never touch
        xs, ys = np.meshgrid(np.arange(5, 61, 7), np.arange(5, 61, 7))
        pts = np.stack([xs.ravel(), ys.ravel()], axis=1)[:55].astype(float) + 0.5
        out = overlay_landmarks(image, pts)
        green = (out[:, :, 1] == 1.0) & (out[:, :, 0] == 0.0)
        assert green.sum() == 55 * 9

    def test_emit_writes_overlay_files(self, tmp_path):
        preds, gts = _sets_with_errors([0.01])
        report = evaluate(preds, gts)
        image = np.zeros((90, 90, 3))
        paths = emit_report(report, tmp_path, overlays=[("item0", image, gts[0])])
        names = {p.name for p in paths}
        assert "overlay_item0.png" in names
        png = read_png(tmp_path / "overlay_item0.png")
        assert (png[:, :, 1] > 0.9).sum() >= 55

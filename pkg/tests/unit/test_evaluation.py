"""Unit tests for IoU metrics, trimap bands and evaluation reports."""

import csv
from unittest.mock import Mock

import numpy as np
import pytest

from bgcut.config import TrimapSpec
from bgcut.errors import EvaluationError, ShapeError
from bgcut.pipeline import evaluation
from bgcut.pipeline.evaluation import (
    BandPoint,
    EvalReport,
    band_curve,
    band_iou,
    boundary,
    evaluate,
    mean_iou,
    trimap_band,
    write_band_curve,
    write_report,
)
from bgcut.utils.timing import LatencyStats


def columns(*fg_columns, size=5):
    mask = np.zeros((size, size), dtype=bool)
    for c in fg_columns:
        mask[:, c] = True
    return mask


@pytest.mark.unit
class TestMeanIoU:
    """Tests for mean_iou."""

    def test_hand_computed(self):
        """Test foreground 1/2 and background 2/3 average to 7/12."""
        pred = np.array([[1, 1, 0, 0]], dtype=bool)
        gt = np.array([[1, 0, 0, 0]], dtype=bool)

        result = mean_iou(pred, gt)

        assert result.foreground == pytest.approx(0.5)
        assert result.background == pytest.approx(2 / 3)
        assert result.mean == pytest.approx(7 / 12)

    def test_identity(self, tiny_clip):
        """Test a perfect prediction scores 1."""
        assert mean_iou(tiny_clip.masks, tiny_clip.masks).mean == 1.0

    def test_complement(self, tiny_clip):
        """Test the inverted mask scores 0."""
        inverted = [~m for m in tiny_clip.masks]

        assert mean_iou(inverted, tiny_clip.masks).mean == 0.0

    def test_empty_union_scores_one(self):
        """Test a class absent from both masks counts as perfectly predicted."""
        empty = np.zeros((4, 4), dtype=bool)

        result = mean_iou(empty, empty)

        assert result.foreground == 1.0
        assert result.mean == 1.0

    def test_counts_aggregate_over_frames(self):
        """Test frames pool their pixel counts instead of averaging per-frame scores."""
        gt = [columns(0, 1), columns(0)]
        pred = [columns(0, 1), columns()]

        result = mean_iou(pred, gt)

        assert result.foreground == pytest.approx(10 / 15)
        assert result.background == pytest.approx(35 / 40)

    def test_shape_mismatch(self):
        """Test masks must agree in number and size."""
        with pytest.raises(ShapeError):
            mean_iou([columns(0)], [columns(0), columns(1)])
        with pytest.raises(ShapeError):
            mean_iou(columns(0), columns(0, size=4))


@pytest.mark.unit
class TestTrimapBand:
    """Tests for boundaries and band IoU."""

    def test_boundary_pixels(self):
        """Test both sides of a vertical edge are boundary."""
        edge = boundary(columns(0, 1))

        assert np.array_equal(edge, columns(1, 2))

    def test_band_width(self):
        """Test the band reaches width pixels beyond the boundary."""
        band = trimap_band(columns(0, 1), TrimapSpec(width=1))

        assert np.array_equal(band, columns(0, 1, 2, 3))

    def test_bands_are_nested(self, tiny_clip):
        """Test wider bands contain narrower ones."""
        gt = tiny_clip.masks[0]
        bands = [trimap_band(gt, TrimapSpec(width=w)) for w in (1, 2, 3, 5, 8)]

        for narrow, wide in zip(bands, bands[1:]):
            assert np.all(wide[narrow])
            assert wide.sum() >= narrow.sum()

    def test_hand_computed_band_iou(self):
        """Test a 5×5 case where the prediction spills one column past the edge."""
        gt = columns(0, 1)
        pred = columns(0, 1, 2)

        result = band_iou(pred, gt, TrimapSpec(width=1))

        assert result.foreground == pytest.approx(10 / 15)
        assert result.background == pytest.approx(5 / 10)
        assert result.mean == pytest.approx(7 / 12)

    def test_wide_band_equals_mean_iou(self, tiny_clip):
        """Test a band wider than the frame diagonal covers every pixel."""
        pred = [np.roll(m, 2, axis=1) for m in tiny_clip.masks]

        banded = band_iou(pred, tiny_clip.masks, TrimapSpec(width=46))

        assert banded == mean_iou(pred, tiny_clip.masks)

    def test_no_boundary(self):
        """Test an all-background ground truth has no band to score."""
        empty = np.zeros((6, 6), dtype=bool)

        with pytest.raises(EvaluationError):
            band_iou(empty, empty, TrimapSpec(width=3))

    def test_curve_and_csv(self, tmp_path):
        """Test the band curve is written as width,iou rows."""
        curve = band_curve(columns(0, 1, 2), columns(0, 1), [1, 2])
        path = tmp_path / "curves" / "band.csv"

        write_band_curve(path, curve)

        rows = list(csv.reader(path.open()))
        assert rows[0] == ["width", "iou"]
        assert rows[1] == ["1", f"{7 / 12:.6f}"]
        assert [int(r[0]) for r in rows[1:]] == [1, 2]
        assert isinstance(curve[0], BandPoint)
        assert curve[0].iou == pytest.approx(7 / 12)


@pytest.mark.unit
class TestEvaluate:
    """Tests for evaluation reports."""

    def test_report(self, tiny_clips):
        """Test per-clip results, the joint mean and the carried counters."""
        predictions = [clip.masks for clip in tiny_clips]
        predictions[1] = [~m for m in predictions[1]]
        ground_truth = [clip.masks for clip in tiny_clips]
        latency = {"attenuation": LatencyStats(mean_ms=1.0, p95_ms=2.0, samples=5)}

        report = evaluate(
            predictions,
            ground_truth,
            ["clip_a", "clip_b"],
            band_widths=(1, 3),
            counters={"attenuation": 10},
            latency=latency,
        )

        assert [c.clip_id for c in report.clips] == ["clip_a", "clip_b"]
        assert report.clips[0].iou.mean == 1.0
        assert report.clips[1].iou.mean == 0.0
        assert report.clips[0].frames == 5
        assert 0.0 < report.mean.mean < 1.0
        assert [p.width for p in report.band_curve] == [1, 3]
        assert report.counters == {"attenuation": 10}

    def test_no_band_widths(self, tiny_clip):
        """Test an empty width list skips the curve."""
        report = evaluate([tiny_clip.masks], [tiny_clip.masks], ["a"], band_widths=())

        assert report.band_curve == []

    def test_no_boundary_skips_curve(self, monkeypatch):
        """Test all-background ground truth yields IoU, an empty curve and a warning."""
        log = Mock()
        monkeypatch.setattr(evaluation, "logger", log)
        empty = [np.zeros((6, 6), dtype=bool)] * 3

        report = evaluate([empty], [empty], ["blank"], band_widths=(1, 3))

        assert report.band_curve == []
        assert report.mean.mean == 1.0
        log.warning.assert_called_once()
        assert log.warning.call_args.args[0] == "Band curve skipped"

    def test_clip_count_mismatch(self, tiny_clip):
        """Test predictions, ground truth and ids must line up."""
        with pytest.raises(ShapeError):
            evaluate([tiny_clip.masks], [tiny_clip.masks], ["a", "b"])

    def test_report_round_trip(self, tiny_clip, tmp_path):
        """Test the JSON report reloads into an equal model."""
        report = evaluate([tiny_clip.masks], [tiny_clip.masks], ["a"], band_widths=(1,))
        path = tmp_path / "out" / "report.json"

        write_report(path, report)

        assert EvalReport.model_validate_json(path.read_text()) == report


def reference_iou(pred, gt):
    """Per-class IoU by counting pixels one at a time; an absent class scores 1."""
    ious = []
    for label in (False, True):
        inter = union = 0
        for p, g in zip(pred.ravel(), gt.ravel()):
            inter += p == label and g == label
            union += p == label or g == label
        ious.append(inter / union if union else 1.0)
    return ious


def reference_band(gt, width):
    """Pixels within Chebyshev distance ``width`` of a pixel with a differing 4-neighbour."""
    h, w = gt.shape
    edge = [
        (i, j)
        for i in range(h)
        for j in range(w)
        if any(
            0 <= i + di < h and 0 <= j + dj < w and gt[i + di, j + dj] != gt[i, j]
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1))
        )
    ]
    band = np.zeros_like(gt)
    for i, j in edge:
        band[max(i - width, 0) : i + width + 1, max(j - width, 0) : j + width + 1] = True
    return band


def random_masks(seed):
    rng = np.random.default_rng(seed)
    h, w = (int(v) for v in rng.integers(4, 12, size=2))
    fill = rng.uniform(0.2, 0.8)
    return rng.random((h, w)) < fill, rng.random((h, w)) < fill, rng


@pytest.mark.unit
class TestMetricOracles:
    """Metrics against pixel-by-pixel reference counts on seeded random masks."""

    @pytest.mark.parametrize("seed", range(50))
    def test_mean_iou(self, seed):
        """Test mean_iou against direct per-pixel counting."""
        pred, gt, _ = random_masks(seed)
        background, foreground = reference_iou(pred, gt)

        result = mean_iou(pred, gt)

        assert result.background == pytest.approx(background)
        assert result.foreground == pytest.approx(foreground)
        assert result.mean == pytest.approx((background + foreground) / 2)

    @pytest.mark.parametrize("seed", range(50))
    def test_band_iou(self, seed):
        """Test band_iou against IoU over the brute-force trimap band."""
        pred, gt, rng = random_masks(seed)
        width = int(rng.integers(1, 4))
        band = reference_band(gt, width)

        assert np.array_equal(trimap_band(gt, TrimapSpec(width=width)), band)
        if not band.any():
            with pytest.raises(EvaluationError):
                band_iou(pred, gt, TrimapSpec(width=width))
            return
        background, foreground = reference_iou(pred[band], gt[band])
        result = band_iou(pred, gt, TrimapSpec(width=width))
        assert result.mean == pytest.approx((background + foreground) / 2)

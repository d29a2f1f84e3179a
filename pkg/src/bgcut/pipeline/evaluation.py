"""Mean IoU, trimap-band IoU and evaluation reports."""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import cv2
import numpy as np
import structlog
from pydantic import BaseModel, Field

from bgcut.config import TrimapSpec
from bgcut.errors import DatasetError, EvaluationError, ShapeError
from bgcut.utils.images import Mask
from bgcut.utils.timing import LatencyStats

logger = structlog.get_logger()

MaskInput = Union[Mask, Sequence[Mask]]


@dataclass(frozen=True)
class IoUCounts:
    """Per-class intersection and union pixel counts; sums aggregate across frames."""

    intersection: tuple[int, int] = (0, 0)  # background, foreground
    union: tuple[int, int] = (0, 0)

    def __add__(self, other: "IoUCounts") -> "IoUCounts":
        return IoUCounts(
            intersection=(
                self.intersection[0] + other.intersection[0],
                self.intersection[1] + other.intersection[1],
            ),
            union=(self.union[0] + other.union[0], self.union[1] + other.union[1]),
        )

    def result(self) -> "IoUResult":
        # a class absent from both prediction and ground truth scores 1
        ious = [i / u if u else 1.0 for i, u in zip(self.intersection, self.union)]
        return IoUResult(background=ious[0], foreground=ious[1], mean=(ious[0] + ious[1]) / 2)


class IoUResult(BaseModel):
    background: float = Field(ge=0.0, le=1.0)
    foreground: float = Field(ge=0.0, le=1.0)
    mean: float = Field(ge=0.0, le=1.0)


def _as_list(masks: MaskInput) -> list[np.ndarray]:
    if isinstance(masks, np.ndarray) and masks.ndim == 2:
        return [masks]
    return [np.asarray(m) for m in masks]


def _pairs(pred: MaskInput, gt: MaskInput) -> list[tuple[np.ndarray, np.ndarray]]:
    preds, gts = _as_list(pred), _as_list(gt)
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predicted masks for {len(gts)} ground-truth masks")
    for i, (p, g) in enumerate(zip(preds, gts)):
        if p.shape != g.shape or p.ndim != 2:
            raise ShapeError(f"frame {i}: prediction {p.shape} vs ground truth {g.shape}")
    return [(p.astype(bool), g.astype(bool)) for p, g in zip(preds, gts)]


def iou_counts(pred: Mask, gt: Mask, region: Optional[np.ndarray] = None) -> IoUCounts:
    """Counts over all pixels, or only where ``region`` is set."""
    if region is not None:
        pred, gt = pred[region], gt[region]
    fg_i = int(np.count_nonzero(pred & gt))
    fg_u = int(np.count_nonzero(pred | gt))
    bg_i = int(np.count_nonzero(~pred & ~gt))
    bg_u = int(np.count_nonzero(~pred | ~gt))
    return IoUCounts(intersection=(bg_i, fg_i), union=(bg_u, fg_u))


def mean_iou(pred: MaskInput, gt: MaskInput) -> IoUResult:
    """Per-class and mean IoU with counts aggregated over every pixel of every frame.

    Raises:
        ShapeError: If frame counts or dimensions differ
    """
    total = IoUCounts()
    for p, g in _pairs(pred, gt):
        total = total + iou_counts(p, g)
    return total.result()


def boundary(gt: Mask) -> np.ndarray:
    """Pixels with a 4-neighbour of the other label."""
    gt = np.asarray(gt, dtype=bool)
    edge = np.zeros_like(gt)
    vertical = gt[1:] != gt[:-1]
    horizontal = gt[:, 1:] != gt[:, :-1]
    edge[1:] |= vertical
    edge[:-1] |= vertical
    edge[:, 1:] |= horizontal
    edge[:, :-1] |= horizontal
    return edge


def trimap_band(gt: Mask, spec: TrimapSpec) -> np.ndarray:
    """Pixels within Chebyshev distance ``spec.width`` of the ground-truth boundary."""
    edge = boundary(gt).astype(np.uint8)
    kernel = np.ones((2 * spec.width + 1, 2 * spec.width + 1), dtype=np.uint8)
    return cv2.dilate(edge, kernel, borderType=cv2.BORDER_CONSTANT, borderValue=0).astype(bool)


def band_iou(pred: MaskInput, gt: MaskInput, spec: TrimapSpec) -> IoUResult:
    """Mean IoU restricted to the boundary band, aggregated over frames.

    Raises:
        ShapeError: If frame counts or dimensions differ
        EvaluationError: If no ground-truth boundary exists in any frame
    """
    total = IoUCounts()
    covered = 0
    for p, g in _pairs(pred, gt):
        band = trimap_band(g, spec)
        covered += int(np.count_nonzero(band))
        total = total + iou_counts(p, g, band)
    if covered == 0:
        raise EvaluationError("ground truth has no boundary; the trimap band is empty")
    return total.result()


class BandPoint(BaseModel):
    width: int
    iou: float


def band_curve(pred: MaskInput, gt: MaskInput, widths: Sequence[int]) -> list[BandPoint]:
    """Band mean IoU for each width."""
    return [
        BandPoint(width=w, iou=band_iou(pred, gt, TrimapSpec(width=w)).mean) for w in widths
    ]


def write_band_curve(path: Union[str, Path], curve: Sequence[BandPoint]) -> None:
    """CSV with a ``width,iou`` header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["width", "iou"])
        for point in curve:
            writer.writerow([point.width, f"{point.iou:.6f}"])


class ClipEvaluation(BaseModel):
    clip_id: str
    frames: int
    iou: IoUResult


class EvalReport(BaseModel):
    """Evaluation of a prediction set against ground truth."""

    clips: list[ClipEvaluation]
    mean: IoUResult
    band_curve: list[BandPoint] = Field(default_factory=list)
    counters: dict[str, int] = Field(default_factory=dict)
    latency: dict[str, LatencyStats] = Field(default_factory=dict)


def evaluate(
    predictions: Sequence[Sequence[Mask]],
    ground_truth: Sequence[Sequence[Mask]],
    clip_ids: Sequence[str],
    band_widths: Sequence[int] = (1, 3, 5, 10, 20),
    counters: Optional[dict[str, int]] = None,
    latency: Optional[dict[str, LatencyStats]] = None,
) -> EvalReport:
    """Per-clip IoU, IoU over all clips jointly and the band curve over all clips.

    Args:
        predictions: Masks per clip
        ground_truth: Ground-truth masks per clip, in the same order
        clip_ids: Clip labels, in the same order
        band_widths: Trimap widths for the band curve; empty skips it, as does ground truth
            without any boundary (logged as a warning)
        counters: Forward-pass counters to carry into the report
        latency: Per-stage latency to carry into the report
    """
    if not len(predictions) == len(ground_truth) == len(clip_ids):
        raise ShapeError(
            f"{len(predictions)} predicted clips, {len(ground_truth)} ground-truth clips, "
            f"{len(clip_ids)} ids"
        )
    clips = []
    total = IoUCounts()
    all_pred: list[Mask] = []
    all_gt: list[Mask] = []
    for clip_id, pred, gt in zip(clip_ids, predictions, ground_truth):
        counts = IoUCounts()
        for p, g in _pairs(pred, gt):
            counts = counts + iou_counts(p, g)
        total = total + counts
        all_pred.extend(pred)
        all_gt.extend(gt)
        clips.append(ClipEvaluation(clip_id=clip_id, frames=len(pred), iou=counts.result()))
        logger.debug("Evaluated clip", clip_id=clip_id, mean_iou=clips[-1].iou.mean)

    curve: list[BandPoint] = []
    if band_widths and all_gt:
        if any(boundary(g).any() for g in all_gt):
            curve = band_curve(all_pred, all_gt, band_widths)
        else:
            logger.warning(
                "Band curve skipped", reason="no ground-truth boundary", frames=len(all_gt)
            )
    report = EvalReport(
        clips=clips,
        mean=total.result(),
        band_curve=curve,
        counters=counters or {},
        latency=latency or {},
    )
    logger.info(
        "Evaluation finished",
        clips=len(clips),
        frames=len(all_gt),
        mean_iou=report.mean.mean,
        foreground_iou=report.mean.foreground,
    )
    return report


def write_report(path: Union[str, Path], report: EvalReport) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.model_dump_json(indent=2) + "\n")
    except OSError as e:
        raise DatasetError("cannot write evaluation report", path=str(path)) from e

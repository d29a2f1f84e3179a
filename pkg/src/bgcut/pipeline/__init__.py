"""Video inference, evaluation, benchmarking and compositing."""

from bgcut.pipeline.bench import BenchReport, bench
from bgcut.pipeline.composite import CompositeSpec, composite, composite_clip, feather_alpha
from bgcut.pipeline.evaluation import (
    EvalReport,
    IoUResult,
    band_curve,
    band_iou,
    evaluate,
    mean_iou,
    trimap_band,
    write_band_curve,
    write_report,
)
from bgcut.pipeline.io import load_background_samples, read_masks, write_masks
from bgcut.pipeline.models import SegmentationModels
from bgcut.pipeline.segment import (
    ClipResult,
    ForwardCounters,
    VideoSegmenter,
    segment_clip,
    segment_clips,
    segment_video,
)
from bgcut.training.dataset import VideoClip

__all__ = [
    "BenchReport",
    "ClipResult",
    "CompositeSpec",
    "EvalReport",
    "ForwardCounters",
    "IoUResult",
    "SegmentationModels",
    "VideoClip",
    "VideoSegmenter",
    "band_curve",
    "band_iou",
    "bench",
    "composite",
    "composite_clip",
    "evaluate",
    "feather_alpha",
    "load_background_samples",
    "mean_iou",
    "read_masks",
    "segment_clip",
    "segment_clips",
    "segment_video",
    "trimap_band",
    "write_band_curve",
    "write_masks",
    "write_report",
]

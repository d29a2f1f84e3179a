"""Sliding-window video inference.

Each frame is scored exactly once; the refinement network then reads every window of
2n+1 neighbouring score maps from a cache. Windows are clamped at the clip edges, so
a mask exists for every frame.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional, Sequence, TypeVar

import structlog

from bgcut.attenuation.model import (
    GlobalBackgroundFeature,
    ScoreMap,
    compute_bg_global_feature,
    forward,
    predict_mask,
    single_path_scores,
)
from bgcut.config import get_settings
from bgcut.errors import PreconditionError, ShapeError
from bgcut.metrics import forward_passes_total, frames_segmented_total, stage_latency_seconds
from bgcut.pipeline.models import SegmentationModels
from bgcut.refinement.network import ScoreStack, clamped_window, refine
from bgcut.training.dataset import VideoClip
from bgcut.utils.images import Frame, Mask
from bgcut.utils.timing import LatencyStats

logger = structlog.get_logger()

T = TypeVar("T")

STAGES = ("attenuation", "background", "refinement")


@dataclass
class ForwardCounters:
    """Exact network invocation counts.

    ``attenuation`` counts per-frame scoring passes (with or without a background path),
    ``background`` counts background-sample passes.
    """

    attenuation: int = 0
    background: int = 0
    refinement: int = 0

    def record(self, stage: str, count: int = 1) -> None:
        setattr(self, stage, getattr(self, stage) + count)
        forward_passes_total.labels(stage=stage).inc(count)

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


class VideoSegmenter:
    """Streaming segmenter for one clip.

    ``push`` scores new frames and returns the masks whose windows are complete;
    ``flush`` closes the clip and returns the rest. Any chunking of the same frames
    yields the same masks as a single push followed by flush.
    """

    def __init__(
        self,
        models: SegmentationModels,
        bg_frames: Sequence[Frame] = (),
        bg_feature: Optional[GlobalBackgroundFeature] = None,
        clip_id: str = "clip",
    ) -> None:
        """
        Args:
            models: Scoring and refinement networks
            bg_frames: Background samples; required with an attenuation model unless
                ``bg_feature`` is given
            bg_feature: Precomputed background feature
            clip_id: Label for logs

        Raises:
            MissingBackgroundError: If attenuation is on and no background is available
            StaleFeatureError: If ``bg_feature`` belongs to another background backbone
        """
        self.models = models
        self.clip_id = clip_id
        self.counters = ForwardCounters()
        self._timings: dict[str, list[float]] = {stage: [] for stage in STAGES}
        self._radius = models.n if models.refinement is not None else 0
        self._keep_frames = models.guidance_frames > 0

        self.bg_feature: Optional[GlobalBackgroundFeature] = None
        if models.attenuation is not None:
            if bg_feature is None:
                attenuation = models.attenuation
                bg_feature = self._timed(
                    "background", lambda: compute_bg_global_feature(bg_frames, attenuation)
                )
                self.counters.record("background", len(bg_frames))
            models.attenuation.check_feature(bg_feature)
            self.bg_feature = bg_feature

        self._scores: dict[int, ScoreMap] = {}
        self._frames: dict[int, Frame] = {}
        self._size: Optional[tuple[int, ...]] = None
        self._received = 0
        self._emitted = 0
        self._closed = False

    @property
    def received(self) -> int:
        return self._received

    @property
    def emitted(self) -> int:
        return self._emitted

    @property
    def cached(self) -> int:
        return len(self._scores)

    def _timed(self, stage: str, fn: Callable[[], T]) -> T:
        start = time.perf_counter()
        result = fn()
        elapsed = time.perf_counter() - start
        self._timings[stage].append(elapsed)
        stage_latency_seconds.labels(stage=stage).observe(elapsed)
        return result

    def _score(self, frame: Frame, index: int) -> ScoreMap:
        models = self.models
        if models.attenuation is not None:
            assert self.bg_feature is not None
            attenuation, feature = models.attenuation, self.bg_feature
            score = self._timed(
                "attenuation", lambda: forward(frame, feature, attenuation, frame_index=index)
            )
        else:
            assert models.segmenter is not None
            segmenter = models.segmenter
            score = self._timed(
                "attenuation", lambda: single_path_scores([frame], segmenter, index)[0]
            )
        self.counters.record("attenuation")
        return score

    def push(self, frames: Iterable[Frame]) -> list[Mask]:
        """Score ``frames`` (the next frames of the clip) and return the ready masks."""
        if self._closed:
            raise PreconditionError("segmenter was flushed; start a new one for the next clip")
        for frame in frames:
            if self._size is None:
                self._size = frame.shape
            elif frame.shape != self._size:
                raise ShapeError(f"frame {self._received} is {frame.shape}, clip is {self._size}")
            index = self._received
            self._scores[index] = self._score(frame, index)
            if self._keep_frames:
                self._frames[index] = frame
            self._received += 1
        return self._drain(final=False)

    def flush(self) -> list[Mask]:
        """Emit the remaining masks, clamping the last windows at the clip end."""
        self._closed = True
        return self._drain(final=True)

    def _drain(self, final: bool) -> list[Mask]:
        masks = []
        while self._emitted < self._received and (
            final or self._emitted + self._radius < self._received
        ):
            masks.append(self._mask(self._emitted))
            self._emitted += 1
            self._evict(self._emitted - self._radius)
        frames_segmented_total.inc(len(masks))
        return masks

    def _mask(self, index: int) -> Mask:
        refinement = self.models.refinement
        if refinement is None:
            return predict_mask(self._scores[index])
        window = clamped_window(index, self._received, self._radius)
        stack = ScoreStack(
            scores=[self._scores[i] for i in window],
            guidance=[self._frames[i] for i in window] if self._keep_frames else [],
        )
        refined = self._timed("refinement", lambda: refine(stack, refinement))
        self.counters.record("refinement")
        return predict_mask(refined)

    def _evict(self, first_needed: int) -> None:
        for index in [i for i in self._scores if i < first_needed]:
            del self._scores[index]
            self._frames.pop(index, None)

    def latency(self) -> dict[str, LatencyStats]:
        return {
            stage: LatencyStats.from_samples(samples)
            for stage, samples in self._timings.items()
            if samples
        }


@dataclass
class ClipResult:
    clip_id: str
    masks: list[Mask]
    counters: ForwardCounters = field(default_factory=ForwardCounters)
    latency: dict[str, LatencyStats] = field(default_factory=dict)


def segment_clip(
    clip: VideoClip,
    models: SegmentationModels,
    bg_frames: Optional[Sequence[Frame]] = None,
    chunk_size: Optional[int] = None,
) -> ClipResult:
    """Segment every frame of a clip.

    Args:
        clip: Frames to segment
        models: Inference models
        bg_frames: Background samples; defaults to the clip's own
        chunk_size: Push frames in chunks of this size instead of all at once

    Returns:
        One mask per frame plus forward counters and per-stage latency
    """
    bg = clip.backgrounds if bg_frames is None else bg_frames
    segmenter = VideoSegmenter(models, bg_frames=bg, clip_id=clip.clip_id)
    step = chunk_size or max(len(clip), 1)
    if step < 1:
        raise PreconditionError(f"chunk size must be positive, got {chunk_size}")

    masks: list[Mask] = []
    for start in range(0, len(clip), step):
        masks.extend(segmenter.push(clip.frames[start : start + step]))
    masks.extend(segmenter.flush())

    logger.info(
        "Segmented clip",
        clip_id=clip.clip_id,
        frames=len(clip),
        window=models.window if models.refinement is not None else 1,
        **segmenter.counters.as_dict(),
    )
    return ClipResult(
        clip_id=clip.clip_id,
        masks=masks,
        counters=segmenter.counters,
        latency=segmenter.latency(),
    )


def segment_video(
    clip: VideoClip,
    models: SegmentationModels,
    n: Optional[int] = None,
    bg_frames: Optional[Sequence[Frame]] = None,
) -> list[Mask]:
    """Masks for every frame of ``clip``.

    Raises:
        PreconditionError: If ``n`` differs from the window radius the models were built for
        MissingBackgroundError: If attenuation is on and no background samples exist
    """
    if n is not None and models.refinement is not None and n != models.n:
        raise PreconditionError(f"refinement network expects n={models.n}, got n={n}")
    return segment_clip(clip, models, bg_frames=bg_frames).masks


def segment_clips(
    clips: Sequence[VideoClip],
    models: SegmentationModels,
    threads: Optional[int] = None,
    bg_frames: Optional[Sequence[Frame]] = None,
) -> list[ClipResult]:
    """Segment several clips, in parallel when more than one thread is allowed.

    Workers share the read-only models; each clip's cache belongs to one worker.
    Results keep the order of ``clips``.
    """
    threads = threads or get_settings().threads
    workers = max(1, min(threads, len(clips)))
    if workers == 1:
        return [segment_clip(clip, models, bg_frames) for clip in clips]

    logger.debug("Segmenting clips in parallel", clips=len(clips), workers=workers)
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="bgcut-clip") as pool:
        return list(pool.map(lambda clip: segment_clip(clip, models, bg_frames), clips))

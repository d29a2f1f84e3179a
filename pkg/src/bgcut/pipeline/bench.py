"""Per-stage throughput benchmark."""

import os
import platform

import numpy as np
import structlog
from pydantic import BaseModel, Field

from bgcut import __version__
from bgcut.attenuation.model import (
    ScoreMap,
    compute_bg_global_feature,
    forward,
    single_path_scores,
)
from bgcut.config import get_settings
from bgcut.pipeline.models import SegmentationModels
from bgcut.refinement.network import ScoreStack, refine
from bgcut.utils.timing import LatencyStats, time_calls

logger = structlog.get_logger()


class BenchReport(BaseModel):
    """Wall-clock milliseconds per frame for each stage at one input size."""

    size: tuple[int, int]
    iterations: int
    warmup: int
    mode: str = Field(default="single-threaded", description="Execution mode of the timed calls")
    stages: dict[str, LatencyStats] = Field(default_factory=dict)
    machine: dict[str, str] = Field(default_factory=dict)


def execution_mode(threads: int) -> str:
    return "single-threaded" if threads == 1 else f"{threads} threads"


def machine_descriptor() -> dict[str, str]:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "cpu_count": str(os.cpu_count() or 0),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "bgcut": __version__,
        "threads": str(get_settings().threads),
    }


def bench(
    models: SegmentationModels,
    size: tuple[int, int] = (97, 97),
    iterations: int = 10,
    warmup: int = 2,
    seed: int = 0,
) -> BenchReport:
    """Time one scoring pass and one refinement pass on random batch-1 input.

    Warmup calls are excluded. Zero iterations yields a report without stages.
    """
    report = BenchReport(
        size=size,
        iterations=iterations,
        warmup=warmup,
        mode=execution_mode(get_settings().threads),
        machine=machine_descriptor(),
    )
    if iterations <= 0:
        return report

    rng = np.random.default_rng(seed)
    h, w = size
    frame = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)

    if models.attenuation is not None:
        attenuation = models.attenuation
        feature = compute_bg_global_feature([frame], attenuation)
        report.stages["attenuation"] = time_calls(
            lambda: forward(frame, feature, attenuation), iterations, warmup, stage="attenuation"
        )
    else:
        segmenter = models.segmenter
        assert segmenter is not None
        report.stages["attenuation"] = time_calls(
            lambda: single_path_scores([frame], segmenter), iterations, warmup, stage="attenuation"
        )

    refinement = models.refinement
    if refinement is not None:
        window = models.window
        stack = ScoreStack(
            scores=[
                ScoreMap(
                    scores=rng.standard_normal((1, 2, h, w)).astype(models.dtype),
                    frame_index=i,
                )
                for i in range(window)
            ],
            guidance=[frame] * window,
        )
        report.stages["refinement"] = time_calls(
            lambda: refine(stack, refinement), iterations, warmup, stage="refinement"
        )

    logger.info(
        "Benchmark finished",
        size=f"{h}x{w}",
        iterations=iterations,
        **{f"{stage}_ms": round(stats.mean_ms, 3) for stage, stats in report.stages.items()},
    )
    return report

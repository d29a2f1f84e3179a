"""Wall-clock latency measurement."""

import time
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel

from bgcut.metrics import stage_latency_seconds


class LatencyStats(BaseModel):
    """Per-call latency summary in milliseconds."""

    mean_ms: float = 0.0
    p95_ms: float = 0.0
    samples: int = 0

    @classmethod
    def from_samples(cls, seconds: list[float]) -> "LatencyStats":
        if not seconds:
            return cls()
        ms = np.asarray(seconds) * 1000.0
        return cls(mean_ms=float(ms.mean()), p95_ms=float(np.percentile(ms, 95)), samples=len(ms))


def time_calls(
    fn: Callable[[], object],
    iterations: int,
    warmup: int = 1,
    stage: Optional[str] = None,
) -> LatencyStats:
    """Time ``iterations`` calls of ``fn`` after ``warmup`` untimed calls.

    When ``stage`` is given each timed call is also observed on the stage latency
    histogram.
    """
    if iterations <= 0:
        return LatencyStats()
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(iterations):
        start = time.perf_counter()
        fn()
        elapsed = time.perf_counter() - start
        samples.append(elapsed)
        if stage is not None:
            stage_latency_seconds.labels(stage=stage).observe(elapsed)
    return LatencyStats.from_samples(samples)

"""Prometheus metrics definitions for bgcut."""

from pathlib import Path

from prometheus_client import REGISTRY, Counter, Gauge, Histogram, write_to_textfile

# Counter metrics
forward_passes_total = Counter(
    "bgcut_forward_passes_total",
    "Network forward passes",
    ["stage"],  # attenuation, background, refinement
)

frames_segmented_total = Counter(
    "bgcut_frames_segmented_total",
    "Frames for which a mask was produced",
)

train_iterations_total = Counter(
    "bgcut_train_iterations_total",
    "Optimizer steps taken",
    ["stage"],  # stage1, stage2, finetune
)

# Histogram metrics
stage_latency_seconds = Histogram(
    "bgcut_stage_latency_seconds",
    "Per-frame wall-clock latency of a pipeline stage",
    ["stage"],  # attenuation, background, refinement
    buckets=(0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5),
)

# Gauge metrics
train_loss = Gauge(
    "bgcut_train_loss",
    "Most recent training loss",
    ["stage"],
)

pruned_filters = Gauge(
    "bgcut_pruned_filters",
    "Filters retained per prunable layer after the latest pruning step",
    ["layer"],
)

model_parameters = Gauge(
    "bgcut_model_parameters",
    "Trainable parameter count",
    ["model"],
)


def write_metrics(path: Path) -> None:
    """Write the default registry in Prometheus text format."""
    path.parent.mkdir(parents=True, exist_ok=True)
    write_to_textfile(str(path), REGISTRY)

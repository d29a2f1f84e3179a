"""Structured L1 filter pruning.

Channel groups are derived from the graph: every conv/deconv output opens a channel
space, ``add`` joins the spaces of its operands and ``concat`` stacks them. Filters of
one joined space are ranked together by their summed L1 norm, so every residual add
keeps matching channels after pruning.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import structlog
from pydantic import BaseModel, Field

from bgcut.backbone.graph import FILTER_KINDS, LayerKind, ModelGraph, bias_name, weight_name
from bgcut.config import PruneSchedule
from bgcut.errors import PreconditionError, PruneError
from bgcut.metrics import model_parameters, pruned_filters
from bgcut.utils.timing import LatencyStats, time_calls

logger = structlog.get_logger()

FinetuneFn = Callable[[ModelGraph, int], Optional[float]]


def filter_l1(weights: np.ndarray, transposed: bool = False) -> np.ndarray:
    """Per-filter L1 norm. Conv weights are Cout×Cin×kh×kw, deconv weights Cin×Cout×kh×kw."""
    axes = (0, 2, 3) if transposed else (1, 2, 3)
    return np.abs(weights).sum(axis=axes, dtype=np.float64)


def rank_scores(scores: np.ndarray) -> np.ndarray:
    """Indices ordered by ascending score; ties keep the lower index first."""
    return np.argsort(np.asarray(scores), kind="stable")


def rank_filters(layer_weights: np.ndarray) -> np.ndarray:
    """Filters ordered by ascending L1 norm; the first entry is the first prune candidate."""
    if layer_weights.ndim != 4:
        raise PreconditionError(f"expected Cout×Cin×kh×kw weights, got {layer_weights.shape}")
    return rank_scores(filter_l1(layer_weights))


def kept_count(channels: int, keep_ratio: float) -> int:
    return math.ceil(keep_ratio * channels - 1e-9)


@dataclass
class _Spaces:
    """Union-find over channel spaces."""

    parent: list[int] = field(default_factory=list)
    size: list[int] = field(default_factory=list)
    producers: list[list[str]] = field(default_factory=list)
    prunable: list[bool] = field(default_factory=list)

    def open(self, size: int, producer: Optional[str], prunable: bool) -> int:
        self.parent.append(len(self.parent))
        self.size.append(size)
        self.producers.append([producer] if producer else [])
        self.prunable.append(prunable)
        return len(self.parent) - 1

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        self.parent[rb] = ra
        self.producers[ra].extend(self.producers[rb])
        self.prunable[ra] = self.prunable[ra] and self.prunable[rb]


def channel_groups(model: ModelGraph) -> tuple[_Spaces, dict[str, list[int]]]:
    """Channel spaces and, per node, the ordered list of spaces its channels come from."""
    spaces = _Spaces()
    layout: dict[str, list[int]] = {}
    for layer in model.layers:
        if layer.kind == LayerKind.INPUT:
            layout[layer.name] = [spaces.open(layer.out_channels, None, prunable=False)]
        elif layer.kind in FILTER_KINDS:
            layout[layer.name] = [spaces.open(layer.out_channels, layer.name, layer.prunable)]
        elif layer.kind == LayerKind.ADD:
            a, b = (layout[src] for src in layer.inputs)
            if [spaces.size[s] for s in a] != [spaces.size[s] for s in b]:
                raise PruneError(f"add {layer.name} joins differently segmented inputs")
            for sa, sb in zip(a, b):
                spaces.union(sa, sb)
            layout[layer.name] = list(a)
        elif layer.kind == LayerKind.CONCAT:
            layout[layer.name] = [s for src in layer.inputs for s in layout[src]]
        else:
            layout[layer.name] = list(layout[layer.inputs[0]])
    return spaces, layout


def _selection(spaces: _Spaces, keep: dict[int, np.ndarray], segments: list[int]) -> np.ndarray:
    """Indices into a node's channels that survive, given per-space keep lists."""
    parts = []
    offset = 0
    for space in segments:
        size = spaces.size[space]
        root = spaces.find(space)
        picked = keep.get(root, np.arange(size))
        parts.append(picked + offset)
        offset += size
    return np.concatenate(parts) if parts else np.arange(0)


def prune_step(model: ModelGraph, keep_ratio: float) -> ModelGraph:
    """Remove the lowest-L1 filters of every prunable channel group.

    Each group keeps ``ceil(keep_ratio · C)`` filters with the largest summed L1 norm;
    consumer input channels, biases and batch-norm parameters follow.

    Args:
        model: Graph to prune (left unchanged)
        keep_ratio: Fraction of filters to keep, in (0, 1]

    Returns:
        New, channel-consistent graph

    Raises:
        PreconditionError: If ``keep_ratio`` is outside (0, 1]
        PruneError: If a group would be left without filters
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise PreconditionError(f"keep_ratio must lie in (0, 1], got {keep_ratio}")

    spaces, layout = channel_groups(model)
    roots = {spaces.find(i) for i in range(len(spaces.parent))}

    keep: dict[int, np.ndarray] = {}
    for root in sorted(roots):
        if not spaces.prunable[root] or not spaces.producers[root]:
            continue
        size = spaces.size[root]
        count = kept_count(size, keep_ratio)
        if count < 1:
            raise PruneError(f"pruning would leave no filters in {spaces.producers[root]}")
        scores = np.zeros(size, dtype=np.float64)
        for producer in spaces.producers[root]:
            spec = model.layer(producer)
            scores += filter_l1(
                model.param(weight_name(producer)), transposed=spec.kind == LayerKind.DECONV
            )
        order = rank_scores(scores)
        keep[root] = np.sort(order[size - count :])

    layers = []
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    masks: dict[str, np.ndarray] = {}
    for layer in model.layers:
        out_sel = _selection(spaces, keep, layout[layer.name])
        if layer.kind in FILTER_KINDS:
            in_sel = _selection(spaces, keep, layout[layer.inputs[0]])
            w = model.param(weight_name(layer.name))
            if layer.kind == LayerKind.CONV:
                params[weight_name(layer.name)] = w[out_sel][:, in_sel].copy()
            else:
                params[weight_name(layer.name)] = w[in_sel][:, out_sel].copy()
            if layer.bias:
                params[bias_name(layer.name)] = model.param(bias_name(layer.name))[out_sel].copy()

            previous = model.masks[layer.name]
            mask = np.zeros_like(previous)
            mask[np.flatnonzero(previous)[out_sel]] = True
            masks[layer.name] = mask
            layer = layer.model_copy(
                update={"in_channels": int(in_sel.size), "out_channels": int(out_sel.size)}
            )
        elif layer.kind == LayerKind.BATCH_NORM:
            for key in ("gamma", "beta"):
                name = f"{layer.name}.{key}"
                params[name] = model.param(name)[out_sel].copy()
            for key in ("running_mean", "running_var"):
                name = f"{layer.name}.{key}"
                buffers[name] = model.buffers[name][out_sel].copy()
        layers.append(layer)

    pruned = ModelGraph(
        layers=layers,
        params=params,
        buffers=buffers,
        outputs=model.outputs,
        masks=masks,
        name=model.name,
    )
    logger.debug(
        "Pruned model",
        model=model.name,
        keep_ratio=keep_ratio,
        parameters_before=model.parameter_count(),
        parameters_after=pruned.parameter_count(),
    )
    return pruned


def filter_counts(model: ModelGraph) -> dict[str, int]:
    """Current filter count of every prunable layer."""
    spaces, layout = channel_groups(model)
    counts = {}
    for layer in model.filter_layers():
        root = spaces.find(layout[layer.name][0])
        if spaces.prunable[root]:
            counts[layer.name] = layer.out_channels
    return counts


def measure_latency(model: ModelGraph, size: tuple[int, int], iterations: int) -> LatencyStats:
    """Forward latency of a single-input graph on a random batch-1 image."""
    rng = np.random.default_rng(0)
    name = model.input_names[0]
    channels = model.layer(name).out_channels
    x = rng.standard_normal((1, channels, *size)).astype(model.dtype)
    return time_calls(lambda: model.forward({name: x}), iterations, warmup=1)


class PruneStepRecord(BaseModel):
    step: int
    keep_ratio: float
    filters_before: dict[str, int]
    filters_after: dict[str, int]
    parameters_before: int
    parameters_after: int
    finetune_loss: Optional[float] = None


class PruneReport(BaseModel):
    """Per-step filter counts, parameter totals and latency before/after."""

    target_fraction: float
    steps: list[PruneStepRecord] = Field(default_factory=list)
    initial_filters: dict[str, int] = Field(default_factory=dict)
    latency_before: LatencyStats = Field(default_factory=LatencyStats)
    latency_after: LatencyStats = Field(default_factory=LatencyStats)

    @property
    def parameter_totals(self) -> list[int]:
        if not self.steps:
            return []
        return [self.steps[0].parameters_before] + [s.parameters_after for s in self.steps]

    @property
    def retained_fraction(self) -> float:
        """Retained filters over initial filters across all prunable layers."""
        if not self.steps:
            return 1.0
        before = sum(self.initial_filters.values())
        after = sum(self.steps[-1].filters_after.values())
        return after / before if before else 1.0

    @property
    def latency_ratio(self) -> Optional[float]:
        if not self.latency_before.samples or not self.latency_after.samples:
            return None
        return self.latency_after.mean_ms / self.latency_before.mean_ms


def prune_to_target(
    model: ModelGraph,
    schedule: Optional[PruneSchedule] = None,
    finetune: Optional[FinetuneFn] = None,
) -> tuple[ModelGraph, PruneReport]:
    """Gradually prune and fine-tune.

    Args:
        model: Graph to compress (left unchanged)
        schedule: Keep ratio per step, step count and latency measurement settings
        finetune: Called as ``finetune(model, step)`` after every prune step; trains the
            model in place and returns its last loss (or None)

    Returns:
        Pruned graph and the report

    Raises:
        PruneError: If a step removes nothing or fine-tuning reports a non-finite loss;
            ``error.report`` holds the steps completed so far
    """
    schedule = schedule or PruneSchedule()
    report = PruneReport(
        target_fraction=schedule.target_fraction, initial_filters=filter_counts(model)
    )
    if schedule.num_steps == 0:
        return model, report

    report.latency_before = measure_latency(
        model, schedule.latency_input_size, schedule.latency_iterations
    )

    current = model
    for step in range(schedule.num_steps):
        before = filter_counts(current)
        params_before = current.parameter_count()
        current = prune_step(current, schedule.step_keep_ratio)
        params_after = current.parameter_count()
        record = PruneStepRecord(
            step=step,
            keep_ratio=schedule.step_keep_ratio,
            filters_before=before,
            filters_after=filter_counts(current),
            parameters_before=params_before,
            parameters_after=params_after,
        )
        if params_after >= params_before:
            raise PruneError(f"prune step {step} removed no parameters", report=report)

        if finetune is not None:
            loss = finetune(current, step)
            record.finetune_loss = loss
            if loss is not None and not math.isfinite(loss):
                report.steps.append(record)
                raise PruneError(f"fine-tuning diverged after prune step {step}", report=report)

        report.steps.append(record)
        for layer, kept in record.filters_after.items():
            pruned_filters.labels(layer=layer).set(kept)
        model_parameters.labels(model=current.name).set(params_after)
        logger.info(
            "Prune step complete",
            step=step,
            parameters=params_after,
            finetune_loss=record.finetune_loss,
        )

    report.latency_after = measure_latency(
        current, schedule.latency_input_size, schedule.latency_iterations
    )
    logger.info(
        "Pruning finished",
        steps=len(report.steps),
        retained_fraction=round(report.retained_fraction, 4),
        target_fraction=round(report.target_fraction, 4),
        latency_ratio=report.latency_ratio,
    )
    return current, report

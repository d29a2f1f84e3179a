"""Light-ResNet backbone: graph executor, builder, pruning and checkpoints."""

from bgcut.backbone.checkpoint import (
    load_bundle,
    load_checkpoint,
    read_tensors,
    save_bundle,
    save_checkpoint,
    write_tensors,
)
from bgcut.backbone.graph import GraphBuilder, LayerKind, LayerSpec, ModelGraph
from bgcut.backbone.pruning import (
    PruneReport,
    filter_counts,
    prune_step,
    prune_to_target,
    rank_filters,
)
from bgcut.backbone.resnet import build_backbone, build_segmentation_model

__all__ = [
    "GraphBuilder",
    "LayerKind",
    "LayerSpec",
    "ModelGraph",
    "PruneReport",
    "build_backbone",
    "build_segmentation_model",
    "filter_counts",
    "load_bundle",
    "load_checkpoint",
    "prune_step",
    "prune_to_target",
    "rank_filters",
    "read_tensors",
    "save_bundle",
    "save_checkpoint",
    "write_tensors",
]

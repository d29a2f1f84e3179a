"""Synthetic data, loaders, schedules and the two-stage trainer.

Ablation runs live in :mod:`bgcut.training.ablation`; they depend on the pipeline
package and are imported from there explicitly.
"""

from bgcut.training.dataset import (
    ClipManifest,
    SplitManifest,
    VideoClip,
    generate_dataset,
    load_clip,
    load_manifest,
    load_split,
    manifest_path,
    render_clip,
    scene_specs,
)
from bgcut.training.loader import Stage1Batches, Stage2Batches, prefetch
from bgcut.training.metadata import RunMetadata, write_run_metadata
from bgcut.training.schedule import poly_lr, total_iterations
from bgcut.training.stage1 import TrainResult, stage1_finetuner, train_stage1
from bgcut.training.stage2 import Stage2Result, stage2_optimizer, train_stage2
from bgcut.training.synthetic import SceneRenderer

__all__ = [
    "ClipManifest",
    "RunMetadata",
    "SceneRenderer",
    "SplitManifest",
    "Stage1Batches",
    "Stage2Batches",
    "Stage2Result",
    "TrainResult",
    "VideoClip",
    "generate_dataset",
    "load_clip",
    "load_manifest",
    "load_split",
    "manifest_path",
    "poly_lr",
    "prefetch",
    "render_clip",
    "scene_specs",
    "stage1_finetuner",
    "stage2_optimizer",
    "total_iterations",
    "train_stage1",
    "train_stage2",
    "write_run_metadata",
]

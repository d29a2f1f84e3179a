"""Pytest configuration and shared fixtures."""

import numpy as np
import pytest

from bgcut.config import (
    BackboneConfig,
    DatasetConfig,
    HeadConfig,
    PruneSchedule,
    RefinementConfig,
    RunConfig,
    SyntheticSceneSpec,
    TrainConfig,
    get_settings,
)


@pytest.fixture(autouse=True)
def clear_settings_cache():
    """Settings are cached per process; tests that patch the environment need a fresh copy."""
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def tiny_backbone():
    """Backbone small enough to run dozens of forward passes per test."""
    return BackboneConfig(
        stem_channels=4,
        stage_channels=(4, 4, 8, 8),
        blocks_per_stage=(1, 1, 1, 1),
    )


@pytest.fixture
def tiny_head():
    return HeadConfig(seg_channels=8)


@pytest.fixture
def tiny_refinement():
    return RefinementConfig(n=1, encoder_channels=(4, 4, 4))


@pytest.fixture
def tiny_config(tiny_backbone, tiny_head, tiny_refinement, tmp_path):
    """Run configuration for 32×32 clips with short training runs."""
    return RunConfig(
        backbone=tiny_backbone,
        head=tiny_head,
        refinement=tiny_refinement,
        prune=PruneSchedule(
            num_steps=2,
            finetune_iters_per_step=1,
            latency_input_size=(32, 32),
            latency_iterations=1,
        ),
        train=TrainConfig(
            batch_size=2,
            crop=24,
            n=1,
            iterations=3,
            prefetch=0,
            log_interval=1,
        ),
        dataset=DatasetConfig(
            train_clips=2,
            test_clips=1,
            frames_per_clip=4,
            height=32,
            width=32,
            bg_samples=2,
        ),
        paths={
            "dataset_dir": tmp_path / "data",
            "run_dir": tmp_path / "run",
            "stage1_checkpoint": tmp_path / "run" / "stage1.bgct",
            "pruned_checkpoint": tmp_path / "run" / "pruned.bgct",
            "stage2_checkpoint": tmp_path / "run" / "stage2.bgct",
        },
    )


@pytest.fixture
def scene_spec():
    return SyntheticSceneSpec(
        clip_id="clip_a",
        seed=7,
        height=32,
        width=32,
        frames=5,
        bg_samples=3,
    )


@pytest.fixture
def tiny_clip(scene_spec):
    """Rendered 5-frame 32×32 clip with masks and 3 background samples."""
    from bgcut.training.dataset import render_clip

    return render_clip(scene_spec)


@pytest.fixture
def tiny_clips(scene_spec):
    from bgcut.training.dataset import render_clip

    return [
        render_clip(scene_spec),
        render_clip(scene_spec.model_copy(update={"clip_id": "clip_b", "seed": 11})),
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(0)

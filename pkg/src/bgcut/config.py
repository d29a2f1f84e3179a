"""Configuration management for bgcut.

Process-level settings come from the environment (``BGCUT_*``); model, training and
evaluation parameters come from a TOML run configuration whose defaults are documented
in ``configs/default.toml``.
"""

import tomllib
from functools import lru_cache
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from bgcut.errors import ConfigError


class Settings(BaseSettings):
    """Process settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="BGCUT_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    threads: int = Field(
        default=1,
        ge=1,
        description="Cap on internal parallelism (BLAS, OpenCV, clip workers)",
    )

    # Logging Configuration
    log_level: str = Field(default="INFO", description="Logging level")
    log_format: str = Field(default="console", description="Log format (json or console)")

    metrics_file: Optional[Path] = Field(
        default=None,
        description="Write Prometheus text exposition here when the CLI exits",
    )


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BackboneConfig(_Section):
    """ResNet-18-shaped backbone. Defaults are a quarter of ResNet-18's widths."""

    stem_channels: int = Field(default=16, ge=1)
    stage_channels: tuple[int, int, int, int] = Field(default=(16, 32, 64, 128))
    blocks_per_stage: tuple[int, int, int, int] = Field(default=(2, 2, 2, 2))
    output_stride: Literal[8, 16] = Field(default=8)
    dilation_per_stage: Optional[tuple[int, int, int, int]] = Field(
        default=None,
        description="Defaults to (1, 1, 2, 4) for stride 8 and (1, 1, 1, 2) for stride 16",
    )
    input_size_hint: tuple[int, int] = Field(default=(97, 97))

    @model_validator(mode="after")
    def _check_channels(self) -> "BackboneConfig":
        if min(self.stage_channels) < 1 or min(self.blocks_per_stage) < 1:
            raise ValueError("all channel counts and block counts must be >= 1")
        if self.dilation_per_stage is not None and min(self.dilation_per_stage) < 1:
            raise ValueError("dilations must be >= 1")
        return self

    @property
    def stage_strides(self) -> tuple[int, int, int, int]:
        # stem conv and max pool contribute stride 4
        return (1, 2, 2 if self.output_stride == 16 else 1, 1)

    @property
    def dilations(self) -> tuple[int, int, int, int]:
        if self.dilation_per_stage is not None:
            return self.dilation_per_stage
        return (1, 1, 1, 2) if self.output_stride == 16 else (1, 1, 2, 4)

    @classmethod
    def resnet18(cls, width: float = 1.0, **overrides: object) -> "BackboneConfig":
        """ResNet-18 widths scaled by ``width`` (1.0 = 64/64/128/256/512)."""
        base = (64, 128, 256, 512)
        return cls(
            stem_channels=max(1, round(64 * width)),
            stage_channels=tuple(max(1, round(c * width)) for c in base),  # type: ignore[arg-type]
            **overrides,  # type: ignore[arg-type]
        )


class HeadConfig(_Section):
    """Segmentation head on top of the backbone."""

    seg_channels: Optional[int] = Field(
        default=None,
        ge=1,
        description="Width of the pre-concat feature map; defaults to the stage-4 width",
    )
    kernel: int = Field(default=3, ge=1)
    num_classes: int = Field(default=2, ge=2)


class RefinementConfig(_Section):
    """Spatial-temporal refinement network."""

    n: int = Field(default=2, ge=0, description="Temporal radius; windows hold 2n+1 frames")
    encoder_channels: tuple[int, int, int] = Field(default=(32, 64, 128))
    encoder_kernel: int = Field(default=3, ge=1)
    deconv_kernel: int = Field(default=4, ge=2)
    guidance: bool = Field(default=True, description="Feed colour frames as guidance")
    guidance_center_only: bool = Field(default=False, description="Only the centre frame")
    residual_scores: bool = Field(
        default=True,
        description="Add the centre frame's input scores to the decoder output",
    )

    @model_validator(mode="after")
    def _check_channels(self) -> "RefinementConfig":
        if min(self.encoder_channels) < 1:
            raise ValueError("encoder channels must be >= 1")
        if self.deconv_kernel % 2:
            raise ValueError("deconv kernel must be even to double the resolution")
        return self

    @property
    def window(self) -> int:
        return 2 * self.n + 1

    @property
    def guidance_frames(self) -> int:
        if not self.guidance:
            return 0
        return 1 if self.guidance_center_only else self.window

    @property
    def in_channels(self) -> int:
        return self.window * 2 + self.guidance_frames * 3


class PruneSchedule(_Section):
    """Gradual structured filter pruning schedule."""

    step_keep_ratio: float = Field(default=0.9, gt=0.0, le=1.0)
    num_steps: int = Field(default=15, ge=0)
    finetune_iters_per_step: int = Field(default=20, ge=0)
    latency_input_size: tuple[int, int] = Field(default=(97, 97))
    latency_iterations: int = Field(default=3, ge=0)

    @property
    def target_fraction(self) -> float:
        """Cumulative retained fraction ``step_keep_ratio ** num_steps``."""
        return float(self.step_keep_ratio**self.num_steps)


class TrainConfig(_Section):
    """Two-stage training regime. Full-scale values are noted where the desk default differs."""

    batch_size: int = Field(default=4, ge=1, description="Full scale: 16")
    crop: int = Field(default=97, ge=8, description="Full scale: 569")
    base_lr: float = Field(default=1e-3, gt=0.0)
    poly_power: float = Field(default=0.9, ge=0.0)
    epochs_stage1: int = Field(default=40, ge=1)
    epochs_stage2: int = Field(default=10, ge=1)
    iterations: Optional[int] = Field(
        default=None,
        ge=1,
        description="Overrides the epoch-derived iteration count when set",
    )
    refinement_lr_multiplier: float = Field(default=10.0, gt=0.0)
    n: int = Field(default=2, ge=0)
    seed: int = 0
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)
    l2_weight: float = Field(default=1.0, ge=0.0)
    hflip: bool = True
    prefetch: int = Field(default=2, ge=0, description="Bounded queue size; 0 disables")
    ignore_label: int = 255
    log_interval: int = Field(default=10, ge=1)
    freeze_bn_stats: bool = False
    freeze_attenuation: bool = False
    use_attenuation: bool = True
    use_refinement: bool = True
    append_background_samples: bool = Field(
        default=False,
        description="Stage 1 baseline: background samples as all-background images",
    )


class SyntheticSceneSpec(_Section):
    """One synthetic clip: a textured deformable blob moving over a jittered background."""

    clip_id: str
    seed: int
    split: Literal["train", "test"] = "train"
    height: int = Field(default=128, ge=16)
    width: int = Field(default=128, ge=16)
    frames: int = Field(default=12, ge=1)
    bg_samples: int = Field(default=20, ge=1)
    background_family: Literal["stripes", "checker", "noise", "blobs"] = "noise"
    camera_jitter: float = Field(default=3.0, ge=0.0, description="Pixels per frame")
    fg_radius: tuple[float, float] = Field(default=(0.22, 0.3), description="Fraction of size")
    deformation: float = Field(default=0.12, ge=0.0, lt=1.0)
    motion_amplitude: float = Field(default=0.15, ge=0.0, description="Fraction of size")
    texture_share: float = Field(default=0.85, ge=0.0, le=1.0)
    with_distractor: bool = True


class DatasetConfig(_Section):
    """Synthetic ambiguity suite parameters."""

    train_clips: int = Field(default=8, ge=0)
    test_clips: int = Field(default=4, ge=0)
    frames_per_clip: int = Field(default=12, ge=1)
    height: int = Field(default=128, ge=16)
    width: int = Field(default=128, ge=16)
    bg_samples: int = Field(default=20, ge=1)
    texture_share: float = Field(default=0.85, ge=0.0, le=1.0)
    seed: int = 0


class TrimapSpec(_Section):
    """Boundary band for edge-restricted IoU."""

    width: int = Field(ge=1, description="Band half-width in pixels on each side of the boundary")


class EvalConfig(_Section):
    band_widths: tuple[int, ...] = Field(default=(1, 3, 5, 10, 20))

    @model_validator(mode="after")
    def _check_widths(self) -> "EvalConfig":
        if any(w < 1 for w in self.band_widths):
            raise ValueError("band widths must be >= 1")
        return self


class BenchConfig(_Section):
    size: tuple[int, int] = Field(default=(97, 97))
    iterations: int = Field(default=10, ge=0)
    warmup: int = Field(default=2, ge=0)


class CompositeConfig(_Section):
    feather: int = Field(default=2, ge=0)


class PathsConfig(_Section):
    dataset_dir: Path = Path("data/synthetic")
    run_dir: Path = Path("runs/default")
    stage1_checkpoint: Path = Path("runs/default/stage1.bgct")
    pruned_checkpoint: Path = Path("runs/default/pruned.bgct")
    stage2_checkpoint: Path = Path("runs/default/stage2.bgct")


class RunConfig(_Section):
    """All sections of a run configuration file."""

    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    head: HeadConfig = Field(default_factory=HeadConfig)
    refinement: RefinementConfig = Field(default_factory=RefinementConfig)
    prune: PruneSchedule = Field(default_factory=PruneSchedule)
    train: TrainConfig = Field(default_factory=TrainConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    composite: CompositeConfig = Field(default_factory=CompositeConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)


def load_run_config(path: Optional[Path] = None, **overrides: dict) -> RunConfig:
    """Load a run configuration from a TOML file.

    Args:
        path: TOML file; ``None`` yields the documented defaults
        **overrides: Per-section dictionaries merged over the file values

    Returns:
        Validated run configuration

    Raises:
        ConfigError: If the file is missing, malformed or fails validation
    """
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {path}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Invalid TOML in {path}: {e}") from e

    for section, values in overrides.items():
        if values:
            data.setdefault(section, {}).update(values)

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e

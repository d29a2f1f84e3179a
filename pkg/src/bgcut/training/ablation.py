"""Ablation runs: the same splits and seeds trained with components switched on or off."""

from typing import Literal, Optional, Sequence

import numpy as np
import structlog
from pydantic import BaseModel, Field

from bgcut.backbone.graph import ModelGraph
from bgcut.config import RunConfig
from bgcut.errors import PreconditionError
from bgcut.pipeline.evaluation import BandPoint, EvalReport, IoUResult, evaluate
from bgcut.pipeline.models import SegmentationModels
from bgcut.pipeline.segment import segment_clip
from bgcut.training.dataset import VideoClip
from bgcut.training.stage1 import train_stage1
from bgcut.training.stage2 import train_stage2

logger = structlog.get_logger()

Variant = Literal["plain", "background_training", "attenuation", "full"]
VARIANTS: tuple[Variant, ...] = ("plain", "background_training", "attenuation", "full")

# (append background samples in stage 1, attenuation, refinement)
_SWITCHES: dict[str, tuple[bool, bool, bool]] = {
    "plain": (False, False, False),
    "background_training": (True, False, False),
    "attenuation": (False, True, False),
    "full": (False, True, True),
}


class VariantResult(BaseModel):
    variant: str
    seed: int
    iou: IoUResult
    band_curve: list[BandPoint] = Field(default_factory=list)


class AblationReport(BaseModel):
    results: list[VariantResult] = Field(default_factory=list)

    def _runs(self, variant: str) -> list[VariantResult]:
        runs = [r for r in self.results if r.variant == variant]
        if not runs:
            raise PreconditionError(f"no runs for variant {variant!r}")
        return runs

    def mean_iou(self, variant: str) -> float:
        """Mean IoU averaged over seeds."""
        return float(np.mean([r.iou.mean for r in self._runs(variant)]))

    def band_iou(self, variant: str, width: int) -> float:
        """Band IoU at ``width`` averaged over seeds."""
        values = [p.iou for r in self._runs(variant) for p in r.band_curve if p.width == width]
        if not values:
            raise PreconditionError(f"variant {variant!r} has no band IoU at width {width}")
        return float(np.mean(values))

    def summary(self) -> dict[str, float]:
        variants = dict.fromkeys(r.variant for r in self.results)
        return {variant: self.mean_iou(variant) for variant in variants}


def variant_config(config: RunConfig, variant: str, seed: int) -> RunConfig:
    """``config`` with the variant's switches and the given seed."""
    if variant not in _SWITCHES:
        raise PreconditionError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    append, attenuation, refinement = _SWITCHES[variant]
    train = config.train.model_copy(
        update={
            "seed": seed,
            "append_background_samples": append,
            "use_attenuation": attenuation,
            "use_refinement": refinement,
            "freeze_attenuation": False,
        }
    )
    return config.model_copy(update={"train": train})


def evaluate_models(
    models: SegmentationModels, clips: Sequence[VideoClip], band_widths: Sequence[int]
) -> EvalReport:
    """Segment held-out clips with their own background samples and score them."""
    results = [segment_clip(clip, models) for clip in clips]
    return evaluate(
        [r.masks for r in results],
        [clip.masks or [] for clip in clips],
        [clip.clip_id for clip in clips],
        band_widths=band_widths,
    )


def run_variant(
    train_clips: Sequence[VideoClip],
    test_clips: Sequence[VideoClip],
    config: RunConfig,
    variant: str,
    seed: int,
    stage1: Optional[ModelGraph] = None,
) -> VariantResult:
    """Train stage 1 (unless given) and stage 2 for one variant, then evaluate it.

    Every variant runs both stages so training budgets match; without attenuation and
    refinement stage 2 keeps training the plain segmenter on window frames.
    """
    cfg = variant_config(config, variant, seed)
    if stage1 is None:
        stage1 = train_stage1(train_clips, cfg).model
    trained = train_stage2(train_clips, stage1, cfg)
    models = SegmentationModels(
        attenuation=trained.attenuation,
        segmenter=trained.segmenter,
        refinement=trained.refinement,
        n=cfg.refinement.n,
    )
    report = evaluate_models(models, test_clips, config.eval.band_widths)
    logger.info("Variant evaluated", variant=variant, seed=seed, mean_iou=report.mean.mean)
    return VariantResult(variant=variant, seed=seed, iou=report.mean, band_curve=report.band_curve)


def run_ablation(
    train_clips: Sequence[VideoClip],
    test_clips: Sequence[VideoClip],
    config: Optional[RunConfig] = None,
    variants: Sequence[str] = VARIANTS,
    seeds: Sequence[int] = (0, 1, 2),
) -> AblationReport:
    """Train and evaluate each variant for each seed.

    Variants that train stage 1 the same way share one stage-1 model per seed.
    """
    config = config or RunConfig()
    report = AblationReport()
    for seed in seeds:
        stage1_by_switch: dict[bool, ModelGraph] = {}
        for variant in variants:
            cfg = variant_config(config, variant, seed)
            append = cfg.train.append_background_samples
            if append not in stage1_by_switch:
                stage1_by_switch[append] = train_stage1(train_clips, cfg).model
            report.results.append(
                run_variant(
                    train_clips,
                    test_clips,
                    config,
                    variant,
                    seed,
                    stage1=stage1_by_switch[append],
                )
            )
    logger.info("Ablation finished", seeds=list(seeds), **report.summary())
    return report

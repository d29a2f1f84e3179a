"""Two-path segmentation with global background attenuation."""

from bgcut.attenuation.model import (
    AttenuationModel,
    GlobalBackgroundFeature,
    ScoreMap,
    compute_bg_global_feature,
    forward,
    forward_batch,
    predict_mask,
    single_path_scores,
)

__all__ = [
    "AttenuationModel",
    "GlobalBackgroundFeature",
    "ScoreMap",
    "compute_bg_global_feature",
    "forward",
    "forward_batch",
    "predict_mask",
    "single_path_scores",
]

"""Two-path segmentation network with global background attenuation."""

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import structlog

from bgcut.backbone.graph import GraphBuilder, ModelGraph, bias_name, weight_name
from bgcut.backbone.resnet import (
    CLASSIFIER,
    HEAD_FEATURES,
    IMAGE_INPUT,
    SCORES_OUTPUT,
    backbone_output,
)
from bgcut.errors import MissingBackgroundError, ShapeError, StaleFeatureError
from bgcut.tensor import ops
from bgcut.tensor.autograd import ArrayLike, Variable
from bgcut.utils.images import Frame, Mask, to_network

logger = structlog.get_logger()

BG_INPUT = "bg_global"


@dataclass(frozen=True)
class GlobalBackgroundFeature:
    """Mean of globally pooled background-path features over the sample frames."""

    vector: np.ndarray  # 1×C×1×1
    sample_count: int
    fingerprint: str

    @property
    def channels(self) -> int:
        return int(self.vector.shape[1])


@dataclass(frozen=True)
class ScoreMap:
    """Per-pixel (background, foreground) logits of one frame."""

    scores: np.ndarray  # 1×2×H×W
    frame_index: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.scores.shape[2]), int(self.scores.shape[3])

    def probabilities(self) -> np.ndarray:
        return ops.softmax_channel(self.scores).value


class AttenuationModel:
    """Main path (backbone, pre-concat conv, concat with tiled background feature,
    1×1 classifier, bilinear upsample) plus a separate background backbone."""

    def __init__(self, main: ModelGraph, background: ModelGraph) -> None:
        channels = main.channels()
        bg_channels = background.channels()[background.outputs[0]]
        if channels[BG_INPUT] != bg_channels:
            raise ShapeError(
                f"main path expects {channels[BG_INPUT]} background channels, "
                f"background path gives {bg_channels}"
            )
        classifier = main.layer(CLASSIFIER)
        if classifier.in_channels != channels[HEAD_FEATURES] + bg_channels:
            raise ShapeError("classifier inputs must be segmentation plus background channels")
        self.main = main
        self.background = background

    @classmethod
    def from_stage1(cls, segmenter: ModelGraph, seed: int = 0) -> "AttenuationModel":
        """Derive both paths from a trained single-path segmenter.

        The classifier columns reading the background feature start at zero, so the
        derived model initially reproduces the segmenter's scores.
        """
        features = backbone_output(segmenter)
        background = segmenter.subgraph([features], name="background")
        bg_channels = background.channels()[features]

        builder = GraphBuilder.extend(segmenter.subgraph([HEAD_FEATURES], name="attenuation"), seed)
        bg_input = builder.input(BG_INPUT, bg_channels)
        tiled = builder.upsample("bg_tile", bg_input, HEAD_FEATURES, mode="tile")
        joined = builder.concat("head.concat", [HEAD_FEATURES, tiled])
        num_classes = segmenter.layer(CLASSIFIER).out_channels
        logits = builder.conv(CLASSIFIER, joined, num_classes, 1, prunable=False)
        builder.upsample(SCORES_OUTPUT, logits, IMAGE_INPUT, mode="bilinear")

        old_w = segmenter.param(weight_name(CLASSIFIER))
        w = np.zeros_like(builder.params[weight_name(CLASSIFIER)])
        w[:, : old_w.shape[1]] = old_w
        builder.params[weight_name(CLASSIFIER)] = w
        builder.params[bias_name(CLASSIFIER)] = segmenter.param(bias_name(CLASSIFIER)).copy()

        main = builder.build(outputs=(SCORES_OUTPUT,), name="attenuation")
        logger.debug(
            "Derived attenuation model",
            background_channels=bg_channels,
            parameters=main.parameter_count() + background.parameter_count(),
        )
        return cls(main, background)

    @property
    def bg_channels(self) -> int:
        return self.main.layer(BG_INPUT).out_channels

    def parameters(self) -> dict[str, Variable]:
        params = self.main.trainable("main/")
        params.update(self.background.trainable("background/"))
        return params

    def parameter_count(self) -> int:
        return self.main.parameter_count() + self.background.parameter_count()

    def copy(self) -> "AttenuationModel":
        return AttenuationModel(self.main.copy(), self.background.copy())

    def background_features(
        self, images: ArrayLike, training: bool = False, freeze_bn: bool = False
    ) -> Variable:
        """Globally pooled background-path features, N×C×1×1."""
        out = self.background.forward({IMAGE_INPUT: images}, training=training, freeze_bn=freeze_bn)
        return ops.global_avg_pool(out[self.background.outputs[0]])

    def scores(
        self,
        images: ArrayLike,
        bg_global: ArrayLike,
        training: bool = False,
        freeze_bn: bool = False,
    ) -> Variable:
        """Score logits N×2×H×W; ``bg_global`` must be N×C×1×1 (one row per image)."""
        out = self.main.forward(
            {IMAGE_INPUT: images, BG_INPUT: bg_global}, training=training, freeze_bn=freeze_bn
        )
        return out[SCORES_OUTPUT]

    def check_feature(self, feature: GlobalBackgroundFeature) -> None:
        if feature.fingerprint != self.background.fingerprint():
            raise StaleFeatureError(
                "background feature was computed with a different background backbone"
            )


def compute_bg_global_feature(
    bg_frames: Sequence[Frame], model: AttenuationModel
) -> GlobalBackgroundFeature:
    """Average the pooled background-path features of unaligned background samples.

    Samples run one at a time; the per-channel mean sums sorted values in float64, so
    the result does not depend on sample order.

    Raises:
        MissingBackgroundError: If ``bg_frames`` is empty
    """
    if len(bg_frames) == 0:
        raise MissingBackgroundError(
            "no background samples; provide --bg frames or run without attenuation"
        )
    pooled = [
        model.background_features(to_network(frame, model.background.dtype.type)).value
        for frame in bg_frames
    ]
    stacked = np.sort(np.concatenate(pooled, axis=0).astype(np.float64), axis=0)
    vector = (stacked.sum(axis=0, keepdims=True) / len(pooled)).astype(model.background.dtype)
    return GlobalBackgroundFeature(
        vector=vector,
        sample_count=len(pooled),
        fingerprint=model.background.fingerprint(),
    )


def forward_batch(
    frames: Sequence[Frame],
    bg_feat: GlobalBackgroundFeature,
    model: AttenuationModel,
    first_index: int = 0,
) -> list[ScoreMap]:
    """Score a batch of frames against one background feature (inference mode)."""
    model.check_feature(bg_feat)
    if len(frames) == 0:
        return []
    images = to_network(list(frames), model.main.dtype.type)
    bg = np.repeat(bg_feat.vector, images.shape[0], axis=0)
    scores = model.scores(images, bg).value
    return [
        ScoreMap(scores=scores[i : i + 1], frame_index=first_index + i) for i in range(len(frames))
    ]


def forward(
    frame: Frame, bg_feat: GlobalBackgroundFeature, model: AttenuationModel, frame_index: int = 0
) -> ScoreMap:
    """Score one frame.

    Raises:
        StaleFeatureError: If ``bg_feat`` came from a different background backbone
    """
    return forward_batch([frame], bg_feat, model, first_index=frame_index)[0]


def predict_mask(score: Union[ScoreMap, np.ndarray]) -> Mask:
    """Foreground where the foreground logit is strictly larger; ties go to background."""
    scores = score.scores if isinstance(score, ScoreMap) else np.asarray(score)
    if scores.ndim == 4:
        if scores.shape[0] != 1:
            raise ShapeError(f"predict_mask expects one frame, got {scores.shape}")
        scores = scores[0]
    if scores.shape[0] != 2:
        raise ShapeError(f"expected 2 score channels, got {scores.shape}")
    return scores[1] > scores[0]


def single_path_scores(
    frames: Sequence[Frame], segmenter: ModelGraph, first_index: int = 0
) -> list[ScoreMap]:
    """Score frames with a segmenter that has no background path."""
    if len(frames) == 0:
        return []
    images = to_network(list(frames), segmenter.dtype.type)
    scores = segmenter.forward({IMAGE_INPUT: images})[SCORES_OUTPUT].value
    return [
        ScoreMap(scores=scores[i : i + 1], frame_index=first_index + i) for i in range(len(frames))
    ]


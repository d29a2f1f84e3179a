"""ResNet-18-shaped backbone and the single-path segmentation model built on it."""

from typing import Optional

import numpy as np
import structlog

from bgcut.backbone.graph import GraphBuilder, ModelGraph
from bgcut.config import BackboneConfig, HeadConfig
from bgcut.errors import ConfigError

logger = structlog.get_logger()

IMAGE_INPUT = "image"
SCORES_OUTPUT = "scores"
HEAD_FEATURES = "head.relu"
CLASSIFIER = "classifier"


def _basic_block(
    builder: GraphBuilder,
    prefix: str,
    src: str,
    channels: int,
    stride: int,
    dilation: int,
) -> str:
    x = builder.conv(
        f"{prefix}.conv1",
        src,
        channels,
        3,
        stride=stride,
        pad=dilation,
        dilation=dilation,
        bias=False,
    )
    x = builder.batch_norm(f"{prefix}.bn1", x)
    x = builder.relu(f"{prefix}.relu1", x)
    x = builder.conv(
        f"{prefix}.conv2", x, channels, 3, stride=1, pad=dilation, dilation=dilation, bias=False
    )
    x = builder.batch_norm(f"{prefix}.bn2", x)

    shortcut = src
    if stride != 1 or builder.channels(src) != channels:
        shortcut = builder.conv(f"{prefix}.downsample", src, channels, 1, stride=stride, bias=False)
        shortcut = builder.batch_norm(f"{prefix}.downsample_bn", shortcut)

    x = builder.add(f"{prefix}.add", x, shortcut)
    return builder.relu(f"{prefix}.relu2", x)


def _backbone_layers(builder: GraphBuilder, config: BackboneConfig, src: str) -> str:
    x = builder.conv("stem.conv", src, config.stem_channels, 7, stride=2, pad=3, bias=False)
    x = builder.batch_norm("stem.bn", x)
    x = builder.relu("stem.relu", x)
    x = builder.max_pool("stem.pool", x, kernel=3, stride=2, pad=1)

    for stage, (channels, blocks, stride, dilation) in enumerate(
        zip(
            config.stage_channels,
            config.blocks_per_stage,
            config.stage_strides,
            config.dilations,
        ),
        start=1,
    ):
        for block in range(blocks):
            x = _basic_block(
                builder,
                f"layer{stage}.{block}",
                x,
                channels,
                stride=stride if block == 0 else 1,
                dilation=dilation,
            )
    return x


def build_backbone(
    config: Optional[BackboneConfig] = None, seed: int = 0, dtype: type = np.float32
) -> ModelGraph:
    """Build a Light-ResNet feature extractor.

    Args:
        config: Backbone configuration; defaults to the desk-scale widths
        seed: Seed for He-normal weight initialisation
        dtype: Parameter dtype (float64 only for gradient checks)

    Returns:
        Graph with one ``image`` input (3 channels) and the last residual block as output

    """
    config = config or BackboneConfig()

    builder = GraphBuilder(seed, dtype=dtype)
    image = builder.input(IMAGE_INPUT, 3)
    features = _backbone_layers(builder, config, image)
    graph = builder.build(outputs=(features,), name="backbone")

    logger.debug(
        "Built backbone",
        output_stride=config.output_stride,
        stage_channels=config.stage_channels,
        parameters=graph.parameter_count(),
    )
    return graph


def backbone_output(graph: ModelGraph) -> str:
    """Name of the last residual block output in a backbone-derived graph."""
    outputs = [layer.name for layer in graph.layers if layer.name.endswith(".relu2")]
    if not outputs:
        raise ConfigError(f"graph {graph.name} has no residual blocks")
    return outputs[-1]


def build_segmentation_model(
    backbone: Optional[BackboneConfig] = None,
    head: Optional[HeadConfig] = None,
    seed: int = 0,
    dtype: type = np.float32,
) -> ModelGraph:
    """Backbone plus head: 3×3 conv, ReLU, 1×1 classifier, bilinear upsample to input size.

    This is the stage-1 network; the attenuation model is derived from it.
    """
    backbone = backbone or BackboneConfig()
    head = head or HeadConfig()

    builder = GraphBuilder(seed, dtype=dtype)
    image = builder.input(IMAGE_INPUT, 3)
    features = _backbone_layers(builder, backbone, image)

    seg_channels = head.seg_channels or backbone.stage_channels[-1]
    x = builder.conv(
        "head.conv", features, seg_channels, head.kernel, pad=head.kernel // 2, prunable=False
    )
    x = builder.relu(HEAD_FEATURES, x)
    logits = builder.conv(CLASSIFIER, x, head.num_classes, 1, prunable=False, init_std=0.01)
    scores = builder.upsample(SCORES_OUTPUT, logits, image, mode="bilinear")
    return builder.build(outputs=(scores,), name="segmenter")

"""Spatial-temporal refinement: an encoder-decoder over 2n+1 score maps and colour guidance."""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import structlog

from bgcut.attenuation.model import ScoreMap
from bgcut.backbone.graph import GraphBuilder, ModelGraph
from bgcut.config import RefinementConfig
from bgcut.errors import PreconditionError, ShapeError
from bgcut.tensor import ops
from bgcut.tensor.autograd import ArrayLike, Variable, as_variable
from bgcut.utils.images import Frame, to_network

logger = structlog.get_logger()

STACK_INPUT = "stack"
CENTER_INPUT = "center_scores"
REFINED_OUTPUT = "refined"
DOWNSAMPLING = 8


def build_refinement(
    config: Optional[RefinementConfig] = None,
    seed: int = 0,
    dtype: type = np.float32,
    fuse_skips: bool = True,
) -> ModelGraph:
    """Three stride-2 convs, three stride-2 deconvs, same-size maps fused by summation.

    Args:
        config: Window radius, widths, kernels and guidance mode
        seed: Weight initialisation seed
        dtype: Parameter dtype
        fuse_skips: Add encoder maps into the decoder; off only for wiring checks

    Returns:
        Graph with a ``stack`` input (and ``center_scores`` when residual) whose output
        is a 2-channel map at the input resolution
    """
    config = config or RefinementConfig()
    c1, c2, _ = config.encoder_channels
    k = config.encoder_kernel
    dk = config.deconv_kernel
    dpad = (dk - 2) // 2

    builder = GraphBuilder(seed, dtype=dtype)
    x = builder.input(STACK_INPUT, config.in_channels)

    encoded = []
    for i, channels in enumerate(config.encoder_channels, start=1):
        conv = builder.conv(f"enc{i}", x, channels, k, stride=2, pad=k // 2, prunable=False)
        x = builder.relu(f"enc{i}.relu", conv)
        encoded.append(x)
    e1, e2, e3 = encoded

    d1 = builder.deconv("dec1", e3, c2, dk, stride=2, pad=dpad, prunable=False)
    if fuse_skips:
        d1 = builder.add("dec1.add", d1, e2)
    d1 = builder.relu("dec1.relu", d1)

    d2 = builder.deconv("dec2", d1, c1, dk, stride=2, pad=dpad, prunable=False)
    if fuse_skips:
        d2 = builder.add("dec2.add", d2, e1)
    d2 = builder.relu("dec2.relu", d2)

    out = builder.deconv("dec3", d2, 2, dk, stride=2, pad=dpad, prunable=False)
    if config.residual_scores:
        center = builder.input(CENTER_INPUT, 2)
        out = builder.add(REFINED_OUTPUT, out, center)

    graph = builder.build(outputs=(out,), name="refinement")
    logger.debug(
        "Built refinement network",
        in_channels=config.in_channels,
        window=config.window,
        parameters=graph.parameter_count(),
    )
    return graph


def clamped_window(index: int, length: int, n: int) -> list[int]:
    """Frame indices of the 2n+1 window centred on ``index``, replicated at clip edges."""
    if not 0 <= index < length:
        raise PreconditionError(f"frame {index} outside clip of {length} frames")
    return [min(max(index + k, 0), length - 1) for k in range(-n, n + 1)]


@dataclass(frozen=True)
class ScoreStack:
    """Score maps and colour frames of one temporal window, in time order."""

    scores: Sequence[ScoreMap]
    guidance: Sequence[Frame]

    @property
    def center_index(self) -> int:
        return len(self.scores) // 2

    def validate(self) -> None:
        if len(self.scores) % 2 != 1:
            raise ShapeError(f"a window holds 2n+1 score maps, got {len(self.scores)}")
        sizes = {s.shape for s in self.scores}
        sizes.update(tuple(f.shape[:2]) for f in self.guidance)
        if len(sizes) != 1:
            raise ShapeError(f"score maps and guidance frames differ in size: {sorted(sizes)}")
        indices = [s.frame_index for s in self.scores]
        if any(b < a for a, b in zip(indices, indices[1:])):
            raise ShapeError(f"score maps are not in temporal order: {indices}")


def guidance_mode(model: ModelGraph, window: int) -> int:
    """Number of guidance frames the network expects for a window of this length."""
    extra = model.layer(STACK_INPUT).out_channels - 2 * window
    if extra < 0 or extra % 3:
        raise ShapeError(
            f"refinement network takes {model.layer(STACK_INPUT).out_channels} channels, "
            f"which does not fit a {window}-frame window"
        )
    frames = extra // 3
    if frames not in (0, 1, window):
        raise ShapeError(f"cannot feed {frames} guidance frames for a {window}-frame window")
    return frames


def stack_arrays(
    scores: np.ndarray, guidance: np.ndarray, guidance_frames: int
) -> tuple[np.ndarray, np.ndarray]:
    """Assemble network inputs from batched windows.

    Args:
        scores: B×W×2×H×W score logits (W = window length)
        guidance: B×W×3×H×W network-scaled colour frames
        guidance_frames: 0, 1 (centre only) or W

    Returns:
        The B×C×H×W stack and the B×2×H×W centre scores
    """
    b, window, _, h, w = scores.shape
    center = window // 2
    parts = [scores.reshape(b, window * 2, h, w)]
    if guidance_frames == window:
        parts.append(guidance.reshape(b, window * 3, h, w))
    elif guidance_frames == 1:
        parts.append(guidance[:, center])
    return np.concatenate(parts, axis=1), scores[:, center]


def refinement_scores(
    model: ModelGraph,
    stack: ArrayLike,
    center_scores: Optional[ArrayLike] = None,
    training: bool = False,
) -> Variable:
    """Run the network, zero-padding bottom/right to a multiple of 8 and cropping back."""
    stack_var = as_variable(stack)
    _, _, h, w = stack_var.shape
    ph = -h % DOWNSAMPLING
    pw = -w % DOWNSAMPLING

    inputs: dict[str, ArrayLike] = {STACK_INPUT: stack_var}
    if CENTER_INPUT in model.input_names:
        if center_scores is None:
            raise PreconditionError("residual refinement needs the centre scores")
        inputs[CENTER_INPUT] = center_scores
    if ph or pw:
        inputs = {name: ops.pad2d(value, ph, pw) for name, value in inputs.items()}

    out = model.forward(inputs, training=training)[model.outputs[0]]
    if ph or pw:
        out = ops.crop2d(out, 0, 0, h, w)
    return out


def refine(stack: ScoreStack, model: ModelGraph) -> ScoreMap:
    """Refined score map of the window's centre frame.

    Raises:
        ShapeError: If the stack is inconsistent or does not fit the network
    """
    stack.validate()
    window = len(stack.scores)
    frames = guidance_mode(model, window)
    if frames and len(stack.guidance) != window:
        raise ShapeError(f"need {window} guidance frames, got {len(stack.guidance)}")

    dtype = model.dtype.type
    scores = np.concatenate([s.scores for s in stack.scores], axis=0)[None].astype(dtype)
    if frames:
        guidance = to_network(list(stack.guidance), dtype)[None]
    else:
        h, w = stack.scores[0].shape
        guidance = np.zeros((1, window, 3, h, w), dtype=dtype)
    inputs, center = stack_arrays(scores, guidance, frames)
    refined = refinement_scores(model, inputs, center)
    return ScoreMap(scores=refined.value, frame_index=stack.scores[stack.center_index].frame_index)

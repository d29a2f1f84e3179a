"""Stage 2: joint training of the attenuation and refinement networks on temporal windows."""

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import structlog

from bgcut.attenuation.model import AttenuationModel
from bgcut.backbone.graph import ModelGraph
from bgcut.backbone.resnet import IMAGE_INPUT, SCORES_OUTPUT
from bgcut.config import RunConfig
from bgcut.errors import ConfigError, DivergenceError, NonFiniteError
from bgcut.metrics import model_parameters, train_iterations_total, train_loss
from bgcut.refinement.network import build_refinement, guidance_mode, refinement_scores
from bgcut.tensor import SGD, Tape, Variable, l2_loss, one_hot, ops, softmax_ce_loss
from bgcut.training.dataset import VideoClip
from bgcut.training.loader import Stage2Batch, Stage2Batches, prefetch
from bgcut.training.schedule import poly_lr, total_iterations

logger = structlog.get_logger()

REFINEMENT_PREFIX = "refinement/"
SEGMENTER_PREFIX = "segmenter/"


@dataclass
class Stage2Result:
    """Models after stage 2. Exactly one of ``attenuation`` and ``segmenter`` is set."""

    attenuation: Optional[AttenuationModel]
    segmenter: Optional[ModelGraph]
    refinement: Optional[ModelGraph]
    losses: list[dict[str, float]] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.losses)


class _Scorer:
    """Per-frame scores from either the two-path model or a plain segmenter."""

    def __init__(self, attenuation: Optional[AttenuationModel], segmenter: Optional[ModelGraph]):
        self.attenuation = attenuation
        self.segmenter = segmenter

    def parameters(self) -> dict[str, Variable]:
        if self.attenuation is not None:
            return self.attenuation.parameters()
        assert self.segmenter is not None
        return self.segmenter.trainable(SEGMENTER_PREFIX)

    def __call__(self, batch: Stage2Batch, training: bool, freeze_bn: bool) -> Variable:
        b, window = batch.images.shape[:2]
        images = batch.images.reshape(b * window, *batch.images.shape[2:])
        if self.attenuation is None:
            assert self.segmenter is not None
            out = self.segmenter.forward(
                {IMAGE_INPUT: images}, training=training, freeze_bn=freeze_bn
            )
            return out[SCORES_OUTPUT]
        bg = self.attenuation.background_features(
            batch.backgrounds, training=training, freeze_bn=freeze_bn
        )
        # every frame of a window sees its own item's background feature
        bg = ops.index_batch(bg, np.repeat(np.arange(b), window))
        return self.attenuation.scores(images, bg, training=training, freeze_bn=freeze_bn)


def stage2_optimizer(
    scorer_params: dict[str, Variable], refinement: Optional[ModelGraph], config: RunConfig
) -> SGD:
    """SGD over both networks; refinement parameters get ``refinement_lr_multiplier``."""
    train = config.train
    params = dict(scorer_params)
    lr_scale: dict[str, float] = {}
    if refinement is not None:
        refinement_params = refinement.trainable(REFINEMENT_PREFIX)
        params.update(refinement_params)
        lr_scale = {name: train.refinement_lr_multiplier for name in refinement_params}
    return SGD(params, momentum=train.momentum, weight_decay=train.weight_decay, lr_scale=lr_scale)


def _refinement_inputs(
    scores: Variable, batch: Stage2Batch, guidance_frames: int
) -> tuple[Variable, Variable]:
    b, window, _, h, w = batch.images.shape
    center = window // 2
    stacked = ops.reshape(scores, (b, window * 2, h, w))
    center_scores = ops.index_batch(scores, [i * window + center for i in range(b)])
    if guidance_frames == window:
        stacked = ops.concat_channels([stacked, batch.images.reshape(b, window * 3, h, w)])
    elif guidance_frames == 1:
        stacked = ops.concat_channels([stacked, batch.images[:, center]])
    return stacked, center_scores


def _diagnostics(iteration: int, lr: float, recent: deque[float]) -> dict:
    return {"stage": "stage2", "iteration": iteration, "lr": lr, "recent_losses": list(recent)}


def _check_config(config: RunConfig) -> None:
    train = config.train
    if train.use_refinement and train.n != config.refinement.n:
        raise ConfigError(
            f"train.n={train.n} differs from refinement.n={config.refinement.n}; "
            "windows must match the refinement input"
        )
    if train.freeze_attenuation and not train.use_refinement:
        raise ConfigError("freeze_attenuation leaves nothing to train without refinement")


def train_stage2(
    clips: Sequence[VideoClip],
    stage1: ModelGraph,
    config: Optional[RunConfig] = None,
    refinement: Optional[ModelGraph] = None,
    attenuation: Optional[AttenuationModel] = None,
    iterations: Optional[int] = None,
) -> Stage2Result:
    """Jointly train the scoring network and the refinement network.

    The scoring network is the attenuation model derived from ``stage1`` (or the
    segmenter itself when ``use_attenuation`` is off). Its loss is the softmax loss over
    every frame of each window; the refinement loss is the L2 distance between the
    refined probabilities of the centre frame and its one-hot mask, weighted by
    ``l2_weight``. With ``freeze_attenuation`` only the refinement network learns.

    Args:
        clips: Training clips with masks and background samples
        stage1: Trained single-path segmenter (copied, never modified)
        config: Run configuration
        refinement: Refinement network to continue; built from the config if None
        attenuation: Attenuation model to continue; derived from ``stage1`` if None
        iterations: Optimizer steps; defaults to ``train.iterations`` or the epoch count

    Raises:
        ConfigError: If the window settings disagree or nothing is left to train
        DivergenceError: If the loss or a gradient becomes non-finite
    """
    config = config or RunConfig()
    train = config.train
    _check_config(config)

    if train.use_attenuation:
        attenuation = attenuation or AttenuationModel.from_stage1(stage1, seed=train.seed)
        segmenter = None
    else:
        attenuation = None
        segmenter = stage1.copy()
    if train.use_refinement:
        refinement = refinement or build_refinement(config.refinement, seed=train.seed + 1)
        guidance_frames = guidance_mode(refinement, config.refinement.window)
    else:
        refinement = None
        guidance_frames = 0

    result = Stage2Result(attenuation=attenuation, segmenter=segmenter, refinement=refinement)
    source = Stage2Batches(clips, train, seed=train.seed)
    if iterations is None:
        iterations = train.iterations or total_iterations(
            train.epochs_stage2, len(source), train.batch_size
        )
    if iterations == 0:
        return result

    scorer = _Scorer(attenuation, segmenter)
    frozen = train.freeze_attenuation
    optimizer = stage2_optimizer({} if frozen else scorer.parameters(), refinement, config)
    if attenuation is not None:
        model_parameters.labels(model="attenuation").set(attenuation.parameter_count())
    if refinement is not None:
        model_parameters.labels(model="refinement").set(refinement.parameter_count())

    recent: deque[float] = deque(maxlen=10)
    batches = prefetch(iter(source), train.prefetch)
    logger.info(
        "Training started",
        stage="stage2",
        iterations=iterations,
        windows=len(source),
        attenuation=attenuation is not None,
        refinement=refinement is not None,
        frozen_scorer=frozen,
        guidance_frames=guidance_frames,
    )

    try:
        for it in range(iterations):
            batch = next(batches)
            lr = poly_lr(it, iterations, train)
            optimizer.zero_grad()
            try:
                terms = _step(scorer, refinement, batch, config, guidance_frames, optimizer, lr)
            except NonFiniteError as e:
                raise DivergenceError(
                    f"stage2 diverged at iteration {it}: {e}",
                    diagnostics=_diagnostics(it, lr, recent),
                ) from e

            if not math.isfinite(terms["total"]):
                raise DivergenceError(
                    f"stage2 loss is {terms['total']} at iteration {it}",
                    diagnostics=_diagnostics(it, lr, recent),
                )
            result.losses.append(terms)
            recent.append(terms["total"])
            train_iterations_total.labels(stage="stage2").inc()
            train_loss.labels(stage="stage2").set(terms["total"])

            logger.debug("Iteration", stage="stage2", iteration=it, lr=lr, **terms)
            if (it + 1) % train.log_interval == 0 or it + 1 == iterations:
                logger.info("Training progress", stage="stage2", iteration=it + 1, lr=lr, **terms)
    finally:
        batches.close()

    return result


def _step(
    scorer: _Scorer,
    refinement: Optional[ModelGraph],
    batch: Stage2Batch,
    config: RunConfig,
    guidance_frames: int,
    optimizer: SGD,
    lr: float,
) -> dict[str, float]:
    train = config.train
    b, window = batch.images.shape[:2]
    labels = batch.labels.reshape(b * window, *batch.labels.shape[2:])
    frozen = train.freeze_attenuation
    terms: dict[str, float] = {}

    if frozen:
        scores = Variable(scorer(batch, training=False, freeze_bn=True).value)

    with Tape() as tape:
        parts: list[Variable] = []
        if not frozen:
            scores = scorer(batch, training=True, freeze_bn=train.freeze_bn_stats)
            softmax = softmax_ce_loss(scores, labels, train.ignore_label)
            terms["softmax"] = float(softmax.value)
            parts.append(softmax)
        if refinement is not None:
            stack, center = _refinement_inputs(scores, batch, guidance_frames)
            refined = refinement_scores(refinement, stack, center, training=True)
            target = one_hot(np.minimum(batch.labels[:, window // 2], 1), dtype=refined.dtype)
            l2 = l2_loss(ops.softmax_channel(refined), target)
            terms["l2"] = float(l2.value)
            parts.append(ops.scale(l2, train.l2_weight))
        total = ops.add_n(parts)
    tape.backward(total)
    optimizer.step(lr)
    terms["total"] = float(total.value)
    return terms

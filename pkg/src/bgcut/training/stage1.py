"""Stage 1: single-path segmentation training with the softmax loss."""

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import structlog

from bgcut.backbone.graph import ModelGraph
from bgcut.backbone.pruning import FinetuneFn
from bgcut.backbone.resnet import IMAGE_INPUT, SCORES_OUTPUT, build_segmentation_model
from bgcut.config import RunConfig
from bgcut.errors import DivergenceError, NonFiniteError
from bgcut.metrics import model_parameters, train_iterations_total, train_loss
from bgcut.tensor import SGD, Tape, softmax_ce_loss
from bgcut.training.dataset import VideoClip
from bgcut.training.loader import Stage1Batches, prefetch
from bgcut.training.schedule import poly_lr, total_iterations

logger = structlog.get_logger()


@dataclass
class TrainResult:
    model: ModelGraph
    losses: list[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.losses)


def train_stage1(
    clips: Sequence[VideoClip],
    config: Optional[RunConfig] = None,
    model: Optional[ModelGraph] = None,
    iterations: Optional[int] = None,
    seed: Optional[int] = None,
    stage: str = "stage1",
) -> TrainResult:
    """Train a segmenter on individual frames.

    Args:
        clips: Training clips with masks
        config: Run configuration (train, backbone and head sections are used)
        model: Segmenter to continue training in place; built from the config if None
        iterations: Optimizer steps; defaults to ``train.iterations`` or the epoch count
        seed: Sampling seed; defaults to ``train.seed``
        stage: Label for logs and metrics

    Returns:
        The trained model and the per-iteration loss

    Raises:
        DivergenceError: If the loss or a gradient becomes non-finite
    """
    config = config or RunConfig()
    train = config.train
    seed = train.seed if seed is None else seed

    source = Stage1Batches(
        clips, train, seed=seed, append_background=train.append_background_samples
    )
    if model is None:
        model = build_segmentation_model(config.backbone, config.head, seed=train.seed)
    if iterations is None:
        iterations = train.iterations or total_iterations(
            train.epochs_stage1, len(source), train.batch_size
        )

    result = TrainResult(model=model)
    if iterations == 0:
        return result

    model_parameters.labels(model=model.name).set(model.parameter_count())
    optimizer = SGD(model.params, momentum=train.momentum, weight_decay=train.weight_decay)
    recent: deque[float] = deque(maxlen=10)
    batches = prefetch(iter(source), train.prefetch)
    logger.info(
        "Training started",
        stage=stage,
        iterations=iterations,
        samples=len(source),
        parameters=model.parameter_count(),
    )

    try:
        for it in range(iterations):
            batch = next(batches)
            lr = poly_lr(it, iterations, train)
            optimizer.zero_grad()
            try:
                with Tape() as tape:
                    scores = model.forward({IMAGE_INPUT: batch.images}, training=True)
                    loss = softmax_ce_loss(scores[SCORES_OUTPUT], batch.labels, train.ignore_label)
                tape.backward(loss)
                optimizer.step(lr)
            except NonFiniteError as e:
                raise DivergenceError(
                    f"{stage} diverged at iteration {it}: {e}",
                    diagnostics={
                        "stage": stage,
                        "iteration": it,
                        "lr": lr,
                        "recent_losses": list(recent),
                    },
                ) from e

            value = float(loss.value)
            if not math.isfinite(value):
                raise DivergenceError(
                    f"{stage} loss is {value} at iteration {it}",
                    diagnostics={
                        "stage": stage,
                        "iteration": it,
                        "lr": lr,
                        "recent_losses": list(recent),
                    },
                )
            result.losses.append(value)
            recent.append(value)
            train_iterations_total.labels(stage=stage).inc()
            train_loss.labels(stage=stage).set(value)

            logger.debug("Iteration", stage=stage, iteration=it, loss=value, lr=lr)
            if (it + 1) % train.log_interval == 0 or it + 1 == iterations:
                logger.info("Training progress", stage=stage, iteration=it + 1, loss=value, lr=lr)
    finally:
        batches.close()

    return result


def stage1_finetuner(
    clips: Sequence[VideoClip], config: Optional[RunConfig] = None, iterations: Optional[int] = None
) -> FinetuneFn:
    """Fine-tuning callback for pruning: a short stage-1 run per prune step.

    A diverging run reports NaN so the pruning loop stops with its partial report.
    """
    config = config or RunConfig()
    steps = config.prune.finetune_iters_per_step if iterations is None else iterations

    def finetune(model: ModelGraph, step: int) -> Optional[float]:
        try:
            result = train_stage1(
                clips,
                config,
                model=model,
                iterations=steps,
                seed=config.train.seed + step + 1,
                stage="finetune",
            )
        except DivergenceError as e:
            logger.warning("Fine-tuning diverged", step=step, error=str(e))
            return float("nan")
        return result.losses[-1] if result.losses else None

    return finetune

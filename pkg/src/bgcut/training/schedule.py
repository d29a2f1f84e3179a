"""Learning-rate schedule."""

import math
from typing import Optional

from bgcut.config import TrainConfig
from bgcut.errors import PreconditionError


def poly_lr(iteration: int, max_iterations: int, config: Optional[TrainConfig] = None) -> float:
    """``base_lr · (1 − iteration / max_iterations) ** poly_power``.

    Raises:
        PreconditionError: If ``max_iterations`` is not positive or ``iteration`` lies
            outside ``[0, max_iterations]``
    """
    config = config or TrainConfig()
    if max_iterations <= 0:
        raise PreconditionError(f"max_iterations must be positive, got {max_iterations}")
    if not 0 <= iteration <= max_iterations:
        raise PreconditionError(f"iteration {iteration} outside [0, {max_iterations}]")
    return config.base_lr * (1.0 - iteration / max_iterations) ** config.poly_power


def total_iterations(epochs: int, dataset_size: int, batch_size: int) -> int:
    """Epochs times batches per epoch (the last partial batch counts)."""
    return epochs * math.ceil(dataset_size / batch_size)

"""SGD with momentum and weight decay."""

from typing import Mapping, MutableMapping, Optional

import numpy as np

from bgcut.errors import NonFiniteError, PreconditionError
from bgcut.tensor.autograd import Variable


def sgd_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    velocity: MutableMapping[str, np.ndarray],
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
    lr_scale: Optional[Mapping[str, float]] = None,
) -> dict[str, np.ndarray]:
    """One SGD step.

    ``v ← momentum·v + grad + weight_decay·param`` then ``param ← param − lr·scale·v``.
    Velocity buffers are updated in place; new parameter arrays are returned.

    Args:
        params: Current parameter values by name
        grads: Gradients by name (same keys and shapes as ``params``)
        velocity: Momentum buffers by name, created on first use
        lr: Learning rate (0 leaves parameters unchanged)
        momentum: Momentum coefficient
        weight_decay: L2 penalty coefficient
        lr_scale: Optional per-parameter learning-rate multipliers

    Returns:
        Updated parameter values by name

    Raises:
        PreconditionError: If ``lr`` is negative
        NonFiniteError: If any gradient holds NaN or Inf
    """
    if lr < 0:
        raise PreconditionError(f"learning rate must be non-negative, got {lr}")

    updated: dict[str, np.ndarray] = {}
    for name, param in params.items():
        grad = grads[name]
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(param)
        v = momentum * v + grad + weight_decay * param
        velocity[name] = v.astype(param.dtype, copy=False)
        scale = 1.0 if lr_scale is None else lr_scale.get(name, 1.0)
        updated[name] = (param - (lr * scale) * velocity[name]).astype(param.dtype, copy=False)
    return updated


class SGD:
    """Optimizer over named Variables with optional per-parameter lr multipliers."""

    def __init__(
        self,
        params: Mapping[str, Variable],
        momentum: float = 0.9,
        weight_decay: float = 1e-4,
        lr_scale: Optional[Mapping[str, float]] = None,
    ) -> None:
        self.params = dict(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_scale = dict(lr_scale or {})
        self.velocity: dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        for variable in self.params.values():
            variable.zero_grad()

    def step(self, lr: float) -> None:
        values = {name: v.value for name, v in self.params.items()}
        grads = {name: v.grad for name, v in self.params.items()}
        updated = sgd_step(
            values,
            grads,
            self.velocity,
            lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            lr_scale=self.lr_scale,
        )
        for name, value in updated.items():
            self.params[name].value = value

"""Finite-difference gradient checking."""

from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from bgcut.tensor.autograd import Tape, Variable
from bgcut.tensor.ops import weighted_sum

Builder = Callable[[Sequence[Variable]], Variable]


class GradCheckResult(NamedTuple):
    max_relative_error: float
    relative_errors: tuple[float, ...]
    checked_elements: int


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``‖a − n‖ / max(‖a‖, ‖n‖)``, zero when both vanish."""
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric)) / scale


def check_gradients(
    build: Builder,
    inputs: Sequence[np.ndarray],
    step: float = 1e-4,
    seed: int = 0,
    max_elements: Optional[int] = None,
) -> GradCheckResult:
    """Compare tape gradients with central differences at 64-bit precision.

    The output of ``build`` is reduced to a scalar with a fixed random projection so
    every output element contributes.

    Args:
        build: Function from input Variables to an output Variable
        inputs: Input arrays; they are copied to float64
        step: Central-difference step
        seed: Seed for the projection and the element sample
        max_elements: Check at most this many randomly chosen elements per input

    Returns:
        Per-input relative errors and their maximum
    """
    rng = np.random.default_rng(seed)
    variables = [Variable(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]

    projection = rng.standard_normal(build(variables).shape)

    def objective() -> float:
        return float(weighted_sum(build(variables), projection).value)

    with Tape() as tape:
        loss = weighted_sum(build(variables), projection)
    tape.backward(loss)

    errors = []
    checked = 0
    for variable in variables:
        flat = variable.value.reshape(-1)
        indices = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            indices = np.sort(rng.choice(flat.size, size=max_elements, replace=False))

        numeric = np.empty(indices.size)
        for k, i in enumerate(indices):
            original = flat[i]
            flat[i] = original + step
            plus = objective()
            flat[i] = original - step
            minus = objective()
            flat[i] = original
            numeric[k] = (plus - minus) / (2.0 * step)

        analytic = variable.grad.reshape(-1)[indices]
        errors.append(relative_error(analytic, numeric))
        checked += indices.size

    return GradCheckResult(max(errors, default=0.0), tuple(errors), checked)

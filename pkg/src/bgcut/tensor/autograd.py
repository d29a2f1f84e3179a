"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Variable` wraps an array plus its accumulated gradient. Differentiable
operations subclass :class:`Function`; while a :class:`Tape` is active every
operation with a gradient-requiring input is recorded, and ``Tape.backward`` replays
the record in reverse order. Without an active tape nothing is recorded, which is the
inference fast path.
"""

from contextvars import ContextVar
from typing import Any, NamedTuple, Optional, Sequence, Union

import numpy as np
import numpy.typing as npt
import structlog

from bgcut.errors import NonFiniteError, ShapeError


logger = structlog.get_logger()

Tensor = npt.NDArray[np.floating]
ArrayLike = Union["Variable", np.ndarray, float, int]

DEFAULT_DTYPE = np.float32

_active_tape: ContextVar[Optional["Tape"]] = ContextVar("bgcut_active_tape", default=None)


class Variable:
    """A tensor value plus its accumulated gradient."""

    __slots__ = ("value", "_grad", "requires_grad", "name")

    def __init__(
        self,
        value: Union[np.ndarray, float, int],
        requires_grad: bool = False,
        name: Optional[str] = None,
    ) -> None:
        self.value: np.ndarray = np.asarray(value)
        self._grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def grad(self) -> np.ndarray:
        """Accumulated gradient; zeros until something flows in."""
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    @property
    def dtype(self) -> np.dtype:
        return self.value.dtype

    def accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.value.shape:
            raise ShapeError(
                f"gradient shape {grad.shape} does not match value shape {self.value.shape}"
            )
        if self._grad is None:
            self._grad = np.array(grad, dtype=self.value.dtype, copy=True)
        else:
            self._grad += grad

    def zero_grad(self) -> None:
        self._grad = None

    def detach(self) -> "Variable":
        return Variable(self.value, requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return (
            f"Variable{label}(shape={self.shape}, dtype={self.dtype}, "
            f"requires_grad={self.requires_grad})"
        )


def as_variable(x: ArrayLike) -> Variable:
    if isinstance(x, Variable):
        return x
    return Variable(np.asarray(x))


def check_finite(array: np.ndarray, what: str) -> None:
    """Raise NonFiniteError if ``array`` holds NaN or Inf."""
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"non-finite values produced by {what}")


class Function:
    """Base class for differentiable operations.

    Subclasses implement ``forward`` on raw arrays, saving whatever ``backward`` needs on
    ``self``, and ``backward`` returning one gradient (or ``None``) per input.
    """

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *inputs: ArrayLike, **kwargs: Any) -> Variable:
        """Run the forward pass and record it on the active tape when needed."""
        fn = cls()
        variables = [as_variable(x) for x in inputs]
        out = fn.forward(*(v.value for v in variables), **kwargs)
        check_finite(out, cls.__name__)

        requires_grad = any(v.requires_grad for v in variables)
        result = Variable(out, requires_grad=requires_grad)

        tape = _active_tape.get()
        if requires_grad and tape is not None:
            tape.record(fn, variables, result)
        return result


class _Record(NamedTuple):
    function: Function
    inputs: Sequence[Variable]
    output: Variable


class Tape:
    """Ordered record of executed differentiable operations.

    Use as a context manager; the tape is confined to the context that entered it.
    """

    def __init__(self) -> None:
        self.records: list[_Record] = []
        self._token: Any = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc_info: object) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def record(self, function: Function, inputs: Sequence[Variable], output: Variable) -> None:
        self.records.append(_Record(function, inputs, output))

    def backward(self, output: Variable, grad: Optional[np.ndarray] = None) -> None:
        """Propagate gradients from ``output`` to every recorded input.

        Args:
            output: Variable produced while this tape was active (usually a scalar loss)
            grad: Upstream gradient; defaults to ones
        """
        if not output.requires_grad:
            logger.debug("Backward called on a constant, nothing to do")
            return

        seed = np.ones_like(output.value) if grad is None else np.asarray(grad)
        output.accumulate(seed.astype(output.dtype, copy=False))

        for record in reversed(self.records):
            upstream = record.output._grad
            if upstream is None:
                continue
            grads = record.function.backward(upstream)
            for variable, g in zip(record.inputs, grads):
                if g is not None and variable.requires_grad:
                    variable.accumulate(g)

    def clear(self) -> None:
        self.records.clear()


def current_tape() -> Optional[Tape]:
    return _active_tape.get()

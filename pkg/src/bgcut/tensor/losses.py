"""Segmentation losses."""

from typing import Optional

import numpy as np

from bgcut.errors import PreconditionError, ShapeError
from bgcut.tensor.autograd import ArrayLike, Function, Variable

IGNORE_LABEL = 255


class SoftmaxCrossEntropy(Function):
    def forward(  # type: ignore[override]
        self,
        scores: np.ndarray,
        labels: Optional[np.ndarray] = None,
        ignore_label: int = IGNORE_LABEL,
    ) -> np.ndarray:
        if scores.ndim != 4:
            raise ShapeError(f"softmax_ce_loss expects N×C×H×W scores, got {scores.shape}")
        if labels is None:
            raise PreconditionError("softmax_ce_loss needs labels")
        labels = np.asarray(labels)
        n, c, h, w = scores.shape
        if labels.shape != (n, h, w):
            raise ShapeError(f"labels shape {labels.shape} does not match scores {scores.shape}")

        valid = labels != ignore_label
        count = int(valid.sum())
        if count == 0:
            raise PreconditionError("softmax_ce_loss: every pixel is ignored")
        target = np.where(valid, labels, 0).astype(np.int64)
        if target.min() < 0 or target.max() >= c:
            raise PreconditionError(f"labels must lie in [0, {c}) or equal {ignore_label}")

        shifted = scores - scores.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_prob = shifted - log_z
        picked = np.take_along_axis(log_prob, target[:, None], axis=1)[:, 0]

        self.prob = np.exp(log_prob)
        self.target, self.valid, self.count = target, valid, count
        return np.asarray(-(picked * valid).sum() / count, dtype=scores.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        dscores = self.prob.copy()
        one_hot = np.zeros_like(dscores)
        np.put_along_axis(one_hot, self.target[:, None], 1.0, axis=1)
        dscores -= one_hot
        dscores *= self.valid[:, None] * (grad / self.count)
        return (dscores,)


class L2Loss(Function):
    def forward(  # type: ignore[override]
        self, pred: np.ndarray, target: Optional[np.ndarray] = None
    ) -> np.ndarray:
        target = np.asarray(target, dtype=pred.dtype)
        if target.shape != pred.shape:
            raise ShapeError(f"l2_loss needs identical shapes, got {pred.shape} and {target.shape}")
        self.diff = pred - target
        return np.asarray(np.mean(self.diff**2), dtype=pred.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (2.0 * self.diff * (grad / self.diff.size),)


def softmax_ce_loss(
    scores: ArrayLike, labels: np.ndarray, ignore_label: int = IGNORE_LABEL
) -> Variable:
    """Mean negative log-likelihood over non-ignored pixels."""
    return SoftmaxCrossEntropy.apply(scores, labels=labels, ignore_label=ignore_label)


def l2_loss(pred: ArrayLike, target: np.ndarray) -> Variable:
    """Mean squared difference; ``target`` is a constant."""
    return L2Loss.apply(pred, target=target)


def one_hot(labels: np.ndarray, num_classes: int = 2, dtype: np.dtype = np.float32) -> np.ndarray:
    """N×H×W integer labels to an N×C×H×W one-hot map."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes, *labels.shape[1:]), dtype=dtype)
    np.put_along_axis(out, labels[:, None], 1.0, axis=1)
    return out

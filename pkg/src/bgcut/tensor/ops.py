"""Differentiable tensor operations on N×C×H×W activations.

Convolutions are cross-correlations computed by gathering strided kernel taps into a
column tensor and contracting it with the weights through BLAS (``np.tensordot``).
"""

from typing import Literal, Optional, Sequence

import numpy as np

from bgcut.errors import PreconditionError, ShapeError
from bgcut.tensor.autograd import ArrayLike, Function, Variable

BN_MOMENTUM = 0.9
BN_EPS = 1e-5


def conv_output_size(size: int, kernel: int, stride: int, pad: int, dilation: int = 1) -> int:
    """Spatial extent of a convolution output."""
    return (size + 2 * pad - dilation * (kernel - 1) - 1) // stride + 1


def _require_4d(x: np.ndarray, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} expects an N×C×H×W tensor, got shape {x.shape}")


def _im2col(
    xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int, ho: int, wo: int
) -> np.ndarray:
    """Gather kernel taps of a padded input into (N, C, kh, kw, Ho, Wo)."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    h_span = stride * (ho - 1) + 1
    w_span = stride * (wo - 1) + 1
    for i in range(kh):
        hi = i * dilation
        for j in range(kw):
            wj = j * dilation
            cols[:, :, i, j] = xp[:, :, hi : hi + h_span : stride, wj : wj + w_span : stride]
    return cols


def _col2im(
    cols: np.ndarray, padded_shape: tuple[int, ...], stride: int, dilation: int
) -> np.ndarray:
    """Scatter-add kernel taps back to a padded tensor (adjoint of ``_im2col``)."""
    _, _, kh, kw, ho, wo = cols.shape
    xp = np.zeros(padded_shape, dtype=cols.dtype)
    h_span = stride * (ho - 1) + 1
    w_span = stride * (wo - 1) + 1
    for i in range(kh):
        hi = i * dilation
        for j in range(kw):
            wj = j * dilation
            xp[:, :, hi : hi + h_span : stride, wj : wj + w_span : stride] += cols[:, :, i, j]
    return xp


def _pad_hw(x: np.ndarray, pad: int, value: float = 0.0) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=value)


class Conv2d(Function):
    def forward(  # type: ignore[override]
        self,
        x: np.ndarray,
        w: np.ndarray,
        b: np.ndarray,
        stride: int = 1,
        pad: int = 0,
        dilation: int = 1,
    ) -> np.ndarray:
        _require_4d(x, "conv2d")
        if w.ndim != 4:
            raise ShapeError(f"conv2d weight must be Cout×Cin×kh×kw, got {w.shape}")
        n, cin, h, wd = x.shape
        cout, wcin, kh, kw = w.shape
        if wcin != cin:
            raise ShapeError(f"conv2d input has {cin} channels but weight expects {wcin}")
        if b.shape != (cout,):
            raise ShapeError(f"conv2d bias must have shape ({cout},), got {b.shape}")
        if stride < 1 or pad < 0 or dilation < 1:
            raise PreconditionError(
                f"conv2d needs stride>=1, pad>=0, dilation>=1 (got {stride}, {pad}, {dilation})"
            )
        ho = conv_output_size(h, kh, stride, pad, dilation)
        wo = conv_output_size(wd, kw, stride, pad, dilation)
        if ho < 1 or wo < 1:
            raise ShapeError(
                f"conv2d output would be empty for input {x.shape} and kernel {w.shape}"
            )

        xp = _pad_hw(x, pad)
        cols = _im2col(xp, kh, kw, stride, dilation, ho, wo)
        self.cols, self.w = cols, w
        self.padded_shape, self.input_hw = xp.shape, (h, wd)
        self.stride, self.pad, self.dilation = stride, pad, dilation

        out = np.tensordot(cols, w, axes=([1, 2, 3], [1, 2, 3]))  # N, Ho, Wo, Cout
        out = out.transpose(0, 3, 1, 2) + b.reshape(1, cout, 1, 1)
        return np.ascontiguousarray(out, dtype=x.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        dw = np.tensordot(grad, self.cols, axes=([0, 2, 3], [0, 4, 5]))
        db = grad.sum(axis=(0, 2, 3))
        dcols = np.tensordot(grad, self.w, axes=([1], [0]))  # N, Ho, Wo, Cin, kh, kw
        dcols = dcols.transpose(0, 3, 4, 5, 1, 2)
        dxp = _col2im(dcols, self.padded_shape, self.stride, self.dilation)
        h, w = self.input_hw
        dx = dxp[:, :, self.pad : self.pad + h, self.pad : self.pad + w]
        return np.ascontiguousarray(dx), dw.astype(self.w.dtype), db.astype(self.w.dtype)


class ConvTranspose2d(Function):
    def forward(  # type: ignore[override]
        self, x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1, pad: int = 0
    ) -> np.ndarray:
        _require_4d(x, "conv2d_transpose")
        if w.ndim != 4:
            raise ShapeError(f"conv2d_transpose weight must be Cin×Cout×kh×kw, got {w.shape}")
        n, cin, h, wd = x.shape
        wcin, cout, kh, kw = w.shape
        if wcin != cin:
            raise ShapeError(f"conv2d_transpose input has {cin} channels, weight expects {wcin}")
        if b.shape != (cout,):
            raise ShapeError(f"conv2d_transpose bias must have shape ({cout},), got {b.shape}")
        if stride < 1 or pad < 0:
            raise PreconditionError("conv2d_transpose needs stride >= 1 and pad >= 0")
        ho = (h - 1) * stride - 2 * pad + kh
        wo = (wd - 1) * stride - 2 * pad + kw
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d_transpose output extent would be {ho}×{wo}")

        self.x, self.w = x, w
        self.stride, self.pad, self.out_hw = stride, pad, (ho, wo)

        cols = np.tensordot(x, w, axes=([1], [0]))  # N, H, W, Cout, kh, kw
        cols = cols.transpose(0, 3, 4, 5, 1, 2)
        yp = _col2im(cols, (n, cout, ho + 2 * pad, wo + 2 * pad), stride, 1)
        y = yp[:, :, pad : pad + ho, pad : pad + wo] + b.reshape(1, cout, 1, 1)
        return np.ascontiguousarray(y, dtype=x.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        _, _, h, w = self.x.shape
        _, _, kh, kw = self.w.shape
        gcols = _im2col(_pad_hw(grad, self.pad), kh, kw, self.stride, 1, h, w)
        dx = np.tensordot(gcols, self.w, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
        dw = np.tensordot(self.x, gcols, axes=([0, 2, 3], [0, 4, 5]))
        db = grad.sum(axis=(0, 2, 3))
        return np.ascontiguousarray(dx), dw.astype(self.w.dtype), db.astype(self.w.dtype)


class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:  # type: ignore[override]
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.mask,)


class Add(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:  # type: ignore[override]
        if x.shape != y.shape:
            raise ShapeError(f"add needs identical shapes, got {x.shape} and {y.shape}")
        return x + y

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad, grad


class AddN(Function):
    def forward(self, *xs: np.ndarray) -> np.ndarray:  # type: ignore[override]
        for x in xs[1:]:
            if x.shape != xs[0].shape:
                raise ShapeError(f"add_n needs identical shapes, got {xs[0].shape} and {x.shape}")
        self.count = len(xs)
        out = xs[0].copy()
        for x in xs[1:]:
            out += x
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, ...]:
        return (grad,) * self.count


class Scale(Function):
    def forward(self, x: np.ndarray, factor: float = 1.0) -> np.ndarray:  # type: ignore[override]
        self.factor = factor
        return (x * factor).astype(x.dtype, copy=False)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.factor,)


class ConcatChannels(Function):
    def forward(self, *xs: np.ndarray) -> np.ndarray:  # type: ignore[override]
        if not xs:
            raise ShapeError("concat_channels needs at least one tensor")
        for x in xs:
            _require_4d(x, "concat_channels")
        n, _, h, w = xs[0].shape
        for x in xs[1:]:
            if (x.shape[0], x.shape[2], x.shape[3]) != (n, h, w):
                raise ShapeError(
                    f"concat_channels needs equal N,H,W; got {xs[0].shape} and {x.shape}"
                )
        self.splits = np.cumsum([x.shape[1] for x in xs])[:-1]
        return np.concatenate(xs, axis=1)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, ...]:
        return tuple(np.split(grad, self.splits, axis=1))


class BatchNorm(Function):
    def forward(  # type: ignore[override]
        self,
        x: np.ndarray,
        gamma: np.ndarray,
        beta: np.ndarray,
        running_mean: Optional[np.ndarray] = None,
        running_var: Optional[np.ndarray] = None,
        training: bool = False,
        momentum: float = BN_MOMENTUM,
        eps: float = BN_EPS,
    ) -> np.ndarray:
        _require_4d(x, "batch_norm")
        c = x.shape[1]
        if gamma.shape != (c,) or beta.shape != (c,):
            raise ShapeError(f"batch_norm parameters must have shape ({c},)")
        if running_mean is None or running_var is None:
            raise PreconditionError("batch_norm needs running statistics buffers")
        if running_mean.shape != (c,) or running_var.shape != (c,):
            raise ShapeError(f"batch_norm running statistics must have shape ({c},)")

        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            # running statistics are buffers owned by the training context
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mean
            running_var *= momentum
            running_var += (1.0 - momentum) * var
        else:
            mean, var = running_mean, running_var

        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
        self.xhat, self.inv_std, self.gamma, self.training = xhat, inv_std, gamma, training
        out = xhat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)
        return out.astype(x.dtype, copy=False)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        c = grad.shape[1]
        dgamma = (grad * self.xhat).sum(axis=(0, 2, 3))
        dbeta = grad.sum(axis=(0, 2, 3))
        dxhat = grad * self.gamma.reshape(1, c, 1, 1)
        inv_std = self.inv_std.reshape(1, c, 1, 1)
        if self.training:
            count = grad.shape[0] * grad.shape[2] * grad.shape[3]
            dx = (
                inv_std
                / count
                * (
                    count * dxhat
                    - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                    - self.xhat * (dxhat * self.xhat).sum(axis=(0, 2, 3), keepdims=True)
                )
            )
        else:
            dx = dxhat * inv_std
        dtype = self.gamma.dtype
        return dx.astype(grad.dtype, copy=False), dgamma.astype(dtype), dbeta.astype(dtype)


class MaxPool2d(Function):
    def forward(  # type: ignore[override]
        self, x: np.ndarray, kernel: int = 3, stride: int = 2, pad: int = 1
    ) -> np.ndarray:
        _require_4d(x, "max_pool2d")
        if pad >= kernel:
            raise PreconditionError("max_pool2d padding must be smaller than the kernel")
        n, c, h, w = x.shape
        ho = conv_output_size(h, kernel, stride, pad)
        wo = conv_output_size(w, kernel, stride, pad)
        if ho < 1 or wo < 1:
            raise ShapeError(f"max_pool2d output would be empty for input {x.shape}")
        xp = _pad_hw(x, pad, value=-np.inf)
        cols = _im2col(xp, kernel, kernel, stride, 1, ho, wo).reshape(n, c, kernel * kernel, ho, wo)
        self.argmax = cols.argmax(axis=2)[:, :, None]
        self.padded_shape, self.input_hw = xp.shape, (h, w)
        self.kernel, self.stride, self.pad = kernel, stride, pad
        return np.take_along_axis(cols, self.argmax, axis=2)[:, :, 0]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        n, c, ho, wo = grad.shape
        k = self.kernel
        dcols = np.zeros((n, c, k * k, ho, wo), dtype=grad.dtype)
        np.put_along_axis(dcols, self.argmax, grad[:, :, None], axis=2)
        dxp = _col2im(dcols.reshape(n, c, k, k, ho, wo), self.padded_shape, self.stride, 1)
        h, w = self.input_hw
        return (np.ascontiguousarray(dxp[:, :, self.pad : self.pad + h, self.pad : self.pad + w]),)


class GlobalAvgPool(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:  # type: ignore[override]
        _require_4d(x, "global_avg_pool")
        self.shape = x.shape
        return x.mean(axis=(2, 3), keepdims=True).astype(x.dtype, copy=False)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        _, _, h, w = self.shape
        return (np.broadcast_to(grad / (h * w), self.shape).copy(),)


def bilinear_matrix(src: int, dst: int, dtype: np.dtype = np.float32) -> np.ndarray:
    """Interpolation matrix (dst × src) for align-corners-false bilinear resampling."""
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, None)
    i0 = np.minimum(np.floor(pos).astype(np.int64), src - 1)
    i1 = np.minimum(i0 + 1, src - 1)
    frac = pos - i0
    matrix = np.zeros((dst, src), dtype=np.float64)
    rows = np.arange(dst)
    np.add.at(matrix, (rows, i0), 1.0 - frac)
    np.add.at(matrix, (rows, i1), frac)
    return matrix.astype(dtype)


class Upsample(Function):
    def forward(  # type: ignore[override]
        self,
        x: np.ndarray,
        target_h: int = 1,
        target_w: int = 1,
        mode: Literal["tile", "bilinear"] = "bilinear",
    ) -> np.ndarray:
        _require_4d(x, "upsample")
        n, c, h, w = x.shape
        if target_h < h or target_w < w:
            raise ShapeError(f"upsample cannot downscale {h}×{w} to {target_h}×{target_w}")
        self.mode, self.shape = mode, x.shape
        if mode == "tile":
            if (h, w) != (1, 1):
                raise ShapeError(f"tile upsampling broadcasts 1×1 maps, got {h}×{w}")
            return np.broadcast_to(x, (n, c, target_h, target_w)).copy()
        if mode != "bilinear":
            raise PreconditionError(f"unknown upsample mode: {mode}")
        self.mh = bilinear_matrix(h, target_h, x.dtype)
        self.mw = bilinear_matrix(w, target_w, x.dtype)
        return np.matmul(np.matmul(self.mh, x), self.mw.T)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        if self.mode == "tile":
            return (grad.sum(axis=(2, 3), keepdims=True),)
        return (np.matmul(np.matmul(self.mh.T, grad), self.mw),)


class SoftmaxChannel(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:  # type: ignore[override]
        _require_4d(x, "softmax_channel")
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=1, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        s = self.out
        return (s * (grad - (grad * s).sum(axis=1, keepdims=True)),)


class Pad2d(Function):
    def forward(  # type: ignore[override]
        self, x: np.ndarray, bottom: int = 0, right: int = 0
    ) -> np.ndarray:
        _require_4d(x, "pad2d")
        if bottom < 0 or right < 0:
            raise PreconditionError("pad2d amounts must be non-negative")
        self.hw = x.shape[2:]
        return np.pad(x, ((0, 0), (0, 0), (0, bottom), (0, right)))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        h, w = self.hw
        return (np.ascontiguousarray(grad[:, :, :h, :w]),)


class Crop2d(Function):
    def forward(  # type: ignore[override]
        self, x: np.ndarray, top: int = 0, left: int = 0, height: int = 1, width: int = 1
    ) -> np.ndarray:
        _require_4d(x, "crop2d")
        if top < 0 or left < 0 or top + height > x.shape[2] or left + width > x.shape[3]:
            raise ShapeError(f"crop {top},{left},{height}×{width} exceeds tensor {x.shape}")
        self.shape, self.box = x.shape, (top, left, height, width)
        return np.ascontiguousarray(x[:, :, top : top + height, left : left + width])

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        top, left, height, width = self.box
        dx = np.zeros(self.shape, dtype=grad.dtype)
        dx[:, :, top : top + height, left : left + width] = grad
        return (dx,)


class Reshape(Function):
    def forward(  # type: ignore[override]
        self, x: np.ndarray, shape: tuple[int, ...] = ()
    ) -> np.ndarray:
        self.shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError as e:
            raise ShapeError(f"cannot reshape {x.shape} to {shape}") from e

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.reshape(self.shape),)


class IndexBatch(Function):
    def forward(  # type: ignore[override]
        self, x: np.ndarray, indices: Sequence[int] = ()
    ) -> np.ndarray:
        self.shape, self.indices = x.shape, np.asarray(indices, dtype=np.int64)
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= x.shape[0]):
            raise ShapeError(f"batch indices out of range for batch of {x.shape[0]}")
        return x[self.indices]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        dx = np.zeros(self.shape, dtype=grad.dtype)
        np.add.at(dx, self.indices, grad)
        return (dx,)


class WeightedSum(Function):
    def forward(  # type: ignore[override]
        self, x: np.ndarray, weights: Optional[np.ndarray] = None
    ) -> np.ndarray:
        self.weights = np.ones_like(x) if weights is None else np.asarray(weights, dtype=x.dtype)
        if self.weights.shape != x.shape:
            raise ShapeError(f"weights shape {self.weights.shape} does not match {x.shape}")
        return np.asarray((x * self.weights).sum(), dtype=x.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.weights,)


def conv2d(
    x: ArrayLike,
    w: ArrayLike,
    b: Optional[ArrayLike] = None,
    stride: int = 1,
    pad: int = 0,
    dilation: int = 1,
) -> Variable:
    """2-D cross-correlation. Weight layout Cout×Cin×kh×kw."""
    if b is None:
        wv = w.value if isinstance(w, Variable) else np.asarray(w)
        b = np.zeros(wv.shape[0], dtype=wv.dtype)
    return Conv2d.apply(x, w, b, stride=stride, pad=pad, dilation=dilation)


def conv2d_transpose(
    x: ArrayLike, w: ArrayLike, b: Optional[ArrayLike] = None, stride: int = 1, pad: int = 0
) -> Variable:
    """Transposed convolution (adjoint of conv2d). Weight layout Cin×Cout×kh×kw."""
    if b is None:
        wv = w.value if isinstance(w, Variable) else np.asarray(w)
        b = np.zeros(wv.shape[1], dtype=wv.dtype)
    return ConvTranspose2d.apply(x, w, b, stride=stride, pad=pad)


def relu(x: ArrayLike) -> Variable:
    return ReLU.apply(x)


def add(x: ArrayLike, y: ArrayLike) -> Variable:
    return Add.apply(x, y)


def add_n(xs: Sequence[ArrayLike]) -> Variable:
    """Elementwise sum of any number of same-shaped tensors."""
    if not xs:
        raise PreconditionError("add_n needs at least one input")
    return AddN.apply(*xs)


def scale(x: ArrayLike, factor: float) -> Variable:
    return Scale.apply(x, factor=factor)


def concat_channels(xs: Sequence[ArrayLike]) -> Variable:
    return ConcatChannels.apply(*xs)


def batch_norm(
    x: ArrayLike,
    gamma: ArrayLike,
    beta: ArrayLike,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool = False,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Variable:
    """Batch normalisation over N, H, W.

    In training mode batch statistics normalise the input and the running buffers are
    updated in place (``running ← momentum·running + (1−momentum)·batch``); in inference
    mode the running buffers are used.
    """
    return BatchNorm.apply(
        x,
        gamma,
        beta,
        running_mean=running_mean,
        running_var=running_var,
        training=training,
        momentum=momentum,
        eps=eps,
    )


def max_pool2d(x: ArrayLike, kernel: int = 3, stride: int = 2, pad: int = 1) -> Variable:
    return MaxPool2d.apply(x, kernel=kernel, stride=stride, pad=pad)


def global_avg_pool(x: ArrayLike) -> Variable:
    return GlobalAvgPool.apply(x)


def upsample(
    x: ArrayLike, target_h: int, target_w: int, mode: Literal["tile", "bilinear"] = "bilinear"
) -> Variable:
    return Upsample.apply(x, target_h=target_h, target_w=target_w, mode=mode)


def softmax_channel(x: ArrayLike) -> Variable:
    return SoftmaxChannel.apply(x)


def pad2d(x: ArrayLike, bottom: int, right: int) -> Variable:
    """Zero-pad the bottom and right edges."""
    return Pad2d.apply(x, bottom=bottom, right=right)


def crop2d(x: ArrayLike, top: int, left: int, height: int, width: int) -> Variable:
    return Crop2d.apply(x, top=top, left=left, height=height, width=width)


def reshape(x: ArrayLike, shape: tuple[int, ...]) -> Variable:
    return Reshape.apply(x, shape=tuple(shape))


def index_batch(x: ArrayLike, indices: Sequence[int]) -> Variable:
    """Gather items along the batch axis (indices may repeat)."""
    return IndexBatch.apply(x, indices=tuple(indices))


def weighted_sum(x: ArrayLike, weights: Optional[np.ndarray] = None) -> Variable:
    """Scalar ``sum(x * weights)``; plain sum when ``weights`` is None."""
    return WeightedSum.apply(x, weights=weights)

"""PNG frame and mask I/O plus conversion to network input."""

from pathlib import Path
from typing import Sequence, Union

import cv2
import numpy as np

from bgcut.errors import DatasetError, ShapeError

Frame = np.ndarray  # H×W×3 uint8, RGB
Mask = np.ndarray  # H×W bool, True = foreground


def read_image(path: Union[str, Path]) -> Frame:
    """Read an 8-bit colour image as RGB."""
    image = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if image is None:
        raise DatasetError("cannot decode image", path=str(path))
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)


def write_image(path: Union[str, Path], frame: Frame) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(np.ascontiguousarray(frame), cv2.COLOR_RGB2BGR)):
        raise DatasetError("cannot write image", path=str(path))


def read_mask(path: Union[str, Path]) -> Mask:
    """Read an 8-bit mask; any value above 127 is foreground."""
    mask = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if mask is None:
        raise DatasetError("cannot decode mask", path=str(path))
    return mask > 127


def write_mask(path: Union[str, Path], mask: Mask) -> None:
    """Write a mask as 8-bit PNG with values {0, 255}."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), np.where(mask, 255, 0).astype(np.uint8)):
        raise DatasetError("cannot write mask", path=str(path))


def resize_image(frame: Frame, height: int, width: int) -> Frame:
    if frame.shape[:2] == (height, width):
        return frame
    return cv2.resize(frame, (width, height), interpolation=cv2.INTER_LINEAR)


def to_network(frames: Union[Frame, Sequence[Frame]], dtype: type = np.float32) -> np.ndarray:
    """RGB uint8 frames to an N×3×H×W array scaled to [-1, 1]."""
    batch = np.asarray(frames)
    if batch.ndim == 3:
        batch = batch[None]
    if batch.ndim != 4 or batch.shape[-1] != 3:
        raise ShapeError(f"expected H×W×3 frames, got {batch.shape}")
    return (batch.transpose(0, 3, 1, 2).astype(dtype) / 127.5 - 1.0).astype(dtype)

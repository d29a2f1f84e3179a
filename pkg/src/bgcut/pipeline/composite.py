"""Background replacement with a feathered mask."""

from typing import Sequence

import cv2
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from bgcut.errors import ShapeError
from bgcut.utils.images import Frame, Mask, resize_image


class CompositeSpec(BaseModel):
    """Replacement background and edge feathering radius."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    background: np.ndarray = Field(description="H×W×3 uint8 replacement image")
    feather: int = Field(default=2, ge=0, description="Box-blur radius in pixels")

    @field_validator("background")
    @classmethod
    def _check_background(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 3 or value.shape[2] != 3:
            raise ValueError(f"background must be H×W×3, got {value.shape}")
        return value


def feather_alpha(mask: Mask, radius: int) -> np.ndarray:
    """Float alpha in [0, 1]: the binary mask box-blurred with a (2r+1)² kernel."""
    alpha = np.asarray(mask, dtype=np.float32)
    if radius == 0:
        return alpha
    size = 2 * radius + 1
    return cv2.blur(alpha, (size, size), borderType=cv2.BORDER_REPLICATE)


def composite(frame: Frame, mask: Mask, spec: CompositeSpec) -> Frame:
    """``α·frame + (1 − α)·background`` with the background resized to the frame."""
    h, w = frame.shape[:2]
    if mask.shape != (h, w):
        raise ShapeError(f"mask {mask.shape} does not match frame {frame.shape}")
    background = resize_image(spec.background, h, w).astype(np.float32)
    alpha = feather_alpha(mask, spec.feather)[..., None]
    blended = alpha * frame.astype(np.float32) + (1.0 - alpha) * background
    return np.clip(np.round(blended), 0, 255).astype(np.uint8)


def composite_clip(
    frames: Sequence[Frame], masks: Sequence[Mask], spec: CompositeSpec
) -> list[Frame]:
    if len(frames) != len(masks):
        raise ShapeError(f"{len(masks)} masks for {len(frames)} frames")
    return [composite(frame, mask, spec) for frame, mask in zip(frames, masks)]

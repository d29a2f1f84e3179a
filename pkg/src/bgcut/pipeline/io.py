"""Frame and mask directories."""

from pathlib import Path
from typing import Optional, Sequence, Union

import structlog

from bgcut.errors import DatasetError
from bgcut.utils.images import Frame, Mask, read_image, read_mask, resize_image, write_mask

logger = structlog.get_logger()


def _pngs(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise DatasetError("not a directory", path=str(directory))
    return sorted(directory.glob("*.png"))


def load_background_samples(
    directory: Union[str, Path], size: Optional[tuple[int, int]] = None
) -> list[Frame]:
    """Every PNG of a directory in name order, resized to ``size`` (H, W) when given.

    Samples need not be aligned with the clip they describe.
    """
    directory = Path(directory)
    frames = [read_image(path) for path in _pngs(directory)]
    if size is not None:
        frames = [resize_image(frame, *size) for frame in frames]
    logger.debug("Loaded background samples", directory=str(directory), count=len(frames))
    return frames


def read_frames(directory: Union[str, Path]) -> list[Frame]:
    return [read_image(path) for path in _pngs(Path(directory))]


def read_masks(directory: Union[str, Path]) -> list[Mask]:
    return [read_mask(path) for path in _pngs(Path(directory))]


def write_masks(directory: Union[str, Path], masks: Sequence[Mask]) -> list[Path]:
    """Write ``NNNN.png`` masks with values {0, 255}."""
    directory = Path(directory)
    paths = []
    for t, mask in enumerate(masks):
        path = directory / f"{t:04d}.png"
        write_mask(path, mask)
        paths.append(path)
    return paths

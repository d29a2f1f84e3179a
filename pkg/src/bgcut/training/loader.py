"""Mini-batch sampling with random crop, horizontal flip and optional prefetching."""

import queue
import threading
from dataclasses import dataclass
from typing import Generator, Iterator, Sequence, TypeVar

import numpy as np
import structlog

from bgcut.config import TrainConfig
from bgcut.errors import DatasetError, PreconditionError
from bgcut.refinement.network import clamped_window
from bgcut.training.dataset import VideoClip
from bgcut.utils.images import to_network

logger = structlog.get_logger()

T = TypeVar("T")


def crop_offsets(
    height: int, width: int, crop: int, rng: np.random.Generator
) -> tuple[int, int]:
    """Top-left corner of a ``crop``×``crop`` patch lying fully inside the frame."""
    if crop > min(height, width):
        raise PreconditionError(f"crop {crop} exceeds frame {height}×{width}")
    return int(rng.integers(0, height - crop + 1)), int(rng.integers(0, width - crop + 1))


def crop(array: np.ndarray, top: int, left: int, size: int) -> np.ndarray:
    return array[top : top + size, left : left + size]


@dataclass
class Stage1Batch:
    images: np.ndarray  # N×3×c×c
    labels: np.ndarray  # N×c×c uint8


@dataclass
class Stage2Batch:
    images: np.ndarray  # B×W×3×c×c
    labels: np.ndarray  # B×W×c×c
    backgrounds: np.ndarray  # B×3×c×c


def _require_masks(clips: Sequence[VideoClip]) -> None:
    if not clips:
        raise DatasetError("training split is empty")
    for clip in clips:
        if clip.masks is None:
            raise DatasetError(f"clip {clip.clip_id} has no masks")


class Stage1Batches:
    """Endless shuffled image/mask batches; each epoch is a fresh permutation.

    With ``append_background`` the clips' background samples join the pool as
    all-background images.
    """

    def __init__(
        self,
        clips: Sequence[VideoClip],
        config: TrainConfig,
        seed: int,
        append_background: bool = False,
    ) -> None:
        _require_masks(clips)
        self.config = config
        self.seed = seed
        self.items: list[tuple[np.ndarray, np.ndarray]] = []
        for clip in clips:
            assert clip.masks is not None
            self.items.extend(zip(clip.frames, clip.masks))
            if append_background:
                empty = np.zeros(clip.size, dtype=bool)
                self.items.extend((bg, empty) for bg in clip.backgrounds)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[Stage1Batch]:
        cfg = self.config
        epoch = 0
        while True:
            rng = np.random.default_rng([self.seed, epoch])
            order = rng.permutation(len(self.items))
            for start in range(0, len(order), cfg.batch_size):
                images, labels = [], []
                for index in order[start : start + cfg.batch_size]:
                    frame, mask = self.items[index]
                    top, left = crop_offsets(*mask.shape, cfg.crop, rng)
                    image = crop(frame, top, left, cfg.crop)
                    label = crop(mask, top, left, cfg.crop)
                    if cfg.hflip and rng.random() < 0.5:
                        image, label = image[:, ::-1], label[:, ::-1]
                    images.append(image)
                    labels.append(label)
                yield Stage1Batch(
                    images=to_network(np.stack(images)),
                    labels=np.stack(labels).astype(np.uint8),
                )
            epoch += 1


class Stage2Batches:
    """Endless batches of temporal windows plus one random background sample per item.

    All frames of a window share crop offsets and flip; the background sample is cropped
    independently since samples are not aligned with the clip.
    """

    def __init__(self, clips: Sequence[VideoClip], config: TrainConfig, seed: int) -> None:
        _require_masks(clips)
        for clip in clips:
            if not clip.backgrounds:
                raise DatasetError(f"clip {clip.clip_id} has no background samples")
        self.clips = list(clips)
        self.config = config
        self.seed = seed
        self.items = [(c, t) for c, clip in enumerate(self.clips) for t in range(len(clip))]

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[Stage2Batch]:
        cfg = self.config
        epoch = 0
        while True:
            rng = np.random.default_rng([self.seed, epoch])
            order = rng.permutation(len(self.items))
            for start in range(0, len(order), cfg.batch_size):
                images, labels, backgrounds = [], [], []
                for index in order[start : start + cfg.batch_size]:
                    c, t = self.items[index]
                    clip = self.clips[c]
                    assert clip.masks is not None
                    window = clamped_window(t, len(clip), cfg.n)
                    h, w = clip.size
                    top, left = crop_offsets(h, w, cfg.crop, rng)
                    flip = cfg.hflip and rng.random() < 0.5
                    frames = np.stack([crop(clip.frames[i], top, left, cfg.crop) for i in window])
                    masks = np.stack([crop(clip.masks[i], top, left, cfg.crop) for i in window])

                    bg = clip.backgrounds[int(rng.integers(0, len(clip.backgrounds)))]
                    bg_top, bg_left = crop_offsets(h, w, cfg.crop, rng)
                    bg = crop(bg, bg_top, bg_left, cfg.crop)
                    if flip:
                        frames, masks = frames[:, :, ::-1], masks[:, :, ::-1]
                    images.append(to_network(frames))
                    labels.append(masks)
                    backgrounds.append(to_network(bg)[0])
                yield Stage2Batch(
                    images=np.stack(images),
                    labels=np.stack(labels).astype(np.uint8),
                    backgrounds=np.stack(backgrounds),
                )
            epoch += 1


_DONE = object()


def prefetch(batches: Iterator[T], size: int) -> Generator[T, None, None]:
    """Produce batches on a background thread into a bounded queue.

    ``size`` 0 returns the iterator unchanged. Order is preserved, so results do not
    depend on prefetching.
    """
    if size <= 0:
        yield from batches
        return

    buffer: queue.Queue = queue.Queue(maxsize=size)
    stop = threading.Event()

    def produce() -> None:
        try:
            for item in batches:
                while not stop.is_set():
                    try:
                        buffer.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
        except BaseException as e:  # surfaced in the consumer
            buffer.put(e)
            return
        buffer.put(_DONE)

    worker = threading.Thread(target=produce, name="bgcut-prefetch", daemon=True)
    worker.start()
    try:
        while True:
            item = buffer.get()
            if item is _DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()

"""Dataset manifests, clip loading and synthetic dataset generation."""

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Sequence, Union

import numpy as np
import structlog
from pydantic import BaseModel, ValidationError

from bgcut.config import DatasetConfig, SyntheticSceneSpec
from bgcut.errors import DatasetError, ShapeError
from bgcut.training.synthetic import SceneRenderer
from bgcut.utils.images import Frame, Mask, read_image, read_mask, write_image, write_mask

logger = structlog.get_logger()

BACKGROUND_FAMILIES = ("stripes", "checker", "noise", "blobs")


class FileEntry(BaseModel):
    path: str
    sha256: str


class ClipManifest(BaseModel):
    """Files of one clip; paths are relative to the manifest's directory."""

    clip_id: str
    split: Literal["train", "test"]
    height: int
    width: int
    frames: list[FileEntry]
    masks: list[FileEntry]
    backgrounds: list[FileEntry]


class SplitManifest(BaseModel):
    split: Literal["train", "test"]
    clips: list[ClipManifest]


@dataclass
class VideoClip:
    """Frames with optional ground-truth masks and unaligned background samples."""

    frames: list[Frame]
    masks: Optional[list[Mask]] = None
    backgrounds: list[Frame] = field(default_factory=list)
    clip_id: str = "clip"
    fps_hint: float = 25.0

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def size(self) -> tuple[int, int]:
        return int(self.frames[0].shape[0]), int(self.frames[0].shape[1])

    def validate(self) -> None:
        """Raise ShapeError unless frames, masks and backgrounds share one size."""
        if not self.frames:
            raise ShapeError(f"clip {self.clip_id} has no frames")
        h, w = self.size
        for frame in [*self.frames, *self.backgrounds]:
            if frame.shape != (h, w, 3):
                raise ShapeError(f"clip {self.clip_id}: frame {frame.shape} != {(h, w, 3)}")
        if self.masks is not None:
            if len(self.masks) != len(self.frames):
                raise ShapeError(
                    f"clip {self.clip_id}: {len(self.masks)} masks for {len(self.frames)} frames"
                )
            for mask in self.masks:
                if mask.shape != (h, w):
                    raise ShapeError(f"clip {self.clip_id}: mask {mask.shape} != {(h, w)}")


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def scene_specs(config: DatasetConfig) -> list[SyntheticSceneSpec]:
    """Deterministic scene specs for the train and test splits of a dataset config."""
    rng = np.random.default_rng(config.seed)
    specs = []
    for split, count in (("train", config.train_clips), ("test", config.test_clips)):
        for i in range(count):
            specs.append(
                SyntheticSceneSpec(
                    clip_id=f"{split}_{i:03d}",
                    seed=int(rng.integers(0, 2**31 - 1)),
                    split=split,
                    height=config.height,
                    width=config.width,
                    frames=config.frames_per_clip,
                    bg_samples=config.bg_samples,
                    background_family=BACKGROUND_FAMILIES[i % len(BACKGROUND_FAMILIES)],
                    texture_share=config.texture_share,
                )
            )
    return specs


def render_clip(spec: SyntheticSceneSpec) -> VideoClip:
    """Render a clip in memory."""
    renderer = SceneRenderer(spec)
    rendered = [renderer.frame(t) for t in range(spec.frames)]
    return VideoClip(
        frames=[frame for frame, _ in rendered],
        masks=[mask for _, mask in rendered],
        backgrounds=[renderer.background_sample(k) for k in range(spec.bg_samples)],
        clip_id=spec.clip_id,
    )


def _write_clip(clip: VideoClip, split: str, out_dir: Path) -> ClipManifest:
    base = Path(split) / clip.clip_id
    entries: dict[str, list[FileEntry]] = {"frames": [], "masks": [], "backgrounds": []}

    def record(kind: str, rel: Path) -> None:
        entries[kind].append(FileEntry(path=rel.as_posix(), sha256=sha256_file(out_dir / rel)))

    for t, frame in enumerate(clip.frames):
        rel = base / "frames" / f"{t:04d}.png"
        write_image(out_dir / rel, frame)
        record("frames", rel)
    for t, mask in enumerate(clip.masks or []):
        rel = base / "masks" / f"{t:04d}.png"
        write_mask(out_dir / rel, mask)
        record("masks", rel)
    for k, bg in enumerate(clip.backgrounds):
        rel = base / "background" / f"{k:04d}.png"
        write_image(out_dir / rel, bg)
        record("backgrounds", rel)

    h, w = clip.size
    return ClipManifest(
        clip_id=clip.clip_id, split=split, height=h, width=w, **entries  # type: ignore[arg-type]
    )


def manifest_path(root: Union[str, Path], split: str) -> Path:
    return Path(root) / f"manifest_{split}.json"


def generate_dataset(
    specs: Sequence[SyntheticSceneSpec], out_dir: Union[str, Path]
) -> dict[str, SplitManifest]:
    """Render clips to PNG files and write one manifest per split.

    Args:
        specs: Scene specs; their ``split`` decides the manifest
        out_dir: Dataset root

    Returns:
        Manifests by split

    Raises:
        DatasetError: On any I/O failure, naming the offending path
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetError("cannot create dataset directory", path=str(out_dir)) from e

    manifests: dict[str, SplitManifest] = {}
    for spec in specs:
        clip = render_clip(spec)
        try:
            entry = _write_clip(clip, spec.split, out_dir)
        except OSError as e:
            raise DatasetError(f"cannot write clip {spec.clip_id}", path=e.filename) from e
        manifests.setdefault(spec.split, SplitManifest(split=spec.split, clips=[]))
        manifests[spec.split].clips.append(entry)
        logger.info(
            "Generated clip",
            clip_id=spec.clip_id,
            split=spec.split,
            frames=spec.frames,
            bg_samples=spec.bg_samples,
            family=spec.background_family,
        )

    for split, manifest in manifests.items():
        path = manifest_path(out_dir, split)
        try:
            path.write_text(manifest.model_dump_json(indent=2) + "\n")
        except OSError as e:
            raise DatasetError("cannot write manifest", path=str(path)) from e
    return manifests


def load_manifest(path: Union[str, Path]) -> SplitManifest:
    path = Path(path)
    try:
        return SplitManifest.model_validate_json(path.read_text())
    except OSError as e:
        raise DatasetError("cannot read manifest", path=str(path)) from e
    except ValidationError as e:
        raise DatasetError(f"invalid manifest ({e.error_count()} errors)", path=str(path)) from e


def _check(root: Path, entry: FileEntry, verify: bool) -> Path:
    path = root / entry.path
    if not path.is_file():
        raise DatasetError("missing dataset file", path=str(path))
    if verify and sha256_file(path) != entry.sha256:
        raise DatasetError("checksum mismatch", path=str(path))
    return path


def load_clip(entry: ClipManifest, root: Union[str, Path], verify: bool = True) -> VideoClip:
    """Decode one manifest clip, checking existence, checksums and dimensions."""
    root = Path(root)
    clip = VideoClip(
        frames=[read_image(_check(root, f, verify)) for f in entry.frames],
        masks=[read_mask(_check(root, m, verify)) for m in entry.masks] or None,
        backgrounds=[read_image(_check(root, b, verify)) for b in entry.backgrounds],
        clip_id=entry.clip_id,
    )
    try:
        clip.validate()
    except ShapeError as e:
        raise DatasetError(str(e), path=str(root / entry.clip_id)) from e
    if clip.size != (entry.height, entry.width):
        raise DatasetError(
            f"clip {entry.clip_id} is {clip.size}, manifest says {(entry.height, entry.width)}",
            path=str(root),
        )
    return clip


def load_split(path: Union[str, Path], verify: bool = True) -> list[VideoClip]:
    """Load every clip listed in a split manifest."""
    path = Path(path)
    manifest = load_manifest(path)
    return [load_clip(entry, path.parent, verify=verify) for entry in manifest.clips]


"""Inference model bundle: scoring network, optional refinement network and window radius."""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import structlog

from bgcut.attenuation.model import AttenuationModel
from bgcut.backbone.checkpoint import load_bundle, save_bundle
from bgcut.backbone.graph import ModelGraph
from bgcut.errors import CheckpointError, PreconditionError
from bgcut.refinement.network import guidance_mode

logger = structlog.get_logger()

ATTENUATION_GROUP = "attenuation"
BACKGROUND_GROUP = "background"
SEGMENTER_GROUP = "segmenter"
REFINEMENT_GROUP = "refinement"
WINDOW_RADIUS = "n"


@dataclass
class SegmentationModels:
    """Exactly one of ``attenuation`` and ``segmenter`` scores frames."""

    attenuation: Optional[AttenuationModel] = None
    segmenter: Optional[ModelGraph] = None
    refinement: Optional[ModelGraph] = None
    n: int = 0

    def __post_init__(self) -> None:
        if (self.attenuation is None) == (self.segmenter is None):
            raise PreconditionError("need exactly one of an attenuation model and a segmenter")
        if self.n < 0:
            raise PreconditionError(f"window radius must be >= 0, got {self.n}")
        if self.refinement is not None:
            guidance_mode(self.refinement, self.window)

    @property
    def window(self) -> int:
        return 2 * self.n + 1

    @property
    def guidance_frames(self) -> int:
        return 0 if self.refinement is None else guidance_mode(self.refinement, self.window)

    @property
    def dtype(self) -> np.dtype:
        scorer = self.attenuation.main if self.attenuation is not None else self.segmenter
        assert scorer is not None
        return scorer.dtype

    def groups(self) -> dict[str, ModelGraph]:
        groups: dict[str, ModelGraph] = {}
        if self.attenuation is not None:
            groups[ATTENUATION_GROUP] = self.attenuation.main
            groups[BACKGROUND_GROUP] = self.attenuation.background
        if self.segmenter is not None:
            groups[SEGMENTER_GROUP] = self.segmenter
        if self.refinement is not None:
            groups[REFINEMENT_GROUP] = self.refinement
        return groups

    def save(self, path: Union[str, Path]) -> int:
        return save_bundle(
            self.groups(), path, extra={WINDOW_RADIUS: np.array([self.n], dtype=np.int64)}
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SegmentationModels":
        """Read a bundle written by :meth:`save`.

        A checkpoint holding only a stage-1 segmenter (group ``segmenter`` or ``model``)
        loads as a single-path bundle without refinement.

        Raises:
            CheckpointError: If the file is unreadable or lacks a scoring network
        """
        groups, extra = load_bundle(path)
        n = int(extra[WINDOW_RADIUS][0]) if WINDOW_RADIUS in extra else 0
        refinement = groups.get(REFINEMENT_GROUP)

        if ATTENUATION_GROUP in groups:
            if BACKGROUND_GROUP not in groups:
                raise CheckpointError(f"{path}: attenuation model without background path")
            attenuation = AttenuationModel(groups[ATTENUATION_GROUP], groups[BACKGROUND_GROUP])
            return cls(attenuation=attenuation, refinement=refinement, n=n)

        segmenter = groups.get(SEGMENTER_GROUP, groups.get("model"))
        if segmenter is None:
            raise CheckpointError(f"{path}: no scoring network among groups {sorted(groups)}")
        return cls(segmenter=segmenter, refinement=refinement, n=n)

"""Spatial-temporal refinement network."""

from bgcut.refinement.network import (
    ScoreStack,
    build_refinement,
    clamped_window,
    guidance_mode,
    refine,
    refinement_scores,
    stack_arrays,
)

__all__ = [
    "ScoreStack",
    "build_refinement",
    "clamped_window",
    "guidance_mode",
    "refine",
    "refinement_scores",
    "stack_arrays",
]

"""Run metadata written next to training outputs."""

import subprocess
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Union

import structlog
from pydantic import BaseModel, Field

from bgcut import __version__
from bgcut.config import BackboneConfig, RunConfig

logger = structlog.get_logger()

RUN_METADATA = "run_metadata.json"


class Substitution(BaseModel):
    """A desk-scale value standing in for the full-scale setting."""

    setting: str
    desk: Any
    full_scale: Any


class RunMetadata(BaseModel):
    stage: str
    seed: int
    commit: str
    version: str = __version__
    created_at: str = Field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds")
    )
    config: dict[str, Any]
    substitutions: list[Substitution]
    extra: dict[str, Any] = Field(default_factory=dict)


def commit_hash(cwd: Optional[Path] = None) -> str:
    """Current git commit, or ``"unknown"`` outside a repository."""
    try:
        result = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=cwd,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return result.stdout.strip() or "unknown"


def substitutions(config: RunConfig) -> list[Substitution]:
    full = BackboneConfig.resnet18()
    width = config.backbone.stage_channels[-1] / full.stage_channels[-1]
    return [
        Substitution(setting="crop", desk=config.train.crop, full_scale=569),
        Substitution(setting="batch_size", desk=config.train.batch_size, full_scale=16),
        Substitution(setting="backbone_width", desk=round(width, 4), full_scale=1.0),
        Substitution(setting="epochs_stage1", desk=config.train.epochs_stage1, full_scale=40),
    ]


def write_run_metadata(
    run_dir: Union[str, Path],
    config: RunConfig,
    stage: str,
    extra: Optional[dict[str, Any]] = None,
) -> Path:
    """Write ``run_metadata.json`` with the full config, seed, commit and substitutions."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    metadata = RunMetadata(
        stage=stage,
        seed=config.train.seed,
        commit=commit_hash(),
        config=config.model_dump(mode="json"),
        substitutions=substitutions(config),
        extra=extra or {},
    )
    path = run_dir / RUN_METADATA
    path.write_text(metadata.model_dump_json(indent=2) + "\n")
    logger.info("Wrote run metadata", path=str(path), stage=stage, commit=metadata.commit)
    return path

"""Structured logging for bgcut commands and training loops.

Every module logs through ``structlog.get_logger()``; this module decides how the
events are rendered. Training code logs numpy scalars (losses, learning rates,
IoU values) directly, so the chain converts them to plain Python numbers before
rendering.
"""

import logging
import sys
from contextlib import contextmanager
from typing import Any, Iterator

import numpy as np
import structlog
from structlog.types import EventDict, Processor

from bgcut.errors import ConfigError

LOG_FORMATS = ("console", "json")


def add_log_level(logger: Any, method_name: str, event_dict: EventDict) -> EventDict:
    """Add log level to event dict."""
    if method_name == "warn":
        method_name = "warning"
    event_dict["level"] = method_name.upper()
    return event_dict


def numpy_to_builtin(logger: Any, method_name: str, event_dict: EventDict) -> EventDict:
    """Replace numpy scalars and small arrays with builtin values."""
    for key, value in event_dict.items():
        if isinstance(value, np.generic):
            event_dict[key] = value.item()
        elif isinstance(value, np.ndarray) and value.size <= 16:
            event_dict[key] = value.tolist()
        elif isinstance(value, np.ndarray):
            event_dict[key] = f"<array shape={value.shape} dtype={value.dtype}>"
    return event_dict


def setup_logging(log_level: str = "INFO", log_format: str = "console") -> None:
    """Route structlog through stdlib logging on stderr.

    Args:
        log_level: DEBUG logs every training iteration; INFO every log interval
        log_format: "console" for people, "json" for log collectors
    """
    if log_format not in LOG_FORMATS:
        raise ConfigError(f"log format must be one of {LOG_FORMATS}, got {log_format!r}")
    level = logging.getLevelName(log_level.upper())
    if not isinstance(level, int):
        raise ConfigError(f"unknown log level {log_level!r}")

    # stdout is reserved for JSON written by commands without --out
    logging.basicConfig(format="%(message)s", stream=sys.stderr, level=level, force=True)

    processors: list[Processor] = [
        structlog.contextvars.merge_contextvars,
        structlog.stdlib.filter_by_level,
        structlog.stdlib.add_logger_name,
        add_log_level,
        numpy_to_builtin,
        structlog.processors.TimeStamper(fmt="iso", utc=True),
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
    ]
    if log_format == "json":
        processors.append(structlog.processors.JSONRenderer(sort_keys=True))
    else:
        processors.append(structlog.dev.ConsoleRenderer(colors=sys.stderr.isatty()))

    structlog.configure(
        processors=processors,
        wrapper_class=structlog.stdlib.BoundLogger,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )


@contextmanager
def run_context(**values: Any) -> Iterator[None]:
    """Attach ``values`` (command, stage, clip id) to every event logged inside the block."""
    with structlog.contextvars.bound_contextvars(**values):
        yield

"""Unit tests for logging configuration."""

import numpy as np
import pytest
import structlog

from bgcut.errors import ConfigError
from bgcut.logging import add_log_level, numpy_to_builtin, run_context, setup_logging


@pytest.mark.unit
def test_setup_logging_info():
    """Test logging setup with INFO level."""
    setup_logging(log_level="INFO", log_format="console")

    assert isinstance(structlog.get_config()["processors"][-1], structlog.dev.ConsoleRenderer)


@pytest.mark.unit
def test_setup_logging_json():
    """Test the json format ends the chain with a JSON renderer."""
    setup_logging(log_level="DEBUG", log_format="json")

    processors = structlog.get_config()["processors"]
    assert isinstance(processors[-1], structlog.processors.JSONRenderer)
    assert add_log_level in processors


@pytest.mark.unit
def test_add_log_level_normalises_warn():
    """Test the deprecated warn alias is reported as WARNING."""
    assert add_log_level(None, "warn", {})["level"] == "WARNING"
    assert add_log_level(None, "debug", {})["level"] == "DEBUG"


@pytest.mark.unit
@pytest.mark.parametrize(("level", "fmt"), [("LOUD", "console"), ("INFO", "xml")])
def test_setup_logging_rejects_unknown_values(level, fmt):
    """Test unknown levels and formats are configuration errors."""
    with pytest.raises(ConfigError):
        setup_logging(log_level=level, log_format=fmt)


@pytest.mark.unit
def test_numpy_values_become_builtins():
    """Test numpy scalars and small arrays are rendered as plain numbers."""
    event = numpy_to_builtin(
        None,
        "info",
        {"loss": np.float32(0.5), "kept": np.int64(58), "shape": np.array([1, 2])},
    )

    assert event["loss"] == 0.5 and type(event["loss"]) is float
    assert type(event["kept"]) is int
    assert event["shape"] == [1, 2]


@pytest.mark.unit
def test_large_arrays_are_summarised():
    """Test big arrays are logged by shape instead of contents."""
    event = numpy_to_builtin(None, "info", {"scores": np.zeros((1, 2, 8, 8), np.float32)})

    assert event["scores"] == "<array shape=(1, 2, 8, 8) dtype=float32>"


@pytest.mark.unit
def test_run_context_binds_values():
    """Test values are attached inside the block and removed after it."""
    with run_context(command="infer"):
        assert structlog.contextvars.get_contextvars()["command"] == "infer"

    assert "command" not in structlog.contextvars.get_contextvars()

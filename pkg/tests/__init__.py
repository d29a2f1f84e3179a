"""Tests for bgcut."""

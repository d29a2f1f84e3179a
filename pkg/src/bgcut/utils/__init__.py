"""Image I/O and timing helpers."""

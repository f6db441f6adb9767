"""Stress-level detection from smartphone accelerometer streams."""

__version__ = "0.1.0"

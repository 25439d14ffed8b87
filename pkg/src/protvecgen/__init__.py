"""Segment-based multi-label protein function prediction toolkit."""

__version__ = "0.1.0"

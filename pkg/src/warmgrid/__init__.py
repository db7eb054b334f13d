"""Warm-container orchestration over a Chord-style overlay, with a deterministic simulator."""

__version__ = "0.1.0"

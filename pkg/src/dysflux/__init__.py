"""Disfluency-aware forced alignment, detection, simulation, and evaluation."""

__version__ = "0.1.0"

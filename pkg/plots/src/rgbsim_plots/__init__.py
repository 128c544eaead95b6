"""Batch figure rendering for rgbsim CSV outputs."""

__version__ = "0.1.0"

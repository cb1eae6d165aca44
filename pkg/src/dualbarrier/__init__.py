"""Weighted point selection with two-sided frame-bound certificates."""

__version__ = "0.1.0"

"""Chebyshev graph convolutional detection of false data injection attacks."""

__version__ = "0.1.0"

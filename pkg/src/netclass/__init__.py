"""Classify whole networks by embedding them as images and training a small CNN."""

__version__ = "0.1.0"

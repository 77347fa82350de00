"""Desk-scale image/instruction triplet pipeline and tiny token-based image model."""

__version__ = "0.1.0"

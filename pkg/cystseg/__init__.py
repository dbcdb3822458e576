"""Cyst instance segmentation, evaluation and phenotyping package."""

__all__ = []

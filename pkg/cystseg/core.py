"""Raster types and geometry shared by the pipeline.

Grids are plain 2-D numpy arrays in C (row-major) order:

* ScoreMap   -- floating point confidences in [0, 1]
* BinaryMask -- ``bool``
* LabelMap   -- ``int32``; 0 is background, 1..N are instances

Operations never modify their inputs; they return new arrays.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ValidationError

LABEL_DTYPE = np.int32
SCORE_DTYPE = np.float64


class TileOrigin(NamedTuple):
    """Top-left pixel offset of a tile within its image."""

    row: int
    col: int


def check_grid(grid: np.ndarray, name: str = "grid", channels: bool = False) -> np.ndarray:
    """Return ``grid`` as an array after checking it is a non-empty raster.

    With ``channels`` a trailing channel axis (H x W x C) is accepted.
    """
    arr = np.asarray(grid)
    ndims = (2, 3) if channels else (2,)
    if arr.ndim not in ndims or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"{name} must be a non-empty 2-D grid, got shape {arr.shape}")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValidationError(f"{what}: dimension mismatch {a.shape} vs {b.shape}")


def check_scores(scores: np.ndarray, name: str = "score map") -> np.ndarray:
    """Validate that every value is finite and inside [0, 1]."""
    arr = check_grid(scores, name)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(SCORE_DTYPE)
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError(
            f"{name} has values outside [0, 1] (min={np.nanmin(arr)}, max={np.nanmax(arr)})"
        )
    return arr


def as_label_map(labels: np.ndarray) -> np.ndarray:
    arr = check_grid(labels, "label map")
    if not np.issubdtype(arr.dtype, np.integer) and arr.dtype != bool:
        raise ValidationError(f"label map must be integer typed, got {arr.dtype}")
    if arr.size and arr.min() < 0:
        raise ValidationError("label map contains negative labels")
    return arr.astype(LABEL_DTYPE, copy=False)


def crop(grid: np.ndarray, origin: TileOrigin, h: int, w: int) -> np.ndarray:
    """Copy the ``h`` x ``w`` window whose top-left corner is ``origin``."""
    arr = check_grid(grid, channels=True)
    row, col = origin
    if h < 1 or w < 1 or row < 0 or col < 0 or row + h > arr.shape[0] or col + w > arr.shape[1]:
        raise ValidationError(
            f"crop window {h}x{w} at origin ({row}, {col}) exceeds grid {arr.shape[0]}x{arr.shape[1]}"
        )
    return arr[row : row + h, col : col + w].copy()


def paste(grid: np.ndarray, tile: np.ndarray, origin: TileOrigin) -> np.ndarray:
    """Return a copy of ``grid`` with ``tile`` written at ``origin``."""
    arr = check_grid(grid)
    h, w = check_grid(tile, "tile").shape
    row, col = origin
    if row < 0 or col < 0 or row + h > arr.shape[0] or col + w > arr.shape[1]:
        raise ValidationError(
            f"paste window {h}x{w} at origin ({row}, {col}) exceeds grid {arr.shape[0]}x{arr.shape[1]}"
        )
    out = arr.copy()
    out[row : row + h, col : col + w] = tile
    return out


def compact_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber nonzero labels 1..N in order of first appearance (row-major).

    Background stays 0. Idempotent, and two pixels share a label afterwards
    iff they shared one before.
    """
    arr = as_label_map(labels)
    flat = arr.ravel()
    values, first_index, inverse = np.unique(flat, return_index=True, return_inverse=True)
    ranks = np.zeros(values.shape[0], dtype=LABEL_DTYPE)
    nonzero = np.flatnonzero(values != 0)
    order = nonzero[np.argsort(first_index[nonzero], kind="stable")]
    ranks[order] = np.arange(1, order.shape[0] + 1, dtype=LABEL_DTYPE)
    return ranks[inverse.ravel()].reshape(arr.shape)

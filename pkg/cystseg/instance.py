"""Turn stitched cyst/boundary score maps into an instance label map.

The steps are threshold, boundary exclusion, connected-component labeling,
orphan merging and the minimal-size filter, in that order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage as ndi

from .core import LABEL_DTYPE, as_label_map, check_grid, check_same_shape, compact_labels
from .errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineParams:
    cyst_threshold: float = 0.5
    boundary_threshold: float = 0.5
    min_size: int = 500
    connectivity: int = 8

    def __post_init__(self) -> None:
        for name in ("cyst_threshold", "boundary_threshold"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValidationError(f"{name} must lie in (0, 1), got {value}")
        if self.min_size < 1:
            raise ValidationError(f"min_size must be >= 1, got {self.min_size}")
        if self.connectivity not in (4, 8):
            raise ValidationError(f"connectivity must be 4 or 8, got {self.connectivity}")


def structure_for(connectivity: int) -> np.ndarray:
    if connectivity == 8:
        return np.ones((3, 3), dtype=bool)
    if connectivity == 4:
        return ndi.generate_binary_structure(2, 1)
    raise ValidationError(f"connectivity must be 4 or 8, got {connectivity}")


def binarize(scores: np.ndarray, threshold: float) -> np.ndarray:
    """Foreground where score >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must lie in (0, 1), got {threshold}")
    return check_grid(scores, "score map") >= threshold


def label_components(mask: np.ndarray, connectivity: int = 8) -> np.ndarray:
    labels, _ = ndi.label(check_grid(mask, "mask").astype(bool, copy=False), structure=structure_for(connectivity))
    return compact_labels(labels)


def separate_and_label(cyst: np.ndarray, boundary: np.ndarray, connectivity: int = 8) -> np.ndarray:
    """Label the components of (cyst AND NOT boundary); excluded pixels stay 0."""
    cyst = check_grid(cyst, "cyst mask").astype(bool, copy=False)
    boundary = check_grid(boundary, "boundary mask").astype(bool, copy=False)
    check_same_shape(cyst, boundary, "separate_and_label")
    return label_components(cyst & ~boundary, connectivity)


@lru_cache(maxsize=4096)
def _ring_offsets(dist2: int) -> np.ndarray:
    """Integer offsets (dr, dc) with dr**2 + dc**2 == dist2."""
    limit = int(np.floor(np.sqrt(dist2)))
    found = []
    for dr in range(-limit, limit + 1):
        rest = dist2 - dr * dr
        dc = int(round(np.sqrt(rest)))
        if dc * dc == rest:
            found.append((dr, dc))
            if dc:
                found.append((dr, -dc))
    return np.array(found, dtype=np.int64).reshape(-1, 2)


def merge_orphans(labels: np.ndarray, cyst: np.ndarray, connectivity: int = 8) -> np.ndarray:
    """Give every unlabeled cyst pixel the label of its nearest labeled pixel.

    Distances are Euclidean and measured against the pre-merge instances only.
    When several instances sit at the same distance the smallest label wins.
    If there are no instances at all, orphans are labeled as fresh components.
    """
    labels = as_label_map(labels)
    cyst = check_grid(cyst, "cyst mask").astype(bool, copy=False)
    check_same_shape(labels, cyst, "merge_orphans")
    orphans = cyst & (labels == 0)
    if not orphans.any():
        return labels.copy()
    if not labels.any():
        logger.debug("No instances to merge into; labeling %d orphans as new components", int(orphans.sum()))
        return label_components(orphans, connectivity)

    _, (near_r, near_c) = ndi.distance_transform_edt(labels == 0, return_indices=True)
    rows, cols = np.nonzero(orphans)
    dist2 = (rows - near_r[rows, cols]).astype(np.int64) ** 2 + (cols - near_c[rows, cols]).astype(np.int64) ** 2

    h, w = labels.shape
    chosen = np.empty(rows.shape[0], dtype=LABEL_DTYPE)
    sentinel = np.iinfo(LABEL_DTYPE).max
    for d2 in np.unique(dist2):
        sel = np.flatnonzero(dist2 == d2)
        ring = _ring_offsets(int(d2))
        rr = rows[sel, None] + ring[None, :, 0]
        cc = cols[sel, None] + ring[None, :, 1]
        inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        found = np.where(inside, labels[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)], 0)
        found = np.where(found > 0, found, sentinel)
        chosen[sel] = found.min(axis=1)

    out = labels.copy()
    out[rows, cols] = chosen
    return out


def filter_small(labels: np.ndarray, min_size: int) -> np.ndarray:
    """Drop instances with area < min_size and re-compact the survivors."""
    labels = as_label_map(labels)
    if min_size < 1:
        raise ValidationError(f"min_size must be >= 1, got {min_size}")
    areas = np.bincount(labels.ravel())
    small = areas < min_size
    small[0] = False
    out = labels.copy()
    if small.any():
        out[small[labels]] = 0
        logger.debug("Removed %d instances below %d pixels", int(np.count_nonzero(small & (areas > 0))), min_size)
    return compact_labels(out)


def segment(cyst_scores: np.ndarray, boundary_scores: np.ndarray, params: PipelineParams | None = None) -> np.ndarray:
    """Full instance extraction from a pair of image-level score maps."""
    params = params or PipelineParams()
    cyst_scores = check_grid(cyst_scores, "cyst score map")
    boundary_scores = check_grid(boundary_scores, "boundary score map")
    check_same_shape(cyst_scores, boundary_scores, "segment")
    cyst = binarize(cyst_scores, params.cyst_threshold)
    boundary = binarize(boundary_scores, params.boundary_threshold)
    labels = separate_and_label(cyst, boundary, params.connectivity)
    labels = merge_orphans(labels, cyst, params.connectivity)
    return filter_small(labels, params.min_size)

"""Binary morphology with disk structuring elements and boundary-map construction."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import FrozenSet, Tuple

import numpy as np
from scipy import ndimage as ndi

from .core import as_label_map, check_grid
from .errors import ValidationError

BOUNDARY_RADIUS = 2


@dataclass(frozen=True)
class DiskElement:
    """Discrete disk: offsets (dr, dc) with dr**2 + dc**2 <= radius**2."""

    radius: int
    offsets: FrozenSet[Tuple[int, int]] = field(init=False, repr=False, compare=False)
    footprint: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValidationError(f"disk radius must be an integer >= 1, got {self.radius}")
        r = int(self.radius)
        dr, dc = np.mgrid[-r : r + 1, -r : r + 1]
        footprint = dr * dr + dc * dc <= r * r
        footprint.setflags(write=False)
        offsets = frozenset(
            (int(a), int(b)) for a, b in zip(dr[footprint], dc[footprint])
        )
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "footprint", footprint)


@lru_cache(maxsize=16)
def disk(radius: int) -> DiskElement:
    return DiskElement(radius)


def _as_mask(mask: np.ndarray) -> np.ndarray:
    return check_grid(mask, "mask").astype(bool, copy=False)


def dilate(mask: np.ndarray, se: DiskElement) -> np.ndarray:
    """Pixel is set iff some set pixel lies within the disk; outside counts as 0."""
    return ndi.binary_dilation(_as_mask(mask), structure=se.footprint, border_value=0)


def erode(mask: np.ndarray, se: DiskElement) -> np.ndarray:
    """Pixel is set iff the whole disk lands on set pixels; the image border erodes."""
    return ndi.binary_erosion(_as_mask(mask), structure=se.footprint, border_value=0)


def boundary_map(labels: np.ndarray, radius: int = BOUNDARY_RADIUS) -> np.ndarray:
    """Union over instances of (dilated instance AND NOT eroded instance).

    Each instance is processed inside its bounding box grown by ``radius + 1``
    so adjacent instances keep their seam.
    """
    arr = as_label_map(labels)
    se = disk(radius)
    out = np.zeros(arr.shape, dtype=bool)
    margin = radius + 1
    h, w = arr.shape
    for index, box in enumerate(ndi.find_objects(arr), start=1):
        if box is None:
            continue
        r0 = max(box[0].start - margin, 0)
        r1 = min(box[0].stop + margin, h)
        c0 = max(box[1].start - margin, 0)
        c1 = min(box[1].stop + margin, w)
        local = arr[r0:r1, c0:c1] == index
        band = dilate(local, se) & ~erode(local, se)
        out[r0:r1, c0:c1] |= band
    return out

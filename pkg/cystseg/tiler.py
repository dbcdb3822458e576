"""Split images into overlapping fixed-size tiles and stitch tile scores back."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .core import SCORE_DTYPE, TileOrigin, check_grid, crop
from .errors import ValidationError

logger = logging.getLogger(__name__)

DEFAULT_TILE = 512
DEFAULT_OVERLAP = 64


class FusionRule(enum.Enum):
    AVERAGE = "average"
    MAXIMUM = "maximum"


# Canonical head -> fusion mapping.
CYST_FUSION = FusionRule.AVERAGE
BOUNDARY_FUSION = FusionRule.MAXIMUM


@dataclass(frozen=True)
class TilingPlan:
    """Tile origins covering an image.

    Images smaller than the tile along an axis are reflect-padded up to the
    tile size; ``padded_h``/``padded_w`` give the plane the origins refer to.
    """

    image_h: int
    image_w: int
    tile_h: int
    tile_w: int
    overlap: int
    origins: Tuple[TileOrigin, ...]

    @property
    def padded_h(self) -> int:
        return max(self.image_h, self.tile_h)

    @property
    def padded_w(self) -> int:
        return max(self.image_w, self.tile_w)

    def __len__(self) -> int:
        return len(self.origins)


def _axis_origins(image: int, tile: int, stride: int) -> List[int]:
    if image <= tile:
        return [0]
    # final origin clamped so every tile keeps the full size
    return list(range(0, image - tile, stride)) + [image - tile]


def plan_tiling(
    image_h: int,
    image_w: int,
    tile_h: int = DEFAULT_TILE,
    tile_w: int = DEFAULT_TILE,
    overlap: int = DEFAULT_OVERLAP,
) -> TilingPlan:
    if image_h < 1 or image_w < 1:
        raise ValidationError(f"image must be at least 1x1, got {image_h}x{image_w}")
    if tile_h < 1 or tile_w < 1:
        raise ValidationError(f"tile must be at least 1x1, got {tile_h}x{tile_w}")
    if overlap < 0 or overlap >= min(tile_h, tile_w):
        raise ValidationError(
            f"overlap {overlap} must satisfy 0 <= overlap < min(tile) = {min(tile_h, tile_w)}"
        )
    rows = _axis_origins(image_h, tile_h, tile_h - overlap)
    cols = _axis_origins(image_w, tile_w, tile_w - overlap)
    origins = tuple(TileOrigin(r, c) for r in rows for c in cols)
    logger.debug(
        "Planned %d tiles of %dx%d over %dx%d (overlap %d)",
        len(origins), tile_h, tile_w, image_h, image_w, overlap,
    )
    return TilingPlan(image_h, image_w, tile_h, tile_w, overlap, origins)


def _pad_mode(length: int) -> str:
    return "reflect" if length > 1 else "edge"


def pad_to_plan(grid: np.ndarray, plan: TilingPlan) -> np.ndarray:
    """Reflect-pad ``grid`` at the bottom/right up to the plan's padded size."""
    arr = check_grid(grid, channels=True)
    extra_h = plan.padded_h - arr.shape[0]
    extra_w = plan.padded_w - arr.shape[1]
    rest = [(0, 0)] * (arr.ndim - 2)
    if extra_h:
        arr = np.pad(arr, [(0, extra_h), (0, 0)] + rest, mode=_pad_mode(arr.shape[0]))
    if extra_w:
        arr = np.pad(arr, [(0, 0), (0, extra_w)] + rest, mode=_pad_mode(arr.shape[1]))
    return arr


def split(grid: np.ndarray, plan: TilingPlan) -> List[Tuple[np.ndarray, TileOrigin]]:
    """Cut ``grid`` into the plan's tiles, in plan order."""
    arr = check_grid(grid, channels=True)
    if arr.shape[:2] != (plan.image_h, plan.image_w):
        raise ValidationError(
            f"grid {arr.shape[0]}x{arr.shape[1]} does not match plan {plan.image_h}x{plan.image_w}"
        )
    padded = pad_to_plan(arr, plan)
    return [(crop(padded, origin, plan.tile_h, plan.tile_w), origin) for origin in plan.origins]


def stitch(
    tiles: Iterable[Tuple[np.ndarray, TileOrigin]],
    plan: TilingPlan,
    rule: FusionRule,
) -> np.ndarray:
    """Fuse tile score maps back into an image-sized score map.

    Tiles are accumulated in canonical row-major origin order so the result
    is bitwise independent of the order (and worker schedule) they arrive in.
    """
    known = set(plan.origins)
    items: Sequence[Tuple[np.ndarray, TileOrigin]] = sorted(
        ((np.asarray(t), TileOrigin(*o)) for t, o in tiles), key=lambda item: item[1]
    )
    shape = (plan.padded_h, plan.padded_w)
    count = np.zeros(shape, dtype=np.int32)
    if rule is FusionRule.AVERAGE:
        acc = np.zeros(shape, dtype=SCORE_DTYPE)
    else:
        acc = np.full(shape, -np.inf, dtype=SCORE_DTYPE)

    for tile, origin in items:
        if origin not in known:
            raise ValidationError(f"tile origin {tuple(origin)} is not part of the plan")
        if tile.shape != (plan.tile_h, plan.tile_w):
            raise ValidationError(
                f"tile at {tuple(origin)} has shape {tile.shape}, expected {(plan.tile_h, plan.tile_w)}"
            )
        window = (slice(origin.row, origin.row + plan.tile_h), slice(origin.col, origin.col + plan.tile_w))
        if rule is FusionRule.AVERAGE:
            acc[window] += tile
        else:
            np.maximum(acc[window], tile, out=acc[window])
        count[window] += 1

    count = count[: plan.image_h, : plan.image_w]
    acc = acc[: plan.image_h, : plan.image_w]
    if np.any(count == 0):
        r, c = np.argwhere(count == 0)[0]
        raise ValidationError(f"pixel ({r}, {c}) is not covered by any tile")
    if rule is FusionRule.AVERAGE:
        return acc / count
    return acc.copy()


def coverage(plan: TilingPlan) -> np.ndarray:
    """Per-pixel count of tiles covering the (unpadded) image."""
    count = np.zeros((plan.padded_h, plan.padded_w), dtype=np.int32)
    for origin in plan.origins:
        count[origin.row : origin.row + plan.tile_h, origin.col : origin.col + plan.tile_w] += 1
    return count[: plan.image_h, : plan.image_w]

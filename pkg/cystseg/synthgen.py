"""Seeded synthetic scenes: elliptical cysts plus debris distractors.

The ground-truth label map holds only cysts. Debris is recorded in the
ledger and shows up in the rendered image, never in the label map.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import ndimage as ndi

from .core import LABEL_DTYPE, compact_labels
from .errors import PlacementError, ValidationError
from .utils import derive_seed

logger = logging.getLogger(__name__)

DEBRIS_SHAPES = ("ellipse", "blob")


@dataclass(frozen=True)
class SceneSpec:
    height: int = 1024
    width: int = 1024
    n_cysts: int = 10
    axis_range: Tuple[float, float] = (14.0, 36.0)
    n_debris: int = 0
    debris_shape: str = "blob"
    debris_axis_range: Tuple[float, float] = (8.0, 24.0)
    min_gap: int = 4
    min_area: int = 500
    seed: int = 0
    attempts_per_instance: int = 200

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValidationError(f"canvas must be at least 1x1, got {self.height}x{self.width}")
        if self.n_cysts < 0 or self.n_debris < 0:
            raise ValidationError("instance counts must be non-negative")
        lo, hi = self.axis_range
        if not 0 < lo <= hi:
            raise ValidationError(f"axis_range must satisfy 0 < low <= high, got {self.axis_range}")
        dlo, dhi = self.debris_axis_range
        if not 0 < dlo <= dhi:
            raise ValidationError(f"debris_axis_range must satisfy 0 < low <= high, got {self.debris_axis_range}")
        if self.debris_shape not in DEBRIS_SHAPES:
            raise ValidationError(f"debris_shape must be one of {DEBRIS_SHAPES}, got {self.debris_shape!r}")
        if self.min_gap < 0:
            raise ValidationError(f"min_gap must be >= 0, got {self.min_gap}")


@dataclass
class CystRecord:
    label: int
    center: Tuple[float, float]
    axes: Tuple[float, float]
    angle: float
    area: int


@dataclass
class DebrisRecord:
    center: Tuple[float, float]
    shape: str
    area: int


@dataclass
class Scene:
    spec: SceneSpec
    gt: np.ndarray
    cysts: List[CystRecord] = field(default_factory=list)
    debris: List[DebrisRecord] = field(default_factory=list)
    debris_mask: Optional[np.ndarray] = None

    def ledger(self) -> Dict[str, Any]:
        return {
            "height": self.spec.height,
            "width": self.spec.width,
            "seed": self.spec.seed,
            "min_gap": self.spec.min_gap,
            "cysts": [asdict(c) for c in self.cysts],
            "debris": [asdict(d) for d in self.debris],
        }


def rasterize_ellipse(
    center: Tuple[float, float], axes: Tuple[float, float], angle: float
) -> Tuple[int, int, np.ndarray]:
    """Pixels whose centers satisfy the ellipse inequality.

    Returns the window origin (row, col) and the boolean mask of the window.
    """
    cy, cx = center
    a, b = axes
    extent = int(math.ceil(max(a, b))) + 1
    r0 = int(math.floor(cy)) - extent
    c0 = int(math.floor(cx)) - extent
    size = 2 * extent + 2
    rr, cc = np.mgrid[r0 : r0 + size, c0 : c0 + size]
    dy = rr - cy
    dx = cc - cx
    cos_t, sin_t = math.cos(angle), math.sin(angle)
    u = (dx * cos_t + dy * sin_t) / a
    v = (-dx * sin_t + dy * cos_t) / b
    return r0, c0, (u * u + v * v) <= 1.0


def _rasterize_blob(center: Tuple[float, float], radius: float, rng: np.random.Generator) -> Tuple[int, int, np.ndarray]:
    """Union of a few overlapping discs around ``center``."""
    lobes = int(rng.integers(3, 6))
    extent = int(math.ceil(radius * 1.8)) + 1
    cy, cx = center
    r0 = int(math.floor(cy)) - extent
    c0 = int(math.floor(cx)) - extent
    size = 2 * extent + 2
    rr, cc = np.mgrid[r0 : r0 + size, c0 : c0 + size]
    mask = np.zeros(rr.shape, dtype=bool)
    for _ in range(lobes):
        off = rng.uniform(-0.6, 0.6, size=2) * radius
        rad = rng.uniform(0.45, 0.8) * radius
        mask |= (rr - (cy + off[0])) ** 2 + (cc - (cx + off[1])) ** 2 <= rad * rad
    return r0, c0, mask


class Canvas:
    """Occupancy bookkeeping for gap-constrained placement."""

    def __init__(self, height: int, width: int, min_gap: int, occupied: Optional[np.ndarray] = None) -> None:
        self.height = height
        self.width = width
        self.min_gap = min_gap
        self.occupied = np.zeros((height, width), dtype=bool) if occupied is None else occupied.astype(bool)

    def fits(self, r0: int, c0: int, mask: np.ndarray) -> bool:
        rows, cols = np.nonzero(mask)
        if rows.size == 0:
            return False
        rows = rows + r0
        cols = cols + c0
        if rows.min() < 0 or cols.min() < 0 or rows.max() >= self.height or cols.max() >= self.width:
            return False
        g = self.min_gap
        wr0, wr1 = max(rows.min() - g, 0), min(rows.max() + g + 1, self.height)
        wc0, wc1 = max(cols.min() - g, 0), min(cols.max() + g + 1, self.width)
        existing = self.occupied[wr0:wr1, wc0:wc1]
        if not existing.any():
            return True
        candidate = np.zeros(existing.shape, dtype=bool)
        candidate[rows - wr0, cols - wc0] = True
        if g == 0:
            return not (existing & candidate).any()
        # distance from every window pixel to the nearest candidate pixel
        dist = ndi.distance_transform_edt(~candidate)
        return bool(np.all(dist[existing] >= g))

    def claim(self, r0: int, c0: int, mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        rows, cols = np.nonzero(mask)
        rows = rows + r0
        cols = cols + c0
        self.occupied[rows, cols] = True
        return rows, cols


def _sample_center(rng: np.random.Generator, extent: float, height: int, width: int) -> Optional[Tuple[float, float]]:
    if 2 * extent + 1 > min(height, width):
        return None
    return (
        float(rng.uniform(extent, height - 1 - extent)),
        float(rng.uniform(extent, width - 1 - extent)),
    )


def place_debris(
    canvas: Canvas,
    count: int,
    shape: str,
    axis_range: Tuple[float, float],
    rng: np.random.Generator,
    attempts_per_instance: int = 200,
    min_area: int = 1,
) -> List[Tuple[DebrisRecord, np.ndarray, np.ndarray]]:
    """Place up to ``count`` debris shapes; returns records with their pixel rows/cols."""
    placed: List[Tuple[DebrisRecord, np.ndarray, np.ndarray]] = []
    budget = attempts_per_instance * count
    while len(placed) < count and budget > 0:
        budget -= 1
        lo, hi = axis_range
        if shape == "ellipse":
            axes = (float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)))
            extent = max(axes) + 1
            center = _sample_center(rng, extent, canvas.height, canvas.width)
            if center is None:
                break
            r0, c0, mask = rasterize_ellipse(center, axes, float(rng.uniform(0, math.pi)))
        else:
            radius = float(rng.uniform(lo, hi))
            center = _sample_center(rng, radius * 1.8 + 1, canvas.height, canvas.width)
            if center is None:
                break
            r0, c0, mask = _rasterize_blob(center, radius, rng)
        area = int(mask.sum())
        if area < min_area or not canvas.fits(r0, c0, mask):
            continue
        rows, cols = canvas.claim(r0, c0, mask)
        placed.append((DebrisRecord(center=center, shape=shape, area=area), rows, cols))
    if len(placed) < count:
        logger.warning("Placed %d of %d debris shapes", len(placed), count)
    return placed


def generate(spec: SceneSpec) -> Scene:
    """Build a ground-truth scene; identical specs give identical scenes."""
    rng = np.random.default_rng(spec.seed)
    raw = np.zeros((spec.height, spec.width), dtype=LABEL_DTYPE)
    canvas = Canvas(spec.height, spec.width, spec.min_gap)
    lo, hi = spec.axis_range
    pending: List[Tuple[CystRecord, int, int]] = []
    budget = spec.attempts_per_instance * max(spec.n_cysts, 1)

    while len(pending) < spec.n_cysts and budget > 0:
        budget -= 1
        axes = (float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)))
        angle = float(rng.uniform(0.0, math.pi))
        center = _sample_center(rng, max(axes) + 1, spec.height, spec.width)
        if center is None:
            break
        r0, c0, mask = rasterize_ellipse(center, axes, angle)
        area = int(mask.sum())
        if area < spec.min_area or not canvas.fits(r0, c0, mask):
            continue
        rows, cols = canvas.claim(r0, c0, mask)
        label = len(pending) + 1
        raw[rows, cols] = label
        pending.append((CystRecord(label, center, axes, angle, area), int(rows[0]), int(cols[0])))

    if len(pending) < spec.n_cysts:
        raise PlacementError(
            f"placed only {len(pending)} of {spec.n_cysts} cysts on a {spec.height}x{spec.width} canvas "
            f"(min_gap={spec.min_gap}, seed={spec.seed})",
            placed=len(pending),
            requested=spec.n_cysts,
        )

    gt = compact_labels(raw)
    cysts = []
    for record, r, c in pending:
        record.label = int(gt[r, c])
        cysts.append(record)
    cysts.sort(key=lambda rec: rec.label)

    debris_mask = np.zeros(gt.shape, dtype=bool)
    debris: List[DebrisRecord] = []
    if spec.n_debris:
        debris_rng = np.random.default_rng(derive_seed(spec.seed, "debris"))
        for record, rows, cols in place_debris(
            canvas, spec.n_debris, spec.debris_shape, spec.debris_axis_range, debris_rng,
            spec.attempts_per_instance,
        ):
            debris_mask[rows, cols] = True
            debris.append(record)

    logger.debug("Generated scene seed=%d with %d cysts and %d debris", spec.seed, len(cysts), len(debris))
    return Scene(spec=spec, gt=gt, cysts=cysts, debris=debris, debris_mask=debris_mask)


def render(scene: Scene) -> np.ndarray:
    """RGB rendering: light background, brown cysts, dark debris, seeded noise."""
    rng = np.random.default_rng(derive_seed(scene.spec.seed, "render"))
    h, w = scene.gt.shape
    image = np.empty((h, w, 3), dtype=np.float64)
    image[:] = (222.0, 212.0, 188.0)
    cyst = scene.gt > 0
    image[cyst] = (150.0, 96.0, 46.0)
    if scene.debris_mask is not None:
        image[scene.debris_mask] = (92.0, 74.0, 52.0)
    image += rng.normal(0.0, 6.0, size=image.shape)
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)

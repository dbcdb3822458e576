"""Score-map providers: stored PFM files, synthetic maps from ground truth, or a remote model service.

Every provider answers ``score_tile`` for one fixed-size tile and inherits
``score_image``, which splits the image plane, scores the tiles and stitches
the cyst head by averaging and the boundary head by maximum.
"""
from __future__ import annotations

import logging
import struct
import threading
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import requests
from scipy import ndimage as ndi

from .core import SCORE_DTYPE, TileOrigin, as_label_map, check_grid, check_scores
from .errors import RemoteScoringError, ScoringError, ValidationError
from .formats import decode_pfm, encode_pfm, read_label_png, read_pfm, read_rgb
from .manifest import ImageEntry
from .morphology import BOUNDARY_RADIUS, boundary_map
from .synthgen import Canvas, place_debris
from .tiler import BOUNDARY_FUSION, CYST_FUSION, TilingPlan, plan_tiling, split, stitch
from .utils import derive_seed, request_with_retries

logger = logging.getLogger(__name__)

SCORER_KINDS = ("file", "mock", "remote")
CYST_SUFFIX = ".cyst.pfm"
BOUNDARY_SUFFIX = ".boundary.pfm"
FRAME_LENGTH = struct.Struct("<Q")


class ScorePair(NamedTuple):
    cyst: np.ndarray
    boundary: np.ndarray


def tile_stem(stem: str, origin: TileOrigin) -> str:
    return f"{stem}_r{origin.row}_c{origin.col}"


class Scorer(ABC):
    kind: str = ""

    @abstractmethod
    def score_tile(self, tile_id: str, tile: Optional[np.ndarray]) -> ScorePair:
        """Cyst and boundary scores for one tile."""

    def plane_for(self, image: ImageEntry) -> Optional[np.ndarray]:
        """The image-sized input that gets split into tiles (None if tiles need no input)."""
        return None

    def _shape_of(self, image: ImageEntry, plane: Optional[np.ndarray]) -> Tuple[int, int]:
        if plane is not None:
            return int(plane.shape[0]), int(plane.shape[1])
        if image.height is None or image.width is None:
            raise ScoringError(f"{image.stem}: image size unknown (set height/width in the manifest)")
        return image.height, image.width

    def score_image(self, image: ImageEntry, tile_size: int, overlap: int, workers: int = 1) -> ScorePair:
        plane = self.plane_for(image)
        h, w = self._shape_of(image, plane)
        plan = plan_tiling(h, w, tile_size, tile_size, overlap)
        tiles: Sequence[Tuple[Optional[np.ndarray], TileOrigin]]
        if plane is not None:
            tiles = split(plane, plan)
        else:
            tiles = [(None, origin) for origin in plan.origins]

        def run(item: Tuple[Optional[np.ndarray], TileOrigin]) -> Tuple[ScorePair, TileOrigin]:
            tile, origin = item
            return self.score_tile(tile_stem(image.stem, origin), tile), origin

        if workers > 1 and len(tiles) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run, tiles))
        else:
            results = [run(item) for item in tiles]
        return fuse(plan, results)

    def close(self) -> None:
        pass


def fuse(plan: TilingPlan, results: List[Tuple[ScorePair, TileOrigin]]) -> ScorePair:
    cyst = stitch(((pair.cyst, origin) for pair, origin in results), plan, CYST_FUSION)
    boundary = stitch(((pair.boundary, origin) for pair, origin in results), plan, BOUNDARY_FUSION)
    return ScorePair(cyst, boundary)


class FileScorer(Scorer):
    """Reads ``<score_dir>/<stem>.cyst.pfm`` and ``<stem>.boundary.pfm``.

    Image-level files are used as they are; otherwise per-tile files named
    ``<stem>_r<row>_c<col>`` are stitched.
    """

    kind = "file"

    def __init__(self, score_dir: Path) -> None:
        self.score_dir = Path(score_dir)

    def paths(self, stem: str) -> Tuple[Path, Path]:
        return self.score_dir / f"{stem}{CYST_SUFFIX}", self.score_dir / f"{stem}{BOUNDARY_SUFFIX}"

    def _load(self, stem: str) -> ScorePair:
        cyst_path, boundary_path = self.paths(stem)
        for path in (cyst_path, boundary_path):
            if not path.is_file():
                raise ScoringError(f"{stem}: missing score map {path}")
        cyst = check_scores(read_pfm(cyst_path), str(cyst_path))
        boundary = check_scores(read_pfm(boundary_path), str(boundary_path))
        if cyst.shape != boundary.shape:
            raise ValidationError(f"{stem}: cyst map {cyst.shape} and boundary map {boundary.shape} differ")
        return ScorePair(cyst, boundary)

    def score_tile(self, tile_id: str, tile: Optional[np.ndarray] = None) -> ScorePair:
        return self._load(tile_id)

    def score_image(self, image: ImageEntry, tile_size: int, overlap: int, workers: int = 1) -> ScorePair:
        if all(p.is_file() for p in self.paths(image.stem)):
            pair = self._load(image.stem)
            if image.height is not None and image.width is not None and pair.cyst.shape != (image.height, image.width):
                raise ValidationError(
                    f"{image.stem}: score maps are {pair.cyst.shape}, manifest says {(image.height, image.width)}"
                )
            return ScorePair(pair.cyst.astype(SCORE_DTYPE), pair.boundary.astype(SCORE_DTYPE))
        return super().score_image(image, tile_size, overlap, workers)


def box_blur(scores: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return scores
    return ndi.uniform_filter(scores, size=2 * radius + 1, mode="nearest")


def mock_from_ground_truth(
    gt: np.ndarray,
    noise_sigma: float = 0.0,
    blur_radius: int = 0,
    seed: int = 0,
    boundary_radius: int = BOUNDARY_RADIUS,
) -> ScorePair:
    """Score maps a perfect model would emit for ``gt``, then blurred and noised.

    Noise-free maps are the cyst indicator and ``boundary_map(gt)``; a box blur
    of ``blur_radius`` and seeded additive Gaussian noise follow, then clamping.
    """
    if noise_sigma < 0 or blur_radius < 0:
        raise ValidationError("noise_sigma and blur_radius must be >= 0")
    labels = as_label_map(gt)
    cyst = (labels > 0).astype(SCORE_DTYPE)
    boundary = boundary_map(labels, boundary_radius).astype(SCORE_DTYPE)
    cyst = box_blur(cyst, blur_radius)
    boundary = box_blur(boundary, blur_radius)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        cyst = cyst + rng.normal(0.0, noise_sigma, size=cyst.shape)
        boundary = boundary + rng.normal(0.0, noise_sigma, size=boundary.shape)
    return ScorePair(np.clip(cyst, 0.0, 1.0), np.clip(boundary, 0.0, 1.0))


def inject_debris(
    gt: np.ndarray,
    rate: float,
    rng: np.random.Generator,
    axis_range: Tuple[float, float] = (14.0, 30.0),
    min_area: int = 500,
    min_gap: int = 4,
) -> Tuple[np.ndarray, int]:
    """Add Poisson(``rate``) cyst-like false blobs clear of every true instance."""
    labels = as_label_map(gt)
    count = int(rng.poisson(rate)) if rate > 0 else 0
    if count == 0:
        return labels, 0
    canvas = Canvas(labels.shape[0], labels.shape[1], min_gap, occupied=labels > 0)
    out = labels.copy()
    next_label = int(labels.max()) + 1
    placed = place_debris(canvas, count, "ellipse", axis_range, rng, min_area=min_area)
    for i, (_, rows, cols) in enumerate(placed):
        out[rows, cols] = next_label + i
    return out, len(placed)


class MockScorer(Scorer):
    """Synthesizes score maps from each image's ground-truth label map."""

    kind = "mock"

    def __init__(
        self,
        noise_sigma: float = 0.0,
        blur_radius: int = 0,
        seed: int = 0,
        debris_rate: float = 0.0,
        boundary_radius: int = BOUNDARY_RADIUS,
    ) -> None:
        if noise_sigma < 0 or blur_radius < 0 or debris_rate < 0:
            raise ValidationError("noise_sigma, blur_radius and debris_rate must be >= 0")
        self.noise_sigma = noise_sigma
        self.blur_radius = blur_radius
        self.seed = seed
        self.debris_rate = debris_rate
        self.boundary_radius = boundary_radius

    def score_tile(self, tile_id: str, tile: Optional[np.ndarray]) -> ScorePair:
        if tile is None:
            raise ScoringError(f"{tile_id}: mock scorer needs a ground-truth tile")
        return mock_from_ground_truth(
            tile, self.noise_sigma, self.blur_radius, derive_seed(self.seed, tile_id), self.boundary_radius
        )

    def plane_for(self, image: ImageEntry) -> np.ndarray:
        if image.ground_truth is None:
            raise ScoringError(f"{image.stem}: mock scorer needs a ground_truth path")
        if not Path(image.ground_truth).is_file():
            raise ScoringError(f"{image.stem}: missing ground truth {image.ground_truth}")
        return read_label_png(image.ground_truth)

    def score_image(self, image: ImageEntry, tile_size: int, overlap: int, workers: int = 1) -> ScorePair:
        # Maps are synthesized at image scale so tile borders never fake a boundary;
        # the tiles are then cut from them and fused like any provider's output.
        gt = self.plane_for(image)
        if self.debris_rate > 0:
            rng = np.random.default_rng(derive_seed(self.seed, f"debris:{image.stem}"))
            gt, injected = inject_debris(gt, self.debris_rate, rng)
            if injected:
                logger.info("%s: injected %d debris blobs", image.stem, injected)
        full = mock_from_ground_truth(
            gt, self.noise_sigma, self.blur_radius, derive_seed(self.seed, image.stem), self.boundary_radius
        )
        plan = plan_tiling(gt.shape[0], gt.shape[1], tile_size, tile_size, overlap)
        cyst_tiles = split(full.cyst, plan)
        boundary_tiles = split(full.boundary, plan)
        results = [
            (ScorePair(c, b), origin) for (c, origin), (b, _) in zip(cyst_tiles, boundary_tiles)
        ]
        return fuse(plan, results)


def pack_score_pair(pair: ScorePair) -> bytes:
    """Wire framing: each PFM payload preceded by its 8-byte little-endian length."""
    out = bytearray()
    for plane in (pair.cyst, pair.boundary):
        payload = encode_pfm(plane)
        out += FRAME_LENGTH.pack(len(payload))
        out += payload
    return bytes(out)


def unpack_score_pair(payload: bytes) -> ScorePair:
    planes = []
    offset = 0
    for name in ("cyst", "boundary"):
        if offset + FRAME_LENGTH.size > len(payload):
            raise ValidationError("truncated score response")
        (length,) = FRAME_LENGTH.unpack_from(payload, offset)
        offset += FRAME_LENGTH.size
        if offset + length > len(payload):
            raise ValidationError("truncated score response")
        planes.append(decode_pfm(payload[offset : offset + length], f"{name} payload"))
        offset += length
    if offset != len(payload):
        raise ValidationError(f"{len(payload) - offset} trailing bytes in score response")
    return ScorePair(planes[0], planes[1])


def encode_tile_request(tile: np.ndarray) -> bytes:
    arr = check_grid(tile, "tile", channels=True)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"remote scoring needs an RGB tile, got shape {arr.shape}")
    h, w = arr.shape[:2]
    return f"{h} {w}\n".encode("ascii") + np.ascontiguousarray(arr, dtype=np.uint8).tobytes()


class RemoteScorer(Scorer):
    """Client for a model service answering ``POST <endpoint>/score``."""

    kind = "remote"

    def __init__(
        self,
        endpoint: str,
        timeout_sec: float = 20,
        retries: int = 2,
        max_in_flight: int = 4,
        user_agent: str = "cystseg/0.1",
        token: Optional[str] = None,
    ) -> None:
        if not endpoint:
            raise ValidationError("remote scorer needs an endpoint")
        self.url = endpoint.rstrip("/") + "/score"
        self.timeout_sec = timeout_sec
        self.retries = retries
        self.user_agent = user_agent
        self.token = token
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._local = threading.local()
        self._sessions: List[requests.Session] = []
        self._sessions_lock = threading.Lock()

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            session.headers["User-Agent"] = self.user_agent
            session.headers["Content-Type"] = "application/octet-stream"
            if self.token:
                session.headers["Authorization"] = f"Bearer {self.token}"
            self._local.session = session
            with self._sessions_lock:
                self._sessions.append(session)
        return session

    def plane_for(self, image: ImageEntry) -> np.ndarray:
        if image.image is None:
            raise ScoringError(f"{image.stem}: remote scorer needs an image path")
        if not Path(image.image).is_file():
            raise ScoringError(f"{image.stem}: missing image {image.image}")
        return read_rgb(image.image)

    def score_tile(self, tile_id: str, tile: Optional[np.ndarray]) -> ScorePair:
        if tile is None:
            raise ScoringError(f"{tile_id}: remote scorer needs an RGB tile")
        body = encode_tile_request(tile)
        attempts = self.retries + 1
        try:
            with self._slots:
                resp = request_with_retries(
                    self._session(), "POST", self.url, self.retries, self.timeout_sec, data=body
                )
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise RemoteScoringError(f"{tile_id}: scoring request failed after {attempts} attempt(s): {exc}", attempts) from exc
        pair = unpack_score_pair(resp.content)
        expected = tile.shape[:2]
        for name, plane in zip(("cyst", "boundary"), pair):
            if plane.shape != expected:
                raise ValidationError(f"{tile_id}: {name} map {plane.shape} does not match tile {expected}")
            check_scores(plane, f"{tile_id} {name} map")
        return pair

    def close(self) -> None:
        """Close the session of every thread that scored through this client."""
        with self._sessions_lock:
            sessions, self._sessions = self._sessions, []
        for session in sessions:
            session.close()
        self._local = threading.local()

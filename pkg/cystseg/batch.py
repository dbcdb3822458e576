"""Batch segmentation of a manifest, and training-target export."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from .config import Config
from .core import crop
from .errors import BatchError, CystsegError, ManifestError
from .formats import read_label_png
from .instance import segment
from .manifest import ImageEntry, Manifest, SampleManifest
from .morphology import boundary_map
from .reports import ReportWriter, file_log
from .scorer import FileScorer, MockScorer, RemoteScorer, Scorer, tile_stem
from .stats import instance_areas
from .tiler import plan_tiling
from .utils import sha256_file

logger = logging.getLogger(__name__)

COUNTS_CSV = "counts.csv"
AREAS_CSV = "areas.csv"
SEGMENT_SUMMARY = "segment_summary.json"
TARGETS_DIR = "targets"


def labels_name(stem: str) -> str:
    return f"{stem}.labels.png"


def make_scorer(cfg: Config) -> Scorer:
    if cfg.scorer == "file":
        return FileScorer(cfg.score_dir)
    if cfg.scorer == "mock":
        return MockScorer(cfg.noise_sigma, cfg.blur_radius, cfg.seed, cfg.debris_rate, cfg.boundary_radius)
    return RemoteScorer(
        cfg.endpoint,
        timeout_sec=cfg.timeout_sec,
        retries=cfg.retries,
        max_in_flight=cfg.max_in_flight,
        user_agent=cfg.user_agent,
        token=cfg.api_token(),
    )


def segment_image(scorer: Scorer, image: ImageEntry, cfg: Config) -> np.ndarray:
    pair = scorer.score_image(image, cfg.tile_size, cfg.overlap)
    return segment(pair.cyst, pair.boundary, cfg.pipeline_params())


@dataclass
class SegmentSummary:
    n_samples: int = 0
    n_images: int = 0
    n_instances: int = 0
    counts: Dict[str, int] = field(default_factory=dict)
    failures: Dict[str, str] = field(default_factory=dict)


def cmd_segment(manifest: Manifest, cfg: Config, scorer: Optional[Scorer] = None) -> SegmentSummary:
    """Segment every image; write label maps, per-sample counts and per-instance areas."""
    entries: List[Tuple[SampleManifest, ImageEntry]] = list(manifest.images())
    if not entries:
        raise ManifestError("no samples")
    writer = ReportWriter(cfg.output_dir, cfg.to_record(), cfg.force)
    writer.claim([labels_name(img.stem) for _, img in entries] + [COUNTS_CSV, AREAS_CSV, SEGMENT_SUMMARY])
    scorer = scorer or make_scorer(cfg)

    def work(item: Tuple[SampleManifest, ImageEntry]) -> Tuple[Optional[np.ndarray], Optional[BaseException]]:
        _, image = item
        try:
            return segment_image(scorer, image, cfg), None
        except (CystsegError, OSError) as exc:
            return None, exc

    failures: Dict[str, BaseException] = {}
    per_image: List[Dict[str, object]] = []
    area_rows: List[List[object]] = []
    image_counts: Dict[str, int] = {}

    with file_log(cfg.output_dir, "segment"):
        logger.info("Segmenting %d images from %d samples with the %s scorer", len(entries), len(manifest.samples), cfg.scorer)
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool, tqdm(
            total=len(entries), desc="Segmenting", dynamic_ncols=True
        ) as pbar:
            # map() yields in submission order, so all writes stay on this thread in manifest order
            for (sample, image), (labels, error) in zip(entries, pool.map(work, entries)):
                pbar.update(1)
                if error is not None:
                    failures[image.stem] = error
                    logger.warning("Failed to segment %s: %s", image.stem, error)
                    tqdm.write(f"Failed {image.stem}: {error}")
                    continue
                path = writer.write_labels(labels_name(image.stem), labels)
                areas = instance_areas(labels)
                image_counts[image.stem] = len(areas)
                meta = sample.metadata
                for label, area in enumerate(areas, start=1):
                    area_rows.append(
                        [sample.sample_id, image.stem, label, area, meta.soil_layer, meta.density, meta.condition]
                    )
                per_image.append(
                    {"stem": image.stem, "sample_id": sample.sample_id, "instances": len(areas), "sha256": sha256_file(path)}
                )
                logger.info("%s: %d instances", image.stem, len(areas))
        scorer.close()

        summary = SegmentSummary(n_samples=len(manifest.samples), n_images=len(entries))
        count_rows = []
        for sample in manifest.samples:
            stems = [img.stem for img in sample.images]
            if any(stem in failures for stem in stems):
                continue
            total = sum(image_counts[stem] for stem in stems)
            summary.counts[sample.sample_id] = total
            meta = sample.metadata
            count_rows.append(
                [sample.sample_id, len(stems), total, sample.manual_count, meta.soil_layer, meta.density, meta.condition]
            )
        summary.n_instances = sum(image_counts.values())
        summary.failures = {stem: str(exc) for stem, exc in failures.items()}

        writer.write_csv(
            COUNTS_CSV,
            ["sample_id", "n_images", "automatic_count", "manual_count", "soil_layer", "density", "condition"],
            count_rows,
        )
        writer.write_csv(
            AREAS_CSV,
            ["sample_id", "stem", "label", "area", "soil_layer", "density", "condition"],
            area_rows,
        )
        writer.write_json(
            SEGMENT_SUMMARY,
            {
                "n_samples": summary.n_samples,
                "n_images": summary.n_images,
                "n_instances": summary.n_instances,
                "images": per_image,
                "failures": summary.failures,
            },
        )
    if failures:
        raise BatchError(failures)
    return summary


def cmd_targets(manifest: Manifest, cfg: Config) -> int:
    """Export binary cyst/boundary training targets for patches with enough cyst pixels.

    Patches are non-overlapping tile-size windows (final one clamped); the
    boundary map is built on the whole label map before cropping so patch
    edges never create boundary pixels. Returns the number of patches kept.
    """
    images = [img for _, img in manifest.images() if img.ground_truth is not None]
    if not images:
        raise ManifestError("no image in the manifest has a ground_truth path")
    writer = ReportWriter(cfg.output_dir, cfg.to_record(), cfg.force)
    writer.claim([f"{TARGETS_DIR}/index.csv"])
    rows: List[List[object]] = []
    with file_log(cfg.output_dir, "targets"):
        for image in tqdm(images, desc="Exporting targets", dynamic_ncols=True):
            gt = read_label_png(Path(image.ground_truth))
            cyst = gt > 0
            boundary = boundary_map(gt, cfg.boundary_radius)
            plan = plan_tiling(gt.shape[0], gt.shape[1], cfg.tile_size, cfg.tile_size, 0)
            kept = 0
            for origin in plan.origins:
                if gt.shape[0] < cfg.tile_size or gt.shape[1] < cfg.tile_size:
                    logger.warning("%s is smaller than the %d px tile; skipped", image.stem, cfg.tile_size)
                    break
                patch = crop(cyst, origin, cfg.tile_size, cfg.tile_size)
                pixels = int(patch.sum())
                if pixels <= cfg.target_min_pixels:
                    continue
                name = tile_stem(image.stem, origin)
                writer.write_mask(f"{TARGETS_DIR}/{name}.cyst.png", patch)
                writer.write_mask(
                    f"{TARGETS_DIR}/{name}.boundary.png", crop(boundary, origin, cfg.tile_size, cfg.tile_size)
                )
                rows.append([image.stem, name, origin.row, origin.col, pixels])
                kept += 1
            logger.info("%s: kept %d of %d patches", image.stem, kept, len(plan.origins))
        writer.write_csv(f"{TARGETS_DIR}/index.csv", ["stem", "tile", "row", "col", "cyst_pixels"], rows)
    return len(rows)

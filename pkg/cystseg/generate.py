"""Synthetic dataset generation: scenes, ledgers and a ready-to-run manifest."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml
from tqdm import tqdm

from .config import Config
from .errors import ConfigError, ValidationError
from .manifest import (
    CONDITIONS,
    DENSITIES,
    SOIL_LAYERS,
    ImageEntry,
    Manifest,
    SampleManifest,
    SampleMetadata,
    manifest_to_json,
)
from .reports import ReportWriter, file_log
from .synthgen import Scene, SceneSpec, generate, render
from .utils import derive_seed

logger = logging.getLogger(__name__)

SCENES_DIR = "scenes"
MANIFEST_JSON = "manifest.json"


@dataclass
class DatasetSpec:
    n_scenes: int = 10
    stem_prefix: str = "scene"
    height: int = 512
    width: int = 512
    n_cysts: Tuple[int, int] = (8, 8)
    axis_range: Tuple[float, float] = (14.0, 36.0)
    n_debris: int = 0
    debris_shape: str = "blob"
    debris_axis_range: Tuple[float, float] = (8.0, 24.0)
    min_gap: int = 4
    min_area: int = 500
    seed: int = 0
    render: bool = True
    images_per_sample: int = 1
    metadata: List[Dict[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.n_scenes < 1:
            raise ConfigError(f"n_scenes must be >= 1, got {self.n_scenes}")
        if self.images_per_sample < 1:
            raise ConfigError(f"images_per_sample must be >= 1, got {self.images_per_sample}")
        lo, hi = self.n_cysts
        if not 0 <= lo <= hi:
            raise ConfigError(f"n_cysts range must satisfy 0 <= min <= max, got {self.n_cysts}")
        for meta in self.metadata:
            _metadata(meta)
        try:
            self.scene_spec(0)
        except ConfigError:
            raise
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc

    def scene_spec(self, index: int) -> SceneSpec:
        lo, hi = self.n_cysts
        count = lo if lo == hi else int(np.random.default_rng(derive_seed(self.seed, f"count:{index}")).integers(lo, hi + 1))
        return SceneSpec(
            height=self.height,
            width=self.width,
            n_cysts=count,
            axis_range=self.axis_range,
            n_debris=self.n_debris,
            debris_shape=self.debris_shape,
            debris_axis_range=self.debris_axis_range,
            min_gap=self.min_gap,
            min_area=self.min_area,
            seed=derive_seed(self.seed, f"scene:{index}"),
        )

    def stem(self, index: int) -> str:
        return f"{self.stem_prefix}_{index:03d}"


METADATA_CHOICES = {"soil_layer": SOIL_LAYERS, "density": DENSITIES, "condition": CONDITIONS}


def _metadata(meta: Any) -> SampleMetadata:
    if not isinstance(meta, dict):
        raise ConfigError(f"metadata entries must be mappings, got {meta!r}")
    for key, value in meta.items():
        allowed = METADATA_CHOICES.get(key)
        if allowed is None:
            raise ConfigError(f"unknown metadata key {key!r}")
        if value not in allowed:
            raise ConfigError(f"metadata {key} must be one of {allowed}, got {value!r}")
    return SampleMetadata(**meta)


def _pair(value: Any, key: str, cast) -> Tuple[Any, Any]:
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return cast(value[0]), cast(value[1])
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return cast(value), cast(value)
    raise ConfigError(f"{key} must be a number or a [min, max] pair, got {value!r}")


def load_dataset_spec(path: Path) -> DatasetSpec:
    """Parse a YAML dataset spec; ``n_cysts`` and ranges accept ``[min, max]``."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: scene spec must be a key-value mapping")
    known = set(DatasetSpec.__dataclass_fields__)
    values: Dict[str, Any] = {}
    for key, value in data.items():
        name = str(key).replace("-", "_")
        if name not in known:
            raise ConfigError(f"{path}: unknown scene spec key {key!r}")
        values[name] = value
    if "n_cysts" in values:
        values["n_cysts"] = _pair(values["n_cysts"], "n_cysts", int)
    for key in ("axis_range", "debris_axis_range"):
        if key in values:
            values[key] = _pair(values[key], key, float)
    meta = values.get("metadata")
    if isinstance(meta, dict):
        values["metadata"] = [meta]
    elif meta is not None and not isinstance(meta, list):
        raise ConfigError(f"{path}: metadata must be a mapping or a list of mappings")
    try:
        return DatasetSpec(**values)
    except (TypeError, ValidationError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _build_manifest(spec: DatasetSpec, scenes: List[Scene], root: Path) -> Manifest:
    samples = []
    for start in range(0, spec.n_scenes, spec.images_per_sample):
        indices = range(start, min(start + spec.images_per_sample, spec.n_scenes))
        sample_no = start // spec.images_per_sample
        meta = spec.metadata[sample_no % len(spec.metadata)] if spec.metadata else {}
        images = [
            ImageEntry(
                stem=spec.stem(i),
                ground_truth=root / SCENES_DIR / f"{spec.stem(i)}.gt.png",
                image=root / SCENES_DIR / f"{spec.stem(i)}.png" if spec.render else None,
                height=spec.height,
                width=spec.width,
            )
            for i in indices
        ]
        samples.append(
            SampleManifest(
                sample_id=f"{spec.stem_prefix}_sample_{sample_no:03d}",
                images=images,
                manual_count=sum(len(scenes[i].cysts) for i in indices),
                metadata=_metadata(meta),
            )
        )
    return Manifest(samples=samples, root=root)


def cmd_generate(spec_path: Path, cfg: Config) -> Manifest:
    spec = load_dataset_spec(Path(spec_path))
    root = Path(cfg.output_dir)
    writer = ReportWriter(root, cfg.to_record(), cfg.force)
    names = [MANIFEST_JSON]
    for i in range(spec.n_scenes):
        names += [f"{SCENES_DIR}/{spec.stem(i)}.gt.png", f"{SCENES_DIR}/{spec.stem(i)}.ledger.json"]
        if spec.render:
            names.append(f"{SCENES_DIR}/{spec.stem(i)}.png")
    writer.claim(names)

    def build(index: int) -> Tuple[Scene, Optional[np.ndarray]]:
        scene = generate(spec.scene_spec(index))
        return scene, render(scene) if spec.render else None

    with file_log(root, "generate"):
        scenes: List[Scene] = []
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            for i, (scene, rgb) in enumerate(
                tqdm(pool.map(build, range(spec.n_scenes)), total=spec.n_scenes, desc="Generating", dynamic_ncols=True)
            ):
                stem = spec.stem(i)
                writer.write_labels(f"{SCENES_DIR}/{stem}.gt.png", scene.gt)
                writer.write_text(
                    f"{SCENES_DIR}/{stem}.ledger.json",
                    json.dumps({"stem": stem, **scene.ledger()}, indent=2, sort_keys=True) + "\n",
                )
                if rgb is not None:
                    writer.write_rgb(f"{SCENES_DIR}/{stem}.png", rgb)
                logger.info("%s: %d cysts, %d debris", stem, len(scene.cysts), len(scene.debris))
                scenes.append(scene)
        manifest = _build_manifest(spec, scenes, root)
        writer.write_text(MANIFEST_JSON, json.dumps(manifest_to_json(manifest, root), indent=2) + "\n")
    return manifest

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pytest

from cystseg.config import Config
from cystseg.formats import write_label_png
from cystseg.manifest import ImageEntry, Manifest, SampleManifest, SampleMetadata, save_manifest
from cystseg.synthgen import Scene, SceneSpec, generate


def _discs(shape: Tuple[int, int], centers: Sequence[Tuple[int, int]], radius: int) -> np.ndarray:
    rr, cc = np.mgrid[: shape[0], : shape[1]]
    labels = np.zeros(shape, dtype=np.int32)
    for i, (r, c) in enumerate(centers, start=1):
        labels[(rr - r) ** 2 + (cc - c) ** 2 <= radius * radius] = i
    return labels


@pytest.fixture
def discs():
    """Factory: label map with one disc per center, labeled in center order."""
    return _discs


@pytest.fixture
def small_scene_spec() -> SceneSpec:
    return SceneSpec(height=256, width=256, n_cysts=5, axis_range=(14.0, 22.0), min_gap=4, seed=3)


@pytest.fixture
def config(tmp_path: Path) -> Config:
    return Config(scorer="mock", output_dir=tmp_path / "out", tile_size=128, overlap=16, ad_resamples=200)


@pytest.fixture
def scene_manifest(tmp_path: Path):
    """Factory: write ``n`` generated scenes plus a manifest; returns (manifest, scenes)."""

    def build(
        n: int = 3,
        images_per_sample: int = 1,
        spec: Optional[SceneSpec] = None,
        metadata: Optional[List[Dict[str, str]]] = None,
        root: Optional[Path] = None,
    ) -> Tuple[Manifest, List[Scene]]:
        root = root or tmp_path / "data"
        (root / "scenes").mkdir(parents=True, exist_ok=True)
        base = spec or SceneSpec(height=256, width=256, n_cysts=5, axis_range=(14.0, 22.0), min_gap=4)
        scenes = []
        samples = []
        for i in range(n):
            scene = generate(replace(base, seed=base.seed + i))
            stem = f"scene_{i:03d}"
            write_label_png(root / "scenes" / f"{stem}.gt.png", scene.gt)
            scenes.append(scene)
            entry = ImageEntry(stem, ground_truth=root / "scenes" / f"{stem}.gt.png", height=base.height, width=base.width)
            sample_no = i // images_per_sample
            if i % images_per_sample == 0:
                meta = SampleMetadata(**(metadata[sample_no % len(metadata)] if metadata else {}))
                samples.append(SampleManifest(f"sample_{sample_no:03d}", [], 0, meta))
            samples[-1].images.append(entry)
            samples[-1].manual_count += len(scene.cysts)
        manifest = Manifest(samples, root)
        save_manifest(root / "manifest.json", manifest)
        return manifest, scenes

    return build

"""Sample manifest: which images belong to which sample, plus ground truth and counts."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

from .errors import ManifestError

SOIL_LAYERS = ("top", "sub")
DENSITIES = ("low", "high")
CONDITIONS = ("debris", "clean")


@dataclass
class ImageEntry:
    stem: str
    ground_truth: Optional[Path] = None
    image: Optional[Path] = None
    height: Optional[int] = None
    width: Optional[int] = None

    def to_json(self, root: Path) -> Dict[str, Any]:
        out: Dict[str, Any] = {"stem": self.stem}
        for key in ("ground_truth", "image"):
            value = getattr(self, key)
            if value is not None:
                out[key] = _relative(value, root)
        for key in ("height", "width"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


@dataclass
class SampleMetadata:
    soil_layer: Optional[str] = None
    density: Optional[str] = None
    condition: Optional[str] = None

    def to_json(self) -> Dict[str, str]:
        return {k: v for k, v in vars(self).items() if v is not None}


@dataclass
class SampleManifest:
    sample_id: str
    images: List[ImageEntry]
    manual_count: Optional[int] = None
    metadata: SampleMetadata = field(default_factory=SampleMetadata)


@dataclass
class Manifest:
    samples: List[SampleManifest]
    root: Path = Path(".")

    def images(self) -> Iterator[Tuple[SampleManifest, ImageEntry]]:
        for sample in self.samples:
            for image in sample.images:
                yield sample, image

    def stems(self) -> List[str]:
        return [image.stem for _, image in self.images()]


def _relative(path: Path, root: Path) -> str:
    try:
        return Path(path).resolve().relative_to(root.resolve()).as_posix()
    except ValueError:
        return Path(path).as_posix()


def _choice(value: Any, allowed: Tuple[str, ...], what: str, sample_id: str) -> Optional[str]:
    if value is None:
        return None
    if value not in allowed:
        raise ManifestError(f"sample {sample_id!r}: {what} must be one of {allowed}, got {value!r}")
    return value


def _optional_int(value: Any, what: str, where: str) -> Optional[int]:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ManifestError(f"{where}: {what} must be a non-negative integer, got {value!r}")
    return value


def parse_manifest(data: Dict[str, Any], root: Path) -> Manifest:
    if not isinstance(data, dict) or not isinstance(data.get("samples"), list):
        raise ManifestError("manifest must be an object with a 'samples' list")
    samples: List[SampleManifest] = []
    seen_ids: set[str] = set()
    seen_stems: set[str] = set()
    for i, raw in enumerate(data["samples"]):
        if not isinstance(raw, dict) or not raw.get("sample_id"):
            raise ManifestError(f"sample #{i} has no sample_id")
        sample_id = str(raw["sample_id"])
        if sample_id in seen_ids:
            raise ManifestError(f"duplicate sample_id {sample_id!r}")
        seen_ids.add(sample_id)
        images: List[ImageEntry] = []
        for raw_img in raw.get("images") or []:
            if isinstance(raw_img, str):
                raw_img = {"stem": raw_img}
            stem = raw_img.get("stem") if isinstance(raw_img, dict) else None
            if not stem:
                raise ManifestError(f"sample {sample_id!r}: image entry without stem")
            if stem in seen_stems:
                raise ManifestError(f"duplicate image stem {stem!r}")
            seen_stems.add(stem)
            images.append(
                ImageEntry(
                    stem=stem,
                    ground_truth=root / raw_img["ground_truth"] if raw_img.get("ground_truth") else None,
                    image=root / raw_img["image"] if raw_img.get("image") else None,
                    height=_optional_int(raw_img.get("height"), "height", stem),
                    width=_optional_int(raw_img.get("width"), "width", stem),
                )
            )
        if not images:
            raise ManifestError(f"sample {sample_id!r} lists no images")
        meta = raw.get("metadata") or {}
        samples.append(
            SampleManifest(
                sample_id=sample_id,
                images=images,
                manual_count=_optional_int(raw.get("manual_count"), "manual_count", sample_id),
                metadata=SampleMetadata(
                    soil_layer=_choice(meta.get("soil_layer"), SOIL_LAYERS, "soil_layer", sample_id),
                    density=_choice(meta.get("density"), DENSITIES, "density", sample_id),
                    condition=_choice(meta.get("condition"), CONDITIONS, "condition", sample_id),
                ),
            )
        )
    if not samples:
        raise ManifestError("no samples")
    return Manifest(samples=samples, root=root)


def load_manifest(path: Path) -> Manifest:
    """Load a manifest JSON file; relative paths resolve against its directory."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    return parse_manifest(data, path.parent)


def manifest_to_json(manifest: Manifest, root: Path) -> Dict[str, Any]:
    samples = []
    for sample in manifest.samples:
        entry: Dict[str, Any] = {"sample_id": sample.sample_id}
        if sample.manual_count is not None:
            entry["manual_count"] = sample.manual_count
        meta = sample.metadata.to_json()
        if meta:
            entry["metadata"] = meta
        entry["images"] = [img.to_json(root) for img in sample.images]
        samples.append(entry)
    return {"samples": samples}


def save_manifest(path: Path, manifest: Manifest) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(manifest_to_json(manifest, path.parent), f, indent=2, sort_keys=False)
        f.write("\n")

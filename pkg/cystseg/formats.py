"""On-disk raster codecs: grayscale PFM score maps and 16-bit PNG label maps."""
from __future__ import annotations

import io
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np
from PIL import Image

from .core import LABEL_DTYPE, as_label_map, check_grid
from .errors import ValidationError

PathLike = Union[str, Path]

MAX_PNG_LABEL = 65535


def encode_pfm(scores: np.ndarray) -> bytes:
    """Grayscale ``Pf`` payload, little-endian (scale -1.0), rows stored bottom-up."""
    arr = check_grid(scores, "score map")
    h, w = arr.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    body = np.flipud(arr).astype("<f4").tobytes()
    return header + body


def _read_header_line(stream: BinaryIO, name: str) -> str:
    line = stream.readline()
    if not line:
        raise ValidationError(f"{name}: truncated PFM header")
    try:
        return line.decode("ascii").strip()
    except UnicodeDecodeError as exc:
        raise ValidationError(f"{name}: PFM header is not ASCII") from exc


def decode_pfm(payload: bytes, name: str = "PFM payload") -> np.ndarray:
    stream = io.BytesIO(payload)
    tag = _read_header_line(stream, name)
    if tag != "Pf":
        raise ValidationError(f"{name}: expected grayscale PFM tag 'Pf', got {tag!r}")
    dims = _read_header_line(stream, name).split()
    scale_line = _read_header_line(stream, name)
    try:
        if len(dims) != 2:
            raise ValueError("need width and height")
        width, height = int(dims[0]), int(dims[1])
        scale = float(scale_line)
    except ValueError as exc:
        raise ValidationError(f"{name}: bad PFM header {' '.join(dims)!r} / {scale_line!r} ({exc})") from exc
    if width < 1 or height < 1:
        raise ValidationError(f"{name}: PFM size must be at least 1x1, got {width}x{height}")
    if scale == 0 or not np.isfinite(scale):
        raise ValidationError(f"{name}: PFM scale must be finite and nonzero, got {scale_line!r}")
    dtype = "<f4" if scale < 0 else ">f4"
    body = stream.read()
    expected = width * height * 4
    if len(body) != expected:
        raise ValidationError(f"{name}: PFM body has {len(body)} bytes, expected {expected}")
    data = np.frombuffer(body, dtype=dtype).reshape(height, width)
    return np.flipud(data).astype(np.float32)


def read_pfm(path: PathLike) -> np.ndarray:
    return decode_pfm(Path(path).read_bytes(), str(path))


def write_pfm(path: PathLike, scores: np.ndarray) -> None:
    Path(path).write_bytes(encode_pfm(scores))


def write_label_png(path: PathLike, labels: np.ndarray) -> None:
    """Write a label map as a 16-bit grayscale PNG."""
    arr = as_label_map(labels)
    if arr.size and int(arr.max()) > MAX_PNG_LABEL:
        raise ValidationError(f"label {int(arr.max())} does not fit a 16-bit PNG (max {MAX_PNG_LABEL})")
    Image.fromarray(arr.astype(np.uint16)).save(Path(path), format="PNG")


def read_label_png(path: PathLike) -> np.ndarray:
    with Image.open(Path(path)) as img:
        arr = np.array(img)
    if arr.ndim != 2:
        raise ValidationError(f"{path}: label map must be single-channel, got shape {arr.shape}")
    return as_label_map(arr.astype(LABEL_DTYPE))


def write_mask_png(path: PathLike, mask: np.ndarray) -> None:
    """Write a binary mask as an 8-bit PNG with values 0/255."""
    arr = check_grid(mask, "mask").astype(bool)
    Image.fromarray(np.where(arr, 255, 0).astype(np.uint8)).save(Path(path), format="PNG")


def read_rgb(path: PathLike) -> np.ndarray:
    with Image.open(Path(path)) as img:
        return np.array(img.convert("RGB"), dtype=np.uint8)


def write_rgb(path: PathLike, image: np.ndarray) -> None:
    arr = np.asarray(image, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"RGB image must be HxWx3, got {arr.shape}")
    Image.fromarray(arr).save(Path(path), format="PNG")

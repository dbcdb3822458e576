"""Configuration loading utilities."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .errors import ConfigError
from .instance import PipelineParams
from .scorer import SCORER_KINDS
from .stats import PVALUE_METHODS

TOKEN_ENV = "CYSTSEG_API_TOKEN"
RUN_ONLY_KEYS = frozenset({"threads", "output_dir", "force"})


@dataclass
class Config:
    """Dataclass representing a pipeline run's parameters."""

    scorer: str = "file"
    score_dir: Path = Path("./scores")
    tile_size: int = 512
    overlap: int = 64
    cyst_threshold: float = 0.5
    boundary_threshold: float = 0.5
    min_size: int = 500
    connectivity: int = 8
    boundary_radius: int = 2
    threads: int = 1
    seed: int = 0
    noise_sigma: float = 0.0
    blur_radius: int = 0
    debris_rate: float = 0.0
    endpoint: str = ""
    timeout_sec: float = 20
    retries: int = 2
    max_in_flight: int = 4
    user_agent: str = "cystseg/0.1"
    output_dir: Path = Path("./out")
    force: bool = False
    bin_width: int = 250
    ad_resamples: int = 10_000
    pvalue_method: str = "auto"
    target_min_pixels: int = 500

    def __post_init__(self) -> None:
        self.score_dir = Path(self.score_dir)
        self.output_dir = Path(self.output_dir)
        self.validate()

    def validate(self) -> None:
        if self.scorer not in SCORER_KINDS:
            raise ConfigError(f"scorer must be one of {SCORER_KINDS}, got {self.scorer!r}")
        if self.tile_size < 1:
            raise ConfigError(f"tile_size must be >= 1, got {self.tile_size}")
        if not 0 <= self.overlap < self.tile_size:
            raise ConfigError(f"overlap must satisfy 0 <= overlap < tile_size, got {self.overlap}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.boundary_radius < 1:
            raise ConfigError(f"boundary_radius must be >= 1, got {self.boundary_radius}")
        if self.noise_sigma < 0 or self.blur_radius < 0 or self.debris_rate < 0:
            raise ConfigError("noise_sigma, blur_radius and debris_rate must be >= 0")
        if self.retries < 0 or self.max_in_flight < 1:
            raise ConfigError("retries must be >= 0 and max_in_flight >= 1")
        if self.bin_width < 1 or self.ad_resamples < 1:
            raise ConfigError("bin_width and ad_resamples must be >= 1")
        if self.pvalue_method not in PVALUE_METHODS:
            raise ConfigError(f"pvalue_method must be one of {PVALUE_METHODS}, got {self.pvalue_method!r}")
        self.pipeline_params()

    def pipeline_params(self) -> PipelineParams:
        try:
            return PipelineParams(
                cyst_threshold=self.cyst_threshold,
                boundary_threshold=self.boundary_threshold,
                min_size=self.min_size,
                connectivity=self.connectivity,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_record(self) -> Dict[str, Any]:
        """JSON-ready record echoed into report headers.

        Keys that cannot change results (pool size, output location, overwrite
        policy) are left out so reports compare byte-for-byte across runs.
        """
        record = {k: v for k, v in asdict(self).items() if k not in RUN_ONLY_KEYS}
        for key, value in record.items():
            if isinstance(value, Path):
                record[key] = value.as_posix()
        return record

    def api_token(self) -> Optional[str]:
        return os.getenv(TOKEN_ENV) or None


def _normalize(data: Dict[str, Any]) -> Dict[str, Any]:
    known = {f.name for f in fields(Config)}
    out = {}
    for key, value in data.items():
        name = str(key).replace("-", "_")
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        out[name] = value
    return out


def load_config(path: Optional[Path]) -> Config:
    """Load configuration from YAML file; ``None`` gives the defaults.

    Keys may use hyphens (``min-size``) or underscores (``min_size``).
    """
    if path is None:
        return Config()
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a key-value mapping")
    try:
        return Config(**_normalize(data))
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def with_overrides(cfg: Config, **overrides: Any) -> Config:
    """Copy of ``cfg`` with every non-None override applied (CLI flags win)."""
    changes = {k: v for k, v in _normalize(overrides).items() if v is not None}
    return replace(cfg, **changes) if changes else cfg

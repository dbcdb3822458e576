"""Report output: one writer per command run, config echoed into every report."""
from __future__ import annotations

import csv
import json
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence

import numpy as np

from .errors import OutputExistsError
from .formats import write_label_png, write_mask_png, write_rgb

logger = logging.getLogger(__name__)

PACKAGE_LOGGER = "cystseg"


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ReportWriter:
    """Writes every output file of a command; refuses to overwrite unless forced."""

    def __init__(self, output_dir: Path, config_record: Mapping[str, Any], force: bool = False) -> None:
        self.output_dir = Path(output_dir)
        self.config_record = dict(config_record)
        self.force = force

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def claim(self, names: Iterable[str]) -> None:
        """Fail before writing anything if any target already exists."""
        if self.force:
            return
        existing = [self.path(n) for n in names if self.path(n).exists()]
        if existing:
            shown = ", ".join(str(p) for p in existing[:5])
            more = f" (+{len(existing) - 5} more)" if len(existing) > 5 else ""
            raise OutputExistsError(f"refusing to overwrite {shown}{more}; pass --force to replace")

    def _prepare(self, name: str) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = self._prepare(name)
        with path.open("w", encoding="utf-8", newline="") as f:
            f.write("# config: " + json.dumps(self.config_record, sort_keys=True) + "\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        return path

    def write_json(self, name: str, payload: Mapping[str, Any]) -> Path:
        path = self._prepare(name)
        body = {"config": self.config_record, **payload}
        with path.open("w", encoding="utf-8") as f:
            json.dump(body, f, indent=2, sort_keys=True)
            f.write("\n")
        return path

    def write_labels(self, name: str, labels: np.ndarray) -> Path:
        path = self._prepare(name)
        write_label_png(path, labels)
        return path

    def write_mask(self, name: str, mask: np.ndarray) -> Path:
        path = self._prepare(name)
        write_mask_png(path, mask)
        return path

    def write_rgb(self, name: str, image: np.ndarray) -> Path:
        path = self._prepare(name)
        write_rgb(path, image)
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self._prepare(name)
        path.write_text(text, encoding="utf-8")
        return path


def read_csv_rows(path: Path) -> List[Dict[str, str]]:
    """Rows of a report CSV as dicts, skipping ``#`` comment lines."""
    with Path(path).open("r", encoding="utf-8", newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


@contextmanager
def file_log(output_dir: Path, command: str) -> Iterator[Optional[logging.Handler]]:
    """Attach ``<output_dir>/logs/<command>.log`` to the package logger for one run."""
    logs_dir = Path(output_dir) / "logs"
    logs_dir.mkdir(parents=True, exist_ok=True)
    path = (logs_dir / f"{command}.log").resolve()
    pkg_logger = logging.getLogger(PACKAGE_LOGGER)
    if any(isinstance(h, logging.FileHandler) and Path(h.baseFilename) == path for h in pkg_logger.handlers):
        yield None
        return
    handler = logging.FileHandler(path, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler.setLevel(logging.INFO)
    previous = pkg_logger.level
    pkg_logger.addHandler(handler)
    if previous == logging.NOTSET or previous > logging.INFO:
        pkg_logger.setLevel(logging.INFO)
    try:
        yield handler
    finally:
        pkg_logger.removeHandler(handler)
        pkg_logger.setLevel(previous)
        handler.close()

"""Miscellaneous utility helpers."""
from __future__ import annotations

import hashlib
import logging
import time
from pathlib import Path

import requests

logger = logging.getLogger(__name__)

RETRY_SLEEP_SEC = 0.5


def request_with_retries(
    session: requests.Session, method: str, url: str, retries: int, timeout: float, **kwargs
) -> requests.Response:
    """Perform an HTTP request, retrying connection errors and 5xx responses.

    4xx responses are returned immediately. After ``retries`` extra attempts
    the last exception is raised (``requests.HTTPError`` for a 5xx status).
    """
    for attempt in range(retries + 1):
        try:
            resp = session.request(method, url, timeout=timeout, **kwargs)
            if resp.status_code >= 500:
                resp.raise_for_status()
            return resp
        except requests.RequestException as exc:
            if attempt == retries:
                raise
            logger.info("Attempt %d/%d for %s failed: %s", attempt + 1, retries + 1, url, exc)
            time.sleep(RETRY_SLEEP_SEC)
    raise AssertionError("unreachable")


def derive_seed(seed: int, key: str) -> int:
    """Stable 63-bit seed for ``key`` under a base ``seed``."""
    digest = hashlib.sha256(f"{seed}:{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def sha256_file(path: Path) -> str:
    """Compute SHA-256 hash of a file."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(8192), b""):
            h.update(chunk)
    return h.hexdigest()

"""Phenotyping and count-validation statistics."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .core import as_label_map
from .errors import StatsError

logger = logging.getLogger(__name__)

PVALUE_METHODS = ("auto", "interpolate", "permutation")

# significance levels of the tabulated k-sample AD percentiles
AD_SIGNIFICANCE = np.array([0.25, 0.1, 0.05, 0.025, 0.01, 0.005, 0.001])


@dataclass
class AreaSample:
    population_id: str
    areas: List[int]


class CountPair(NamedTuple):
    sample_id: str
    manual: int
    automatic: int


class LineFit(NamedTuple):
    slope: float
    intercept: float


class ADResult(NamedTuple):
    statistic: float
    pvalue: float
    method: str
    critical_values: Tuple[float, ...]


class Histogram(NamedTuple):
    bins: List[Tuple[float, float]]
    mean: float


def instance_areas(labels: np.ndarray) -> List[int]:
    """Pixel count per nonzero label, ascending label order."""
    counts = np.bincount(as_label_map(labels).ravel())
    return [int(c) for c in counts[1:] if c > 0]


def _paired(x: Sequence[float], y: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.ndim != 1 or xa.shape != ya.shape:
        raise StatsError(f"x and y must be 1-D of equal length, got {xa.shape} and {ya.shape}")
    if xa.size < 2:
        raise StatsError("need at least two pairs")
    return xa, ya


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    xa, ya = _paired(x, y)
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise StatsError("pearson correlation undefined for zero variance")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def linear_fit(x: Sequence[float], y: Sequence[float]) -> LineFit:
    """Ordinary least squares y ~ slope * x + intercept."""
    xa, ya = _paired(x, y)
    dx = xa - xa.mean()
    sxx = float(np.dot(dx, dx))
    if sxx == 0.0:
        raise StatsError("linear fit undefined for constant x")
    slope = float(np.dot(dx, ya - ya.mean())) / sxx
    return LineFit(slope, float(ya.mean() - slope * xa.mean()))


def _tail_p(statistic: float, critical: np.ndarray) -> float:
    """p past the largest percentile: the log-significance fit continued along its tangent.

    The slope is held at or below zero so p keeps decreasing as the statistic grows.
    """
    coeffs = np.polyfit(critical, np.log(AD_SIGNIFICANCE), 2)
    top = float(critical.max())
    slope = float(np.polyval(np.polyder(coeffs), top))
    log_p = float(np.polyval(coeffs, top)) + min(slope, 0.0) * (statistic - top)
    return float(min(math.exp(log_p), float(AD_SIGNIFICANCE.min())))


def _anderson(arrays: Sequence[np.ndarray], method: Optional[stats.PermutationMethod] = None):
    # capped/floored table p-values warn; the tails are handled here instead
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        try:
            return stats.anderson_ksamp(arrays, midrank=True, method=method)
        except ValueError as exc:
            raise StatsError(str(exc)) from exc


def ad_ksample(
    samples: Sequence[AreaSample] | Sequence[Sequence[float]],
    pvalue_method: str = "auto",
    resamples: int = 10_000,
    seed: int = 0,
) -> ADResult:
    """Standardized k-sample Anderson-Darling statistic (midrank version) and p-value.

    ``interpolate`` reads p from the percentile table, continues the fit past
    its upper end and falls back to the permutation estimate below its lower
    end (p > 0.25). ``permutation`` always resamples group assignments with a
    seeded generator. ``auto`` interpolates inside the table only.
    """
    if pvalue_method not in PVALUE_METHODS:
        raise StatsError(f"pvalue_method must be one of {PVALUE_METHODS}, got {pvalue_method!r}")
    arrays = [
        np.asarray(s.areas if isinstance(s, AreaSample) else s, dtype=np.float64).ravel() for s in samples
    ]
    if len(arrays) < 2:
        raise StatsError("AD k-sample test needs at least two samples")
    for i, arr in enumerate(arrays):
        if arr.size < 2:
            raise StatsError(f"sample #{i} has {arr.size} observation(s); at least 2 required")
    pooled = np.concatenate(arrays)
    if np.unique(pooled).size < 2:
        raise StatsError("AD k-sample test needs more than one distinct observation")
    if pooled.size < 4:
        raise StatsError("AD k-sample test needs at least 4 observations in total")

    table = _anderson(arrays)
    statistic = float(table.statistic)
    critical = np.asarray(table.critical_values, dtype=np.float64)

    if pvalue_method == "permutation" or statistic < critical.min():
        method = "permutation"
    elif statistic > critical.max():
        method = "permutation" if pvalue_method == "auto" else "interpolate"
    else:
        method = "interpolate"

    if method == "permutation":
        permuted = _anderson(
            arrays,
            stats.PermutationMethod(n_resamples=resamples, random_state=np.random.default_rng(seed)),
        )
        pvalue = float(permuted.pvalue)
    elif statistic > critical.max():
        pvalue = _tail_p(statistic, critical)
    else:
        pvalue = float(table.pvalue)
    logger.debug("AD k=%d n=%d statistic=%.6f p=%.6g (%s)", len(arrays), pooled.size, statistic, pvalue, method)
    return ADResult(statistic, pvalue, method, tuple(float(c) for c in critical))


def histogram_density(areas: Sequence[float], bin_width: float = 250) -> Histogram:
    """Normalized histogram (sum of density * bin_width == 1) with bins aligned to multiples of ``bin_width``."""
    values = np.asarray(areas, dtype=np.float64)
    if values.size == 0:
        raise StatsError("histogram of an empty sample")
    if bin_width < 1:
        raise StatsError(f"bin_width must be >= 1, got {bin_width}")
    start = math.floor(values.min() / bin_width) * bin_width
    n_bins = int(math.floor((values.max() - start) / bin_width)) + 1
    edges = start + bin_width * np.arange(n_bins + 1)
    idx = np.clip(np.floor((values - start) / bin_width).astype(np.int64), 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    density = counts / (values.size * float(bin_width))
    centers = (edges[:-1] + edges[1:]) / 2.0
    return Histogram([(float(c), float(d)) for c, d in zip(centers, density)], float(values.mean()))


def summarize(sample: AreaSample) -> Dict[str, float]:
    values = np.asarray(sample.areas, dtype=np.float64)
    if values.size == 0:
        raise StatsError(f"population {sample.population_id!r} is empty")
    return {
        "n": int(values.size),
        "mean": float(values.mean()),
        "median": float(np.median(values)),
        "std": float(values.std(ddof=1)) if values.size > 1 else 0.0,
    }


def count_agreement(pairs: Sequence[CountPair]) -> Dict[str, Optional[float]]:
    """Pearson r and least-squares line of manual (x) vs automatic (y) counts."""
    x = [p.manual for p in pairs]
    y = [p.automatic for p in pairs]
    fit = linear_fit(x, y)
    try:
        r: Optional[float] = pearson(x, y)
    except StatsError:
        r = None
    return {"n": len(pairs), "pearson_r": r, "slope": fit.slope, "intercept": fit.intercept}

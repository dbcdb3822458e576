"""Evaluate predicted label maps against ground truth, pooled over the dataset."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from tqdm import tqdm

from .batch import labels_name
from .config import Config
from .core import check_same_shape
from .errors import ManifestError, StatsError
from .formats import read_label_png
from .manifest import ImageEntry, Manifest
from .metrics import (
    AJIParts,
    CURVE_THRESHOLDS,
    ImageMatch,
    afnr,
    aji_parts,
    appv,
    average_precision,
    fnr_at,
    match_image,
    ppv_at,
    precision_at,
    ratio_or_none,
    tally,
)
from .reports import ReportWriter, file_log
from .stats import ad_ksample, instance_areas, summarize, AreaSample

logger = logging.getLogger(__name__)

THRESHOLDS_CSV = "metrics_thresholds.csv"
SUMMARY_JSON = "metrics_summary.json"
MATCHES_CSV = "matches.csv"
LABELS_SUFFIX = ".labels.png"


@dataclass
class ImageEvaluation:
    stem: str
    match: ImageMatch
    aji: AJIParts
    gt_areas: List[int]
    pred_areas: List[int]


def evaluate_image(image: ImageEntry, pred_path: Path) -> ImageEvaluation:
    gt = read_label_png(Path(image.ground_truth))
    pred = read_label_png(pred_path)
    check_same_shape(pred, gt, image.stem)
    return ImageEvaluation(
        stem=image.stem,
        match=match_image(pred, gt),
        aji=aji_parts(pred, gt),
        gt_areas=instance_areas(gt),
        pred_areas=instance_areas(pred),
    )


def _pair_predictions(manifest: Manifest, predictions: Path) -> List[Tuple[ImageEntry, Path]]:
    pairs = []
    for _, image in manifest.images():
        if image.ground_truth is None:
            raise ManifestError(f"{image.stem}: no ground_truth path; evaluation needs ground truth for every image")
        path = predictions / labels_name(image.stem)
        if not path.is_file():
            raise ManifestError(f"{image.stem}: no prediction file {path}")
        pairs.append((image, path))
    stems = {image.stem for image, _ in pairs}
    extra = sorted(
        p.name for p in predictions.glob(f"*{LABELS_SUFFIX}") if p.name[: -len(LABELS_SUFFIX)] not in stems
    )
    if extra:
        raise ManifestError(f"prediction files without a manifest entry: {', '.join(extra)}")
    return pairs


def _area_agreement(evaluations: List[ImageEvaluation], cfg: Config) -> Optional[Dict[str, Any]]:
    gt = AreaSample("ground_truth", [a for e in evaluations for a in e.gt_areas])
    pred = AreaSample("predicted", [a for e in evaluations for a in e.pred_areas])
    try:
        result = ad_ksample([gt, pred], cfg.pvalue_method, cfg.ad_resamples, cfg.seed)
    except StatsError as exc:
        logger.info("Area distribution test skipped: %s", exc)
        return None
    return {
        "ground_truth": summarize(gt),
        "predicted": summarize(pred),
        "statistic": result.statistic,
        "p": result.pvalue,
        "p_method": result.method,
    }


def _safe(fn, t) -> Optional[float]:
    try:
        return fn(t)
    except ValueError:
        return None


def cmd_evaluate(manifest: Manifest, predictions: Path, cfg: Config) -> Dict[str, Any]:
    """Threshold table, AP/APPV/AFNR/AJI summary and per-instance matches."""
    pairs = _pair_predictions(manifest, Path(predictions))
    writer = ReportWriter(cfg.output_dir, cfg.to_record(), cfg.force)
    writer.claim([THRESHOLDS_CSV, SUMMARY_JSON, MATCHES_CSV])

    with file_log(cfg.output_dir, "evaluate"):
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            evaluations = list(
                tqdm(
                    pool.map(lambda pair: evaluate_image(*pair), pairs),
                    total=len(pairs),
                    desc="Evaluating",
                    dynamic_ncols=True,
                )
            )
        pooled = tally((e.match for e in evaluations), CURVE_THRESHOLDS)
        aji_total = AJIParts()
        for e in evaluations:
            aji_total = aji_total + e.aji
            logger.info("%s: %d predictions, %d ground-truth instances", e.stem, e.match.n_pred, e.match.n_gt)

        rows = []
        for tau in CURVE_THRESHOLDS:
            c = pooled.at(tau)
            rows.append(
                [
                    f"{tau:.2f}", c.tp, c.fp, c.fn,
                    ratio_or_none(precision_at, pooled, tau),
                    ratio_or_none(ppv_at, pooled, tau),
                    ratio_or_none(fnr_at, pooled, tau),
                ]
            )
        writer.write_csv(THRESHOLDS_CSV, ["tau", "tp", "fp", "fn", "precision", "ppv", "fnr"], rows)
        writer.write_csv(
            MATCHES_CSV,
            ["stem", "pred_label", "gt_label", "iou"],
            [
                [e.stem, m.pred_label, m.gt_label, m.iou]
                for e in evaluations
                for m in e.match.matches
            ],
        )
        summary = {
            "n_images": len(evaluations),
            "n_ground_truth": sum(e.match.n_gt for e in evaluations),
            "n_predicted": sum(e.match.n_pred for e in evaluations),
            "AP": _safe(average_precision, pooled),
            "APPV": _safe(appv, pooled),
            "AFNR": _safe(afnr, pooled),
            "AJI": aji_total.value if aji_total.union else None,
            "area_distribution": _area_agreement(evaluations, cfg),
        }
        writer.write_json(SUMMARY_JSON, summary)
    return summary

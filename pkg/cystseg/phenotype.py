"""Count validation and area phenotyping across populations."""
from __future__ import annotations

import logging
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .config import Config
from .errors import StatsError, ValidationError
from .reports import ReportWriter, file_log, read_csv_rows
from .stats import AreaSample, CountPair, ad_ksample, count_agreement, histogram_density, summarize

logger = logging.getLogger(__name__)

SUMMARY_JSON = "phenotype_summary.json"
AREAS_CSV = "phenotype_areas.csv"
HISTOGRAM_CSV = "area_histogram.csv"
SOURCE_GROUP = "source"


def read_count_pairs(path: Path) -> List[Dict[str, Any]]:
    """Samples of a counts CSV that carry a manual count."""
    rows = []
    for row in read_csv_rows(path):
        if not row.get("manual_count"):
            continue
        try:
            rows.append(
                {
                    "pair": CountPair(row["sample_id"], int(row["manual_count"]), int(row["automatic_count"])),
                    "soil_layer": row.get("soil_layer") or None,
                    "density": row.get("density") or None,
                    "condition": row.get("condition") or None,
                }
            )
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"{path}: malformed counts row {row} ({exc})") from exc
    return rows


def count_report(rows: List[Dict[str, Any]]) -> Dict[str, Any]:
    if len(rows) < 2:
        raise StatsError(f"count validation needs at least two samples with manual counts, got {len(rows)}")
    report: Dict[str, Any] = {"overall": count_agreement([r["pair"] for r in rows])}

    by_condition: Dict[str, Optional[Dict[str, Any]]] = {}
    conditions = sorted({r["condition"] for r in rows if r["condition"]})
    for condition in conditions:
        subset = [r["pair"] for r in rows if r["condition"] == condition]
        try:
            by_condition[condition] = count_agreement(subset)
        except StatsError as exc:
            logger.warning("No count fit for condition %s: %s", condition, exc)
            by_condition[condition] = None
    report["by_condition"] = by_condition

    groups: Dict[tuple, List[CountPair]] = defaultdict(list)
    for r in rows:
        groups[(r["soil_layer"] or "", r["density"] or "")].append(r["pair"])
    report["groups"] = [
        {
            "soil_layer": layer or None,
            "density": density or None,
            "n": len(pairs),
            "manual_mean": sum(p.manual for p in pairs) / len(pairs),
            "automatic_mean": sum(p.automatic for p in pairs) / len(pairs),
        }
        for (layer, density), pairs in sorted(groups.items())
    ]
    return report


def read_area_rows(paths: Sequence[Path], group_by: str) -> List[Dict[str, Any]]:
    rows = []
    for path in paths:
        for row in read_csv_rows(path):
            population = Path(path).stem if group_by == SOURCE_GROUP else row.get(group_by)
            if not population:
                raise ValidationError(f"{path}: row without a {group_by!r} value: {row}")
            try:
                area = int(row["area"])
            except (KeyError, ValueError) as exc:
                raise ValidationError(f"{path}: malformed area row {row} ({exc})") from exc
            rows.append(
                {
                    "population": population,
                    "sample_id": row.get("sample_id", ""),
                    "stem": row.get("stem", ""),
                    "label": row.get("label", ""),
                    "area": area,
                }
            )
    return rows


def cmd_phenotype(
    cfg: Config,
    counts: Optional[Path] = None,
    areas: Sequence[Path] = (),
    group_by: str = "soil_layer",
) -> Dict[str, Any]:
    """Count agreement (Pearson, line fit) and area distributions per population (AD test)."""
    if counts is None and not areas:
        raise ValidationError("phenotype needs a counts CSV, area CSVs, or both")
    writer = ReportWriter(cfg.output_dir, cfg.to_record(), cfg.force)
    names = [SUMMARY_JSON]
    if areas:
        names += [AREAS_CSV, HISTOGRAM_CSV]
    writer.claim(names)

    summary: Dict[str, Any] = {}
    with file_log(cfg.output_dir, "phenotype"):
        if counts is not None:
            summary["counts"] = count_report(read_count_pairs(Path(counts)))
            logger.info("Count agreement over %d samples", summary["counts"]["overall"]["n"])

        if areas:
            rows = read_area_rows([Path(p) for p in areas], group_by)
            grouped: Dict[str, List[int]] = defaultdict(list)
            for row in rows:
                grouped[row["population"]].append(row["area"])
            samples = [AreaSample(pid, grouped[pid]) for pid in sorted(grouped)]
            if len(samples) < 2:
                raise StatsError(f"AD test needs at least two populations, found {[s.population_id for s in samples]}")
            result = ad_ksample(samples, cfg.pvalue_method, cfg.ad_resamples, cfg.seed)
            summary["group_by"] = group_by
            summary["populations"] = {s.population_id: summarize(s) for s in samples}
            summary["ad"] = {"statistic": result.statistic, "p": result.pvalue, "p_method": result.method}
            logger.info("AD k-sample over %d populations: T=%.4f p=%.4g", len(samples), result.statistic, result.pvalue)

            hist_rows = []
            for s in samples:
                hist = histogram_density(s.areas, cfg.bin_width)
                hist_rows += [[s.population_id, center, density] for center, density in hist.bins]
            writer.write_csv(
                AREAS_CSV,
                ["population", "sample_id", "stem", "label", "area"],
                [[r["population"], r["sample_id"], r["stem"], r["label"], r["area"]] for r in rows],
            )
            writer.write_csv(HISTOGRAM_CSV, ["population", "bin_center", "density"], hist_rows)

        writer.write_json(SUMMARY_JSON, summary)
    return summary

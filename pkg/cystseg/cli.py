"""Command line interface for cystseg."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv

from .batch import cmd_segment, cmd_targets
from .config import Config, load_config, with_overrides
from .errors import BatchError, CystsegError, ValidationError
from .evaluate import cmd_evaluate
from .generate import cmd_generate
from .manifest import load_manifest
from .phenotype import SOURCE_GROUP, cmd_phenotype
from .scorer import SCORER_KINDS

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def fail(message: str, code: int) -> int:
    print(f"ERROR: {message}", file=sys.stderr)
    return code


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="Path to YAML config file")
    parser.add_argument("--output-dir", type=Path, help="Directory for every output of the run")
    parser.add_argument("--threads", type=int, help="Worker pool size")
    parser.add_argument("--seed", type=int, help="Base seed for every random draw")
    parser.add_argument("--force", action="store_true", default=None, help="Overwrite existing outputs")
    parser.add_argument("--verbose", action="store_true", help="Enable verbose logging to the console")


def _pipeline(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scorer", choices=SCORER_KINDS, help="Score-map provider")
    parser.add_argument("--score-dir", type=Path, help="Directory of PFM score maps (file scorer)")
    parser.add_argument("--tile-size", type=int, help="Square tile side in pixels")
    parser.add_argument("--overlap", type=int, help="Tile overlap in pixels")
    parser.add_argument("--min-size", type=int, help="Smallest instance area kept, in pixels")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cystseg", description="Cyst instance segmentation and phenotyping")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="Segment every image of a manifest")
    p.add_argument("manifest", type=Path)
    _common(p)
    _pipeline(p)

    p = sub.add_parser("evaluate", help="Score predicted label maps against ground truth")
    p.add_argument("manifest", type=Path)
    p.add_argument("predictions", type=Path, help="Directory holding <stem>.labels.png files")
    _common(p)

    p = sub.add_parser("phenotype", help="Count validation and area distribution statistics")
    p.add_argument("--counts", type=Path, help="counts.csv from segment")
    p.add_argument("--areas", type=Path, nargs="+", default=[], help="One or more areas.csv files")
    p.add_argument(
        "--group-by",
        default="soil_layer",
        help=f"Area CSV column defining populations, or '{SOURCE_GROUP}' for one population per file",
    )
    _common(p)

    p = sub.add_parser("generate", help="Write a synthetic dataset and its manifest")
    p.add_argument("scene_spec", type=Path, help="YAML scene spec")
    _common(p)

    p = sub.add_parser("targets", help="Export binary cyst/boundary training patches")
    p.add_argument("manifest", type=Path)
    p.add_argument("--tile-size", type=int, help="Patch side in pixels")
    _common(p)
    return parser


def resolve_config(args: argparse.Namespace) -> Config:
    cfg = load_config(args.config)
    return with_overrides(
        cfg,
        output_dir=args.output_dir,
        threads=args.threads,
        seed=args.seed,
        force=args.force,
        scorer=getattr(args, "scorer", None),
        score_dir=getattr(args, "score_dir", None),
        tile_size=getattr(args, "tile_size", None),
        overlap=getattr(args, "overlap", None),
        min_size=getattr(args, "min_size", None),
    )


def run(args: argparse.Namespace) -> None:
    cfg = resolve_config(args)
    if args.command == "segment":
        summary = cmd_segment(load_manifest(args.manifest), cfg)
        print(
            f"Segmented {summary.n_images} images in {summary.n_samples} samples; "
            f"{summary.n_instances} instances; {len(summary.failures)} failures"
        )
    elif args.command == "evaluate":
        summary = cmd_evaluate(load_manifest(args.manifest), args.predictions, cfg)
        print(
            f"Evaluated {summary['n_images']} images; AP={summary['AP']} AJI={summary['AJI']} "
            f"AFNR={summary['AFNR']}"
        )
    elif args.command == "phenotype":
        summary = cmd_phenotype(cfg, args.counts, args.areas, args.group_by)
        parts = []
        if "counts" in summary:
            overall = summary["counts"]["overall"]
            parts.append(f"r={overall['pearson_r']} over {overall['n']} samples")
        if "ad" in summary:
            parts.append(f"AD T={summary['ad']['statistic']:.4f} p={summary['ad']['p']:.4g}")
        print("Phenotype: " + "; ".join(parts))
    elif args.command == "generate":
        manifest = cmd_generate(args.scene_spec, cfg)
        print(f"Generated {len(manifest.stems())} scenes in {len(manifest.samples)} samples under {cfg.output_dir}")
    else:
        kept = cmd_targets(load_manifest(args.manifest), cfg)
        print(f"Exported {kept} target patches")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if not args.verbose:
        # file logs run the package logger at INFO; keep the console quiet
        for handler in logging.getLogger().handlers:
            handler.setLevel(logging.WARNING)
    load_dotenv()

    try:
        run(args)
    except BatchError as exc:
        return fail(str(exc), EXIT_VALIDATION if exc.validation_only else EXIT_RUNTIME)
    except ValidationError as exc:
        return fail(str(exc), EXIT_VALIDATION)
    except (CystsegError, OSError) as exc:
        return fail(str(exc), EXIT_RUNTIME)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())

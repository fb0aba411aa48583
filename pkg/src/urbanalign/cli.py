"""Command-line interface.

Subcommands: ``validate``, ``synth``, ``run``, the stage commands
``train``/``align``/``context``/``report`` for partial reruns, and
``luminosity`` for image brightness checks. Exit codes: 0 on success,
2 when validation (or configuration) fails, 3 when a pipeline stage fails.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, pipeline, ratings, synth
from . import io as fmt
from .config import load_run_config
from .errors import ConfigError, UrbanAlignError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run configuration JSON")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--threads", type=int, default=None, help="worker cap (results unchanged)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urbanalign")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (
        ("validate", "validate the input dataset and write validation.json"),
        ("run", "run the full pipeline"),
        ("train", "feature screening, model fit, and explanations"),
        ("align", "buffer scores, agreement, and spatial clustering"),
        ("context", "contextual covariates for included points"),
        ("report", "agreement-vs-disagreement contrast tables"),
    ):
        p = sub.add_parser(name, help=text)
        _add_common(p)

    p = sub.add_parser("synth", help="generate a synthetic dataset bundle")
    p.add_argument("--spec", required=True, help="synthetic dataset spec JSON")
    p.add_argument("--out", required=True, help="bundle directory")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")

    p = sub.add_parser("luminosity", help="mean brightness of image files")
    p.add_argument("images", nargs="+", help="PNG/PPM image paths")
    p.add_argument("--out", required=True, help="output CSV path")
    return parser


def cmd_validate(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.threads)
    report = pipeline.stage_validate(cfg, args.out)
    for issue in report.errors:
        print(f"error [{issue.code}] {issue.table}: {issue.message}", file=sys.stderr)
    print(f"validation: {'ok' if report.ok else 'FAILED'} "
          f"({len(report.errors)} errors, {len(report.warnings)} warnings)")
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_run(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.threads)
    pipeline.run_all(cfg, args.out, config_path=args.config)
    print(f"wrote {len(pipeline.RUN_OUTPUTS) + 1} files to {args.out}")
    return EXIT_OK


def cmd_stage(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.threads)
    stage = {
        "train": pipeline.stage_train,
        "align": pipeline.stage_align,
        "context": pipeline.stage_context,
        "report": pipeline.stage_report,
    }[args.command]
    stage(cfg, args.out)
    print(f"stage {args.command} complete")
    return EXIT_OK


def cmd_synth(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if args.seed is not None:
        doc["seed"] = args.seed
    spec = synth.SynthSpec.from_dict(doc)
    bundle = synth.generate(spec)
    synth.write_bundle(bundle, args.out)
    print(f"wrote bundle with {len(bundle.images)} images and {len(bundle.ppgis)} points to {args.out}")
    return EXIT_OK


def cmd_luminosity(args) -> int:
    from PIL import Image
    import numpy as np

    rows = []
    for path in args.images:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=float)
        rows.append((Path(path).stem, ratings.luminosity(pixels)))
    fmt.write_csv(args.out, ["image_id", "luminosity"], rows)
    print(f"wrote {len(rows)} luminosity values to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "luminosity":
            return cmd_luminosity(args)
        return cmd_stage(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except pipeline.StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE
    except UrbanAlignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())

"""``sonarsynth`` command line.

Exit codes: 0 success, 1 validation error (bad config, manifest or input
path), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline


def _kv(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected section.field=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (or a config.lock from an earlier run)")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        type=_kv,
        default=[],
        metavar="SECTION.FIELD=VALUE",
        help="override one config field; VALUE is parsed as JSON when possible",
    )
    common.add_argument("--seed", type=int, help="seed for every stage (beats $SONARSYNTH_SEED)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="sonarsynth", description="Synthesize sonar-style training images and score detections."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("basegen", parents=[common], help="depth frames -> noisy colormapped base images")
    p.add_argument("manifest")
    p.add_argument("out_dir")

    p = sub.add_parser("train-style", parents=[common], help="train the multi-style network")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    p.add_argument("--iterations", type=int)
    p.add_argument("--resume", action="store_true", help="continue from the newest checkpoint in out_dir")

    p = sub.add_parser("stylize", parents=[common], help="apply one trained style to a manifest")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("style_id", type=int)
    p.add_argument("out_dir")

    p = sub.add_parser("augment", parents=[common], help="flip/affine copies + grayscale/inverted pairs")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    p.add_argument("--copies", type=int)

    p = sub.add_parser("eval-style", parents=[common], help="ATKI and Gram distances between two image sets")
    p.add_argument("set_a", help="manifest or directory of PNGs")
    p.add_argument("set_b", help="manifest or directory of PNGs")
    p.add_argument("out", help="output JSON path")

    p = sub.add_parser("eval-detect", parents=[common], help="PR curve and AP for a detections CSV")
    p.add_argument("detections")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    p.add_argument("--threshold", type=float, default=0.25, help="IOU threshold (default 0.25)")

    p = sub.add_parser("pipeline", parents=[common], help="run every stage end to end")
    p.add_argument("--manifest", help="depth manifest (overrides paths.manifest)")
    p.add_argument("--out-dir", help="output directory (overrides paths.out_dir)")
    return parser


def run(args) -> None:
    overrides = list(args.overrides)
    if getattr(args, "iterations", None) is not None:
        overrides.append(("train.iterations", args.iterations))
    if getattr(args, "copies", None) is not None:
        overrides.append(("copies", args.copies))
    if args.command == "pipeline":
        if args.manifest:
            overrides.append(("paths.manifest", args.manifest))
        if args.out_dir:
            overrides.append(("paths.out_dir", args.out_dir))
    cfg = pipeline.load_config(args.config, overrides, seed=args.seed)

    if args.command == "basegen":
        print(pipeline.cmd_basegen(args.manifest, cfg, args.out_dir))
    elif args.command == "train-style":
        print(pipeline.cmd_train_style(args.manifest, cfg, args.out_dir, resume=args.resume))
    elif args.command == "stylize":
        print(pipeline.cmd_stylize(args.checkpoint, args.manifest, args.style_id, args.out_dir, cfg))
    elif args.command == "augment":
        print(pipeline.cmd_augment(args.manifest, cfg, cfg.copies, args.out_dir))
    elif args.command == "eval-style":
        print(json.dumps(pipeline.cmd_eval_style(args.set_a, args.set_b, cfg, args.out)))
    elif args.command == "eval-detect":
        ap = pipeline.cmd_eval_detect(args.detections, args.manifest, args.out_dir, args.threshold, cfg)
        print(json.dumps({"ap": ap}))
    elif args.command == "pipeline":
        print(json.dumps(pipeline.cmd_pipeline(cfg), indent=2))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        run(args)
    except (ValueError, FileNotFoundError) as exc:
        # ConfigError and ManifestError are ValueErrors
        print(f"sonarsynth: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a runtime failure
        print(f"sonarsynth: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

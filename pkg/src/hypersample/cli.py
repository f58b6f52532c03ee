"""Command line entry point: ``hypersample synth | generate | evaluate``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 threshold
violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from . import runner
from .protocol import ProtocolError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_THRESHOLD = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _indices(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated frame indices, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hypersample", description="Consistent multi-view video sampling from a monocular video.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="render a scene spec into a dataset directory")
    p.add_argument("scene", help="scene spec JSON")
    p.add_argument("out_dir")

    p = sub.add_parser("generate", help="run a configured generation")
    p.add_argument("config", help="run config JSON (schema hypersample.run/1)")
    p.add_argument("--dataset")
    p.add_argument("--output")
    p.add_argument("--mode", choices=["internal", "external"])
    p.add_argument("--pipeline", choices=["guided", "baseline"])
    p.add_argument("--num-frames", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--target-indices", type=_indices, help="comma-separated frame indices (internal mode)")
    p.add_argument("--steps", type=int)
    p.add_argument("--cfg-scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--downsample", type=int)
    for name in ("ish", "hgs", "static"):
        p.add_argument(f"--with-{name}", dest=f"with_{name}", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--predictor", choices=["hallucinating", "oracle", "constant", "subprocess"])

    p = sub.add_parser("evaluate", help="score run directories against dataset ground truth")
    p.add_argument("runs", nargs="+", help="run directories")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="report directory (default: first run directory)")
    p.add_argument("--max-score", type=float, help="fail with exit code 4 if any run's mean exceeds this")
    p.add_argument("--static-only", action="store_true", help="score static background pixels only")
    return parser


def _apply_overrides(cfg: runner.RunConfig, args) -> runner.RunConfig:
    names = {f.name for f in dataclasses.fields(cfg)}
    updates = {k: v for k, v in vars(args).items() if k in names and v is not None}
    if args.predictor is not None:
        updates["predictor"] = {**cfg.predictor, "kind": args.predictor}
    if not updates:
        return cfg
    out = dataclasses.replace(cfg, **updates)
    out.validate()
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            out = runner.synth(args.scene, args.out_dir)
            print(f"dataset written to {out}")
        elif args.command == "generate":
            cfg = _apply_overrides(runner.load_config(args.config), args)
            manifest = runner.generate(cfg)
            print(f"{len(manifest['views'])} view(s) written to {cfg.output}")
        else:
            summary = runner.evaluate(args.runs, args.dataset, args.out, args.max_score, args.static_only)
            print(json.dumps(summary["means"], indent=2, sort_keys=True))
    except runner.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (runner.DataError, ProtocolError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except runner.ThresholdError as exc:
        print(f"threshold violated: {exc}", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

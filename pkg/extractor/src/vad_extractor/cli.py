"""Command-line entry points: extract a category, verify an export."""

from __future__ import annotations

import argparse
import sys

from .errors import ExtractError
from .extract import ExtractionConfig, extract_category
from .verify import verify_export


def _parse_taps(text: str) -> tuple[int, ...]:
    try:
        taps = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ExtractError(f"cannot parse taps {text!r}; expected e.g. 7,10,13")
    if not taps:
        raise ExtractError("empty tap list")
    return taps


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vad-extract")
    sub = parser.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("extract", help="extract one dataset category to feature files")
    ex.add_argument("--dataset", choices=["mvtec", "visa"], default="mvtec",
                    help="dataset family (both use the category/train/test/ground_truth layout)")
    ex.add_argument("--root", required=True, help="dataset root directory")
    ex.add_argument("--category", required=True)
    ex.add_argument("--taps", default="7,10,13",
                    help="comma-separated backbone block indices (default 7,10,13)")
    ex.add_argument("--resolution", type=int, default=224)
    ex.add_argument("--weights", default=None,
                    help="local backbone state-dict file; random seeded init if omitted")
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--out", required=True)

    ver = sub.add_parser("verify", help="validate an exported feature directory")
    ver.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "extract":
            config = ExtractionConfig(
                root=args.root,
                category=args.category,
                out_dir=args.out,
                taps=_parse_taps(args.taps),
                input_resolution=args.resolution,
                weights_path=args.weights,
                seed=args.seed,
            )
            result = extract_category(config)
            h, w, d = result.grid_shape
            print(f"images\t{result.images}")
            print(f"grid_shape\t{h}x{w}x{d}")
            print(f"train_manifest\t{result.train_manifest}")
            print(f"test_manifest\t{result.test_manifest}")
            return 0
        report = verify_export(args.out)
        for line in report.lines():
            print(line)
        return 0 if report.ok else 2
    except ExtractError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

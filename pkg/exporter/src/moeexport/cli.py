"""Command line for the trace exporter."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .hooks import ExportSpec, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moe-trace-export",
        description=(
            "Hook a torch MoE model and write per-layer pre-attention / "
            "router trace files (MOEPA1 format)."
        ),
    )
    parser.add_argument(
        "--model",
        required=True,
        help="demo:tiny[?d=..,experts=..,k=..], package.module:factory, or an HF id",
    )
    parser.add_argument("--out", required=True, type=Path, help="output directory")
    parser.add_argument("--prompt-file", type=Path, default=None)
    parser.add_argument(
        "--prompt", action="append", default=[], help="inline prompt (repeatable)"
    )
    parser.add_argument(
        "--layer",
        action="append",
        type=int,
        default=None,
        help="layer index to export (repeatable; default: every MoE layer)",
    )
    parser.add_argument("--max-samples", type=int, default=1000)
    parser.add_argument("--max-new-tokens", type=int, default=8)
    parser.add_argument(
        "--raw-logits",
        action="store_true",
        help="also store raw router logits in a side file",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExportSpec(
        model=args.model,
        out_dir=args.out,
        prompt_file=args.prompt_file,
        prompts=tuple(args.prompt),
        layers=tuple(args.layer) if args.layer else None,
        max_samples=args.max_samples,
        max_new_tokens=args.max_new_tokens,
        keep_raw_logits=args.raw_logits,
    )
    try:
        paths = export(spec)
    except (ValueError, RuntimeError) as err:
        print(f"export failed: {err}", file=sys.stderr)
        return 1
    for path in paths:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

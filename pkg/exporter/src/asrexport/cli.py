"""Command-line entry point for corpus export."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .export import ExportEmptyError, ExportJob, export_corpus


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asrexport",
        description="Run an ASR model over a labeled corpus and write utterance-export records.",
    )
    parser.add_argument("--manifest", required=True, help="JSONL corpus manifest")
    parser.add_argument("--out", required=True, help="output export file")
    parser.add_argument("--model", default="stub:0", help="model spec (default stub:0)")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    manifest = Path(args.manifest)
    if not manifest.exists():
        print(f"manifest not found: {manifest}", file=sys.stderr)
        return 2
    job = ExportJob(
        manifest_path=manifest,
        model_spec=args.model,
        out_path=Path(args.out),
        batch_size=args.batch_size,
    )
    try:
        count = export_corpus(job)
    except (ValueError, ExportEmptyError) as exc:
        print(f"export failed: {exc}", file=sys.stderr)
        return 1
    print(f"exported {count} utterances -> {job.out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

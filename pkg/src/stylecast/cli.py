"""``stylecast`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 stage failure, 3 provider failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import DEFAULT_CONFIG, load_config
from .errors import ProviderError, StylecastError
from .ingestion import StyleLabel
from .pipeline import Pipeline, RunOptions
from .scoring import tally
from .textutil import read_json

EXIT_OK, EXIT_USAGE, EXIT_STAGE, EXIT_PROVIDER = 0, 1, 2, 3

log = logging.getLogger("stylecast")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=None, help=f"TOML config (default: {DEFAULT_CONFIG})")
    common.add_argument("--workdir", default=None, help="override the configured workdir")
    common.add_argument("--jobs", type=int, default=None, help="worker threads per stage")
    common.add_argument("--seed", type=int, default=None, help="seed for sampling and shuffles")
    common.add_argument("--force", action="store_true", help="redo completed work")
    common.add_argument("--dry-run", action="store_true", help="print the plan and write nothing")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="stylecast", description="Style-controlled short-video comment generation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    p = add("ingest", "fetch media, metadata and top comments for a manifest")
    p.add_argument("manifest", nargs="?", help="manifest JSON (default: config manifest)")

    for name, help_ in (("preprocess", "highlights, frame schedule, frames and transcript"),
                        ("describe", "semantic description per video"),
                        ("classify", "assign each video a category")):
        add(name, help_).add_argument("video_ids", nargs="*")

    p = add("generate", "generate comments")
    p.add_argument("video_ids", nargs="*")
    p.add_argument("--style", choices=["auto"] + [s.value for s in StyleLabel], default=None)
    p.add_argument("--per-style", action="store_true",
                   help="one comment per style label (only the --style label if given)")

    p = add("dataset-build", "assemble the curated dataset from described videos")
    p.add_argument("--check-balance", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", default=None)

    p = add("annotate", "set style labels on a video's comments")
    p.add_argument("video_id")
    p.add_argument("labels", nargs="+", metavar="COMMENT_ID=LABEL")
    p.add_argument("--annotator", required=True)

    p = add("score", "automatic scoring of candidate comments")
    p.add_argument("candidates", nargs="?", help="JSONL of {video_id, system, text}; default: generated")
    p.add_argument("--bench", default=None)
    p.add_argument("--train", default=None)

    p = add("questionnaire", "export a blinded preference questionnaire")
    p.add_argument("candidates")

    p = add("tally", "preference percentages from filled questionnaires")
    p.add_argument("answer_key")
    p.add_argument("responses", help="CSV with item,choice columns")
    return parser


def _parse_labels(items: Sequence[str]) -> dict[str, str]:
    labels = {}
    for item in items:
        cid, sep, label = item.partition("=")
        if not sep or not cid:
            raise UsageError(f"bad label assignment: {item!r} (expected COMMENT_ID=LABEL)")
        try:
            labels[cid] = StyleLabel(label).value
        except ValueError:
            raise UsageError(f"unknown style label: {label}") from None
    return labels


def run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.workdir:
        cfg.workdir = str(Path(args.workdir).resolve())
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.selection = dataclasses.replace(cfg.selection, seed=args.seed)
    jobs = args.jobs if args.jobs is not None else cfg.jobs
    if jobs < 1:
        raise UsageError("--jobs must be at least 1")
    opts = RunOptions(jobs=jobs, force=args.force, dry_run=args.dry_run)
    if args.command == "tally":
        result = tally(read_json(args.answer_key), args.responses)
        print(json.dumps({k: round(v, 2) for k, v in result.items()}, indent=2))
        return EXIT_OK

    pipe = Pipeline(cfg, opts, command=args.command)
    cmd = args.command
    if cmd == "ingest":
        manifest = args.manifest or (str(cfg.resolve(cfg.manifest)) if cfg.manifest else None)
        if not manifest:
            raise UsageError("ingest needs a manifest path (argument or config 'manifest')")
        done = pipe.ingest(manifest)
        _report(pipe, "ingested", done)
    elif cmd == "preprocess":
        _report(pipe, "preprocessed", pipe.preprocess(args.video_ids))
    elif cmd == "describe":
        _report(pipe, "described", pipe.describe(args.video_ids))
    elif cmd == "classify":
        for vid, d in pipe.classify(args.video_ids).items():
            print(f"{vid}\t{d['category']}" + ("\t(fallback)" if d["fallback_applied"] else ""))
    elif cmd == "generate":
        for rec in pipe.generate(args.video_ids, args.style, args.per_style):
            print(f"{rec['video_id']}\t{rec['style']}\t{rec['text']}")
    elif cmd == "dataset-build":
        bundle = pipe.dataset_build(args.check_balance, args.out)
        if bundle is not None:
            print(f"dataset: {len(bundle.items)} videos, {len(bundle.comments())} comments")
    elif cmd == "annotate":
        pipe.annotate(args.video_id, _parse_labels(args.labels), args.annotator)
    elif cmd == "score":
        table = pipe.score(args.candidates, args.bench, args.train)
        if table:
            print(table, end="")
    elif cmd == "questionnaire":
        out = pipe.questionnaire(args.candidates, cfg.seed)
        if out is not None:
            print(f"packet written to {out}")
    return EXIT_OK


def _report(pipe: Pipeline, verb: str, entries) -> None:
    if not pipe.opts.dry_run:
        print(f"{verb} {len(entries)} video(s)")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return run(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except ProviderError as exc:
        print(f"provider failure: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (StylecastError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands mirror the pipeline stages: build-corpus-stats, extract,
build-vocab, prepare, train, decode, evaluate, sweep. Options come from
a flat key = value config file; command-line flags win over the file.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .errors import DataError, NumericError, UsageError
from .extract import METHODS

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--corpus", help="corpus JSONL file")
    parser.add_argument("--workdir", help="artifact directory")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any configuration key",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="longsum", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    stats = sub.add_parser("build-corpus-stats", help="percentile table of corpus aspects")
    _add_common(stats)

    extract = sub.add_parser("extract", help="rank paragraphs and assemble input text")
    _add_common(extract)
    extract.add_argument("--method", choices=METHODS, help="extraction method")

    vocab = sub.add_parser("build-vocab", help="train the subword vocabulary")
    _add_common(vocab)
    vocab.add_argument("--size", type=int, help="target vocabulary size")

    prepare = sub.add_parser("prepare", help="tokenize, truncate, and assemble sequences")
    _add_common(prepare)
    prepare.add_argument("--L", type=int, dest="input_budget", help="input token budget")

    train = sub.add_parser("train", help="train the abstractive model")
    _add_common(train)
    train.add_argument("--steps", type=int, help="training steps")

    decode = sub.add_parser("decode", help="generate outputs for the evaluation split")
    _add_common(decode)
    decode.add_argument("--beam", type=int, dest="beam_size", help="beam size (1 = greedy)")
    decode.add_argument("--alpha", type=float, help="length-penalty strength")
    decode.add_argument(
        "--max-len", type=int, dest="max_output_len", help="maximum output length"
    )

    evaluate = sub.add_parser("evaluate", help="score outputs against references")
    _add_common(evaluate)

    sweep = sub.add_parser("sweep", help="run the pipeline across one dimension")
    _add_common(sweep)
    sweep.add_argument(
        "--dimension", required=True, choices=sorted(pipeline.SWEEP_DIMENSIONS)
    )
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument(
        "--until",
        default="evaluate",
        choices=pipeline.STAGE_ORDER,
        help="last stage to run per cell",
    )
    return parser


_FLAG_KEYS = (
    "corpus",
    "workdir",
    "seed",
    "method",
    "input_budget",
    "steps",
    "beam_size",
    "alpha",
    "max_output_len",
)


def _config_from_args(args) -> pipeline.PipelineConfig:
    cfg = (
        pipeline.load_pipeline_config(args.config)
        if args.config
        else pipeline.PipelineConfig()
    )
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "size", None) is not None:
        overrides["vocab_size"] = str(args.size)
    for key in _FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value if isinstance(value, str) else str(value)
    cfg = pipeline.apply_overrides(cfg, overrides)
    if not cfg.corpus:
        raise UsageError("a corpus file is required (--corpus or config)")
    if not cfg.workdir:
        raise UsageError("a work directory is required (--workdir or config)")
    return cfg


def run(args) -> int:
    cfg = _config_from_args(args)
    if args.command == "build-corpus-stats":
        pipeline.stage_corpus_stats(cfg)
    elif args.command == "extract":
        pipeline.stage_extract(cfg)
    elif args.command == "build-vocab":
        pipeline.stage_build_vocab(cfg)
    elif args.command == "prepare":
        counts = pipeline.stage_prepare(cfg)
        log.info("prepared %s", counts)
    elif args.command == "train":
        final_loss = pipeline.stage_train(cfg)
        print(f"final training loss: {final_loss:.4f}")
    elif args.command == "decode":
        pipeline.stage_decode(cfg)
    elif args.command == "evaluate":
        summary = pipeline.stage_evaluate(cfg)
        for key, value in summary.items():
            print(f"{key}: {value:.5f}" if isinstance(value, float) else f"{key}: {value}")
    elif args.command == "sweep":
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        if not values:
            raise UsageError("--values must list at least one value")
        pipeline.sweep(cfg, args.dimension, values, until=args.until)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return run(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

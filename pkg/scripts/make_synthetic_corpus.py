#!/usr/bin/env python3
"""Emit one of the synthetic corpora as a JSONL corpus file.

Example:
    python scripts/make_synthetic_corpus.py planted --out planted.jsonl --examples 50
    python scripts/make_synthetic_corpus.py answers --out answers.jsonl --window 96
"""

import argparse

from longsum.corpus import write_corpus
from longsum.synthetic import answer_position_corpus, planted_paragraph_corpus


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    sub = parser.add_subparsers(dest="kind", required=True)

    planted = sub.add_parser("planted", help="lead planted late among distractors")
    planted.add_argument("--out", required=True)
    planted.add_argument("--examples", type=int, default=50)
    planted.add_argument("--distractors", type=int, default=20)
    planted.add_argument("--seed", type=int, default=0)

    answers = sub.add_parser("answers", help="answer at a uniform offset in the input window")
    answers.add_argument("--out", required=True)
    answers.add_argument("--examples", type=int, default=600)
    answers.add_argument("--window", type=int, default=96)
    answers.add_argument("--answer-len", type=int, default=8)
    answers.add_argument("--seed", type=int, default=5)

    args = parser.parse_args()
    if args.kind == "planted":
        examples = planted_paragraph_corpus(
            n_examples=args.examples, n_distractors=args.distractors, seed=args.seed
        )
    else:
        examples = answer_position_corpus(
            n_examples=args.examples, window=args.window,
            answer_len=args.answer_len, seed=args.seed,
        )
    write_corpus(examples, args.out)
    print(f"wrote {len(examples)} examples to {args.out}")


if __name__ == "__main__":
    main()

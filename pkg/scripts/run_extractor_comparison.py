#!/usr/bin/env python3
"""Compare extraction methods by lead-recall at a fixed token budget on
the planted-paragraph corpus (no abstractive stage)."""

import argparse
import os

from longsum.corpus import write_corpus
from longsum.pipeline import PipelineConfig, sweep
from longsum.synthetic import planted_paragraph_corpus


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", required=True)
    parser.add_argument("--budget", type=int, default=64)
    parser.add_argument("--examples", type=int, default=50)
    parser.add_argument(
        "--methods", default="identity,tfidf,textrank,sumbasic,cheating"
    )
    args = parser.parse_args()

    os.makedirs(args.workdir, exist_ok=True)
    corpus_path = os.path.join(args.workdir, "corpus.jsonl")
    write_corpus(
        planted_paragraph_corpus(n_examples=args.examples, n_distractors=20, seed=0),
        corpus_path,
    )
    cfg = PipelineConfig(
        corpus=corpus_path, workdir=args.workdir, seed=0, input_budget=args.budget
    )
    rows = sweep(cfg, "method", args.methods.split(","), until="extract")
    print(f"\n{'method':>10}  recall@{args.budget}")
    for row in sorted(rows, key=lambda r: -(r.get("extraction_recall") or 0)):
        recall = row.get("extraction_recall")
        print(f"{row['value']:>10}  {recall:.4f}" if recall is not None
              else f"{row['value']:>10}  {row['status']}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Sweep the input token budget L on the answer-position corpus and
collate test log-perplexity per budget (the perplexity-versus-L trend
at desk scale).

Example:
    python scripts/run_budget_sweep.py --workdir /tmp/budget-sweep --values 24,48,96
"""

import argparse
import os

from longsum.corpus import write_corpus
from longsum.pipeline import PipelineConfig, sweep
from longsum.synthetic import answer_position_corpus


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", required=True)
    parser.add_argument("--values", default="24,48,96", help="comma-separated budgets")
    parser.add_argument("--window", type=int, default=96)
    parser.add_argument("--examples", type=int, default=600)
    parser.add_argument("--steps", type=int, default=600)
    parser.add_argument("--seed", type=int, default=3)
    args = parser.parse_args()

    os.makedirs(args.workdir, exist_ok=True)
    corpus_path = os.path.join(args.workdir, "corpus.jsonl")
    write_corpus(
        answer_position_corpus(n_examples=args.examples, window=args.window, seed=5),
        corpus_path,
    )
    cfg = PipelineConfig(
        corpus=corpus_path, workdir=args.workdir, seed=args.seed, method="identity",
        vocab_size=259, layer_pattern="LML", d_model=64, num_heads=4, d_ff=256,
        block_size=16, steps=args.steps, batch_size=16, base_lr=0.005,
        warmup_steps=300, max_output_len=16, decoder="greedy", beam_size=1,
    )
    values = [v.strip() for v in args.values.split(",")]
    rows = sweep(cfg, "L", values, until="evaluate")
    print(f"\n{'L':>6}  {'log-ppl':>10}  {'ROUGE-L':>8}  status")
    for row in rows:
        ppl = row.get("log_perplexity", "")
        ppl = f"{ppl:.4f}" if isinstance(ppl, float) else ppl
        rl = row.get("rouge_l_f1", "")
        rl = f"{rl:.4f}" if isinstance(rl, float) else rl
        print(f"{row['value']:>6}  {ppl:>10}  {rl:>8}  {row['status']}")
    print(f"\nsweep table: {os.path.join(args.workdir, 'sweep.csv')}")


if __name__ == "__main__":
    main()

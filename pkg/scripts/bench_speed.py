#!/usr/bin/env python3
"""Latency of a full-depth donor vs the half-depth transformer+adapter model.

Default dimensions match a DistilBERT-class encoder (hidden 768, FFN 3072,
12 heads, 6 donor blocks) at sequence length 128 and batch 1. The compressed
model keeps every other block and fills the gaps with adapters, so the
expected wall-clock ratio is well above 1 on a single CPU.
"""

import argparse
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from catbert.metrics import time_inference
from catbert.model import ModelConfig, count_params, init_random, millions


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--hidden", type=int, default=768)
    ap.add_argument("--ffn-dim", type=int, default=3072)
    ap.add_argument("--heads", type=int, default=12)
    ap.add_argument("--donor-blocks", type=int, default=6)
    ap.add_argument("--seq-len", type=int, default=128)
    ap.add_argument("--batch", type=int, default=1)
    ap.add_argument("--vocab-size", type=int, default=30522)
    ap.add_argument("--repetitions", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="write timings as JSON here too")
    args = ap.parse_args()
    if args.donor_blocks % 2:
        ap.error("--donor-blocks must be even")

    common = dict(vocab_size=args.vocab_size, hidden=args.hidden,
                  ffn_dim=args.ffn_dim, heads=args.heads,
                  max_positions=max(args.seq_len, 512))
    plans = {"donor": ("T",) * args.donor_blocks,
             "compressed": ("T", "A") * (args.donor_blocks // 2)}

    report = {"seq_len": args.seq_len, "batch": args.batch}
    for name, plan in plans.items():
        cfg = ModelConfig(block_plan=plan, **common)
        model = init_random(cfg, seed=args.seed)
        timing = time_inference(model, batch_sizes=(args.batch,),
                                repetitions=args.repetitions,
                                seq_len=args.seq_len, seed=args.seed)
        row = timing["timings"][str(args.batch)]
        row["params_millions"] = millions(count_params(cfg).total)
        report[name] = row
        print(f"{name:>10}: p50 {row['p50_ms']:8.2f} ms   "
              f"mean {row['mean_ms']:8.2f} ms   {row['params_millions']}M params")

    report["speedup_p50"] = report["donor"]["p50_ms"] / report["compressed"]["p50_ms"]
    report["speedup_mean"] = report["donor"]["mean_ms"] / report["compressed"]["mean_ms"]
    print(f"speedup: {report['speedup_p50']:.2f}x (p50), "
          f"{report['speedup_mean']:.2f}x (mean)")

    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())

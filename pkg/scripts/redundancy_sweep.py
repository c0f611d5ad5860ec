"""Parameter counts as depthwise-separable replacement extends from the deepest block outwards.

    python3 scripts/redundancy_sweep.py [--config ltx] [--csv sweep.csv]
"""

import argparse
import csv

from turbovaed.config import load_config
from turbovaed.decoder import count_params, redundancy_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="ltx")
    ap.add_argument("--csv")
    args = ap.parse_args()

    cfg = load_config(args.config)
    base = count_params(cfg.with_kinds(()))
    order = cfg.block_names[:-1]
    rows = [("none", base.total, 0.0, {b: base.per_block[b] for b in order})]
    for variant, n in redundancy_sweep(cfg, order[-1]):
        last = [b.name for b in variant.blocks if b.conv_kind == "dwsep"][-1]
        pb = count_params(variant).per_block
        rows.append((last, n, 100.0 * (base.total - n) / base.total, pb))

    print(f"config {args.config}, factors {cfg.factors}, widths {cfg.channel_schedule}")
    print(f"{'dwsep through':<14} {'params':>12} {'reduction':>10}")
    for last, n, red, _ in rows:
        print(f"{last:<14} {n:>12,} {red:>9.2f}%")

    # the hybrid design replaces mid and up_0 only
    affected = ("mid", "up_0")
    hybrid = count_params(cfg.with_kinds(affected)).per_block
    before = sum(base.per_block[b] for b in affected)
    after = sum(hybrid[b] for b in affected)
    print(f"mid+up_0 blocks alone: {before:,} -> {after:,} ({100 * (before - after) / before:.2f}% fewer)")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dwsep_through", "params", "reduction_pct"] + order)
            for last, n, red, pb in rows:
                w.writerow([last, n, f"{red:.4f}"] + [pb[b] for b in order])


if __name__ == "__main__":
    main()

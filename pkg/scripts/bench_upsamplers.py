"""Host latency of the upsampling rearrangements, single-threaded.

Default shape is the packed input (1, 128*8, 3, 8, 8) at r_t = r_s = 2 plus the
r = 1 degenerate case.

    python3 scripts/bench_upsamplers.py [--repeats 50] [--csv out.csv]
"""

import argparse

from turbovaed.bench import bench_upsamplers


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--warmup", type=int, default=5)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--csv")
    args = ap.parse_args()

    shapes = [(1, 1024, 3, 8, 8), (1, 512, 5, 16, 16), (1, 256, 9, 32, 32)]
    table = bench_upsamplers(shapes, [(2, 2), (1, 2), (1, 1)], args.warmup, args.repeats)
    print(table.pretty())
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(table.to_csv())


if __name__ == "__main__":
    main()

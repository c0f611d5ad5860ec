"""Paired-seed toy distillation: steps to the baseline's step-200 loss, with and without feature alignment.

    python3 scripts/distill_experiment.py [--seeds 5] [--teacher teacher.tvwd] [--out logs/]
"""

import argparse
import statistics
import time
from pathlib import Path

from turbovaed.distill import ToyExperiment, evaluate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--steps", type=int, default=None, help="steps per run (at least 200, where tau is read)")
    ap.add_argument("--teacher", help="teacher weights cache (TVWD); trained and written if missing")
    ap.add_argument("--out", help="directory for per-run CSV logs")
    args = ap.parse_args()

    exp = ToyExperiment()
    t0 = time.perf_counter()
    teacher = exp.teacher(cache=args.teacher)
    print(f"teacher {exp.teacher_config}: eval PSNR {evaluate(exp.tcfg, teacher.weights, exp.data):.2f} dB "
          f"({time.perf_counter() - t0:.0f} s)")
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    never = (args.steps or exp.steps) + 1
    rows = []
    print(f"{'seed':>4} {'tau':>8} {'base':>6} {'distill':>8} {'PSNR base':>10} {'PSNR dist':>10} {'sec':>5}")
    for seed in range(args.seeds):
        t = time.perf_counter()
        base = exp.run(seed, args.steps, distill=False, teacher=teacher)
        dist = exp.run(seed, args.steps, distill=True, teacher=teacher)
        sec = (time.perf_counter() - t) / 2
        tau = exp.threshold(base.log)
        sb, sd = exp.steps_to(base.log, tau), exp.steps_to(dist.log, tau)
        pb, pd = base.log.final_eval_psnr(), dist.log.final_eval_psnr()
        rows.append((sb or never, sd or never, pb, pd))
        print(f"{seed:>4} {tau:>8.4f} {str(sb):>6} {str(sd):>8} {pb:>10.2f} {pd:>10.2f} {sec:>5.0f}")
        if out:
            base.log.write_csv(out / f"seed{seed}_baseline.csv")
            dist.log.write_csv(out / f"seed{seed}_distill.csv")

    mb, md = statistics.median(r[0] for r in rows), statistics.median(r[1] for r in rows)
    print(f"median steps to tau: baseline {mb}, distill {md} ({mb / md:.2f}x)")
    print(f"median final eval PSNR: baseline {statistics.median(r[2] for r in rows):.2f}, "
          f"distill {statistics.median(r[3] for r in rows):.2f} dB")


if __name__ == "__main__":
    main()

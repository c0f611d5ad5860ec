"""Command-line front end.

Exit codes: 0 success, 1 validation error (bad flags, configs, shapes,
weights), 2 runtime error (failing verification, diverged training, I/O).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import weights as wio
from .config import DecoderConfig, apply_overrides, load_config
from .decoder import LoadError
from .errors import ConfigError, DomainError, ShapeError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ValidationFailure(Exception):
    """Input rejected; ``detail`` is printed (and emitted under --json)."""

    def __init__(self, message: str, detail: dict | None = None):
        super().__init__(message)
        self.detail = detail or {}


class RuntimeFailure(Exception):
    def __init__(self, message: str, detail: dict | None = None):
        super().__init__(message)
        self.detail = detail or {}


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, default=_json_default))
    else:
        print(text)


def _json_default(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    raise TypeError(type(v).__name__)


def _config(args) -> DecoderConfig:
    cfg = load_config(args.config)
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    return cfg


def _shape(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(v) for v in text.replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; expected e.g. 1,16,5,8,8") from None
    if any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"shape {text!r} has non-positive extents")
    return dims


def _pair(text: str) -> tuple[int, int]:
    dims = _shape(text)
    if len(dims) != 2:
        raise argparse.ArgumentTypeError(f"expected r_t,r_s, got {text!r}")
    return dims


def _load_store(path) -> wio.WeightStore:
    if not Path(path).exists():
        raise ValidationFailure(f"file not found: {path}")
    return wio.load(path)


def _load_tensor(path) -> np.ndarray:
    if not Path(path).exists():
        raise ValidationFailure(f"file not found: {path}")
    return wio.load_tensor(path)


# ---------------------------------------------------------------- subcommands


def cmd_decode(args) -> int:
    from .decoder import decoder_forward

    cfg = _config(args)
    store = _load_store(args.weights)
    report = wio.validate_against(store, cfg)
    if not report.ok:
        raise ValidationFailure("weights do not match config:\n  " + "\n  ".join(report.lines()),
                                {"validation": report.to_dict()})
    latent = _load_tensor(args.latent)
    if latent.ndim != 5 or latent.shape[1] != cfg.latent_channels:
        raise ValidationFailure(
            f"latent shape {latent.shape}: channel extent (axis 1) is "
            f"{latent.shape[1] if latent.ndim > 1 else 'absent'}, config expects {cfg.latent_channels}")
    video, _ = decoder_forward(latent, cfg, store)
    wio.save_tensor(video, args.out)
    payload = {"out": str(args.out), "shape": list(video.shape)}
    if args.raw_rgb:
        payload["raw_rgb"] = write_rgb24(video, args.raw_rgb)
    _emit(args, payload, f"wrote {args.out} {tuple(video.shape)}"
          + (f"; raw RGB24 {args.raw_rgb}" if args.raw_rgb else ""))
    return EXIT_OK


def write_rgb24(video: np.ndarray, path) -> dict:
    """Interleaved RGB bytes, frame by frame, rows top to bottom; [0,1] clamps to [0,255].

    Batch items follow one another. The JSON sidecar sits next to ``path``.
    """
    N, C, T, H, W = video.shape
    if C != 3:
        raise ValidationFailure(f"raw RGB export needs 3 channels, video has {C}")
    v = np.clip(video, 0.0, 1.0)
    data = np.rint(v * 255.0).astype(np.uint8).transpose(0, 2, 3, 4, 1)
    Path(path).write_bytes(np.ascontiguousarray(data).tobytes())
    side = {"frames": T, "height": H, "width": W, "batch": N, "pixel_format": "rgb24"}
    sidecar = Path(str(path) + ".json")
    sidecar.write_text(json.dumps(side, indent=2) + "\n")
    return {"path": str(path), "sidecar": str(sidecar), **side}


def cmd_init(args) -> int:
    from .decoder import init_weights

    cfg = _config(args)
    store = init_weights(cfg, args.seed)
    wio.save(store, args.out)
    payload = {"out": str(args.out), "tensors": len(store), "params": store.num_params()}
    if args.latent_out:
        shape = cfg.latent_shape(args.frames, args.height, args.width)
        lat = np.random.default_rng(args.seed).normal(size=shape).astype(np.float32)
        wio.save_tensor(lat, args.latent_out)
        payload["latent"] = {"out": str(args.latent_out), "shape": list(shape)}
    _emit(args, payload, f"wrote {args.out}: {len(store)} tensors, {store.num_params()} params"
          + (f"; latent {args.latent_out}" if args.latent_out else ""))
    return EXIT_OK


def cmd_params(args) -> int:
    from .decoder import count_params

    cfg = _config(args)
    pc = count_params(cfg)
    kinds = {b.name: b.conv_kind for b in cfg.blocks}
    lines = [f"{'block':<8} {'kind':<9} {'params':>12}"]
    lines += [f"{n:<8} {kinds[n]:<9} {c:>12,}" for n, c in pc.per_block.items()]
    lines.append(f"{'total':<18} {pc.total:>12,}")
    _emit(args, {**pc.to_dict(), "kinds": kinds}, "\n".join(lines))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .decoder import count_params, redundancy_sweep

    cfg = _config(args)
    base_cfg = cfg.with_kinds(())
    base = count_params(base_cfg).total
    variants = redundancy_sweep(cfg, args.upto)
    rows = [{"dwsep_blocks": [b.name for b in v.blocks if b.conv_kind == "dwsep"], "params": n,
             "reduction_pct": 100.0 * (base - n) / base} for v, n in variants]
    lines = [f"all standard: {base:,}"]
    lines += [f"dwsep up to {r['dwsep_blocks'][-1]:<6} {r['params']:>12,}  (-{r['reduction_pct']:.2f}%)" for r in rows]
    _emit(args, {"baseline_params": base, "variants": rows}, "\n".join(lines))
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify

    report = verify.run(args.suite)
    _emit(args, report.to_dict(), "\n".join(report.lines()))
    if not report.ok:
        if not args.json:
            print("verification FAILED", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .metrics import video_metrics

    ref, test = _load_tensor(args.ref), _load_tensor(args.test)
    if ref.shape != test.shape:
        raise ValidationFailure(f"shape mismatch: ref {ref.shape} vs test {test.shape}")
    if ref.ndim != 5:
        raise ValidationFailure(f"expected (N, C, T, H, W) tensors, got {ref.shape}")
    rep = video_metrics(ref, test, max_val=args.max_val)
    d = rep.to_dict()
    psnr = "identical" if math.isinf(rep.psnr) else f"{rep.psnr:.4f} dB"
    _emit(args, d, f"PSNR {psnr}\nSSIM {rep.ssim:.6f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    store = _load_store(args.file)
    entries = [{"name": n, "dtype": "f32", "shape": list(v.shape), "numel": int(v.size)} for n, v in store.items()]
    payload = {"file": str(args.file), "tensors": len(entries), "params": store.num_params(), "entries": entries}
    lines = [f"{e['name']:<48} {str(tuple(e['shape'])):<24} {e['numel']:>10,}" for e in entries]
    lines.append(f"{len(entries)} tensors, {store.num_params():,} values")
    if args.config:
        report = wio.validate_against(store, _config(args))
        payload["validation"] = {"ok": report.ok, **report.to_dict()}
        lines += report.lines() or ["matches config"]
        _emit(args, payload, "\n".join(lines))
        return EXIT_OK if report.ok else EXIT_INVALID
    _emit(args, payload, "\n".join(lines))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import profile_decoder
    from .decoder import init_weights

    cfg = _config(args)
    store = _load_store(args.weights) if args.weights else init_weights(cfg, args.seed)
    if args.weights:
        report = wio.validate_against(store, cfg)
        if not report.ok:
            raise ValidationFailure("weights do not match config", {"validation": report.to_dict()})
    shape = args.latent_shape or cfg.latent_shape(args.frames, args.height, args.width)
    if len(shape) != 5:
        raise ValidationFailure(f"latent shape must have 5 extents, got {shape}")
    rep = profile_decoder(cfg, store, shape, args.warmup, args.repeats, args.threads, args.seed)
    _emit(args, rep.to_dict(), rep.to_csv().rstrip() if args.csv else rep.pretty())
    return EXIT_OK


def cmd_bench_ops(args) -> int:
    from .bench import bench_upsamplers

    shapes = args.shape or [(1, 1024, 3, 8, 8)]
    factors = args.factors or [(2, 2), (1, 1)]
    for s in shapes:
        if len(s) != 5:
            raise ValidationFailure(f"shape must have 5 extents, got {s}")
    table = bench_upsamplers(shapes, factors, args.warmup, args.repeats, threads=args.threads, seed=args.seed)
    _emit(args, table.to_dict(), table.to_csv().rstrip() if args.csv else table.pretty())
    return EXIT_OK


def cmd_distill_toy(args) -> int:
    from .distill import ToyExperiment

    exp = ToyExperiment()
    teacher = exp.teacher(cache=args.teacher)
    result = exp.run(args.seed, args.steps, distill=not args.no_distill, teacher=teacher)
    log = result.log
    if args.out:
        log.write_csv(args.out)
    if args.checkpoint:
        wio.save(result.weights, args.checkpoint)
    final = log.records[-1] if log.records else None
    payload = {"seed": args.seed, "steps": args.steps, "distill": not args.no_distill,
               "csv": str(args.out) if args.out else None,
               "final": None if final is None else {"l1": final.l1, "distill": final.distill, "kl": final.kl,
                                                    "total": final.total, "eval_psnr": log.final_eval_psnr()}}
    text = "no steps run" if final is None else (
        f"seed {args.seed}, {args.steps} steps, distill={'off' if args.no_distill else 'on'}: "
        f"final L1 {final.l1:.5f}, eval PSNR {log.final_eval_psnr():.2f} dB"
        + (f"; log {args.out}" if args.out else ""))
    _emit(args, payload, text)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> Parser:
    p = Parser(prog="turbovaed", description="Video VAE decoder engine: decode, verify, profile, distill.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    def add(name, fn, help_, config=False, config_required=True):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--json", action="store_true", help="machine-readable output")
        if config:
            sp.add_argument("--config", required=config_required, help="config JSON path or preset name")
            sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                            help="config override, e.g. blocks.up_1.conv_kind=dwsep (repeatable)")
        sp.set_defaults(func=fn)
        return sp

    sp = add("decode", cmd_decode, "decode a latent tensor to video", config=True)
    sp.add_argument("--weights", required=True)
    sp.add_argument("--latent", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--raw-rgb", help="also write interleaved RGB24 bytes plus a .json sidecar")

    sp = add("init", cmd_init, "write seeded initial weights (and optionally a random latent)", config=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--latent-out")
    sp.add_argument("--frames", type=int, default=17)
    sp.add_argument("--height", type=int, default=256)
    sp.add_argument("--width", type=int, default=256)

    sp = add("bench", cmd_bench, "per-block latency profile of one decode", config=True)
    sp.add_argument("--weights", help="TVWD weights; seeded init if omitted")
    sp.add_argument("--latent-shape", type=_shape)
    sp.add_argument("--frames", type=int, default=17)
    sp.add_argument("--height", type=int, default=256)
    sp.add_argument("--width", type=int, default=256)
    sp.add_argument("--warmup", type=int, default=5)
    sp.add_argument("--repeats", type=int, default=20)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--csv", action="store_true", help="CSV instead of the text table")

    sp = add("bench-ops", cmd_bench_ops, "compare upsampling rearrangements")
    sp.add_argument("--shape", type=_shape, action="append", help="packed input N,C,T,H,W (repeatable)")
    sp.add_argument("--factors", type=_pair, action="append", help="r_t,r_s (repeatable)")
    sp.add_argument("--warmup", type=int, default=5)
    sp.add_argument("--repeats", type=int, default=20)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--csv", action="store_true")

    sp = add("verify", cmd_verify, "run the oracle suites")
    sp.add_argument("--suite", choices=["upsample", "dwsep", "grad", "all"], default="all")

    add("params", cmd_params, "per-block parameter counts", config=True)

    sp = add("sweep", cmd_sweep, "parameter counts as dwsep replacement extends", config=True)
    sp.add_argument("--upto", required=True, help="last block to replace, e.g. up_1")

    sp = add("distill-toy", cmd_distill_toy, "one seeded toy distillation run")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--steps", type=int, default=200)
    sp.add_argument("--no-distill", action="store_true", help="baseline run (feature alignment weight 0)")
    sp.add_argument("--out", help="CSV training log")
    sp.add_argument("--checkpoint", help="save student weights (TVWD)")
    sp.add_argument("--teacher", help="teacher weights cache; trained and written if missing")

    sp = add("metrics", cmd_metrics, "PSNR/SSIM between two video tensors")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--max-val", type=float, default=1.0)

    sp = add("inspect", cmd_inspect, "list the tensors in a TVWD/.tvt file", config=True, config_required=False)
    sp.add_argument("file")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    json_mode = getattr(args, "json", False)
    try:
        return args.func(args)
    except (ValidationFailure, ConfigError, ShapeError, DomainError, LoadError, wio.WeightsError) as e:
        detail = getattr(e, "detail", {})
        _fail(json_mode, "validation", e, detail)
        return EXIT_INVALID
    except (RuntimeFailure, RuntimeError, OSError, FloatingPointError) as e:
        _fail(json_mode, "runtime", e, getattr(e, "detail", {}))
        return EXIT_RUNTIME


def _fail(json_mode: bool, kind: str, err: Exception, detail: dict) -> None:
    if json_mode:
        print(json.dumps({"error": {"kind": kind, "type": type(err).__name__, "message": str(err), **detail}},
                         indent=2, default=_json_default))
    else:
        print(f"error: {err}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())

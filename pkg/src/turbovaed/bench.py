"""Wall-clock profiling of decoder blocks and upsampling operators."""

from __future__ import annotations

import csv
import gc
import io
import os
import platform
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Mapping

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from .config import DecoderConfig
from .decoder import Decoder, decoder_forward
from .errors import DomainError
from .upsample import UpsampleFactors, decoupled_upsample, interpolate_3d, pixel_shuffle_3d

DEFAULT_WARMUP = 5
DEFAULT_REPEATS = 20


@contextmanager
def no_gc() -> Iterator[None]:
    """Keep the cyclic collector out of timed regions, as timeit does."""
    was = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        yield
    finally:
        if was:
            gc.enable()


@contextmanager
def thread_mode(threads: int | None) -> Iterator[int]:
    """Cap BLAS threads; yields the effective count recorded in reports."""
    if threads is None:
        info = threadpool_info()
        yield max((p.get("num_threads", 1) for p in info), default=1)
        return
    with threadpool_limits(limits=threads):
        yield threads


def environment(warmup: int, repeats: int, threads: int) -> dict:
    return {"warmup": warmup, "repeats": repeats, "threads": threads, "numpy": np.__version__,
            "python": platform.python_version(), "machine": platform.machine(), "cpus": os.cpu_count()}


@dataclass
class TimingStats:
    name: str
    mean_ns: float
    median_ns: float
    p95_ns: float
    share_pct: float = 100.0

    @classmethod
    def of(cls, name: str, samples_ns) -> "TimingStats":
        s = np.asarray(samples_ns, dtype=np.float64)
        return cls(name, float(s.mean()), float(np.median(s)), float(np.percentile(s, 95)))


def _check_counts(warmup: int, repeats: int) -> None:
    if warmup < 1 or repeats < 3:
        raise DomainError(f"need warmup >= 1 and repeats >= 3, got warmup={warmup}, repeats={repeats}")


# ---------------------------------------------------------------- decoder profile


@dataclass
class BlockTimingReport:
    blocks: list[TimingStats]
    end_to_end: TimingStats
    output_frames: int
    latent_shape: tuple
    environment: dict = field(default_factory=dict)

    @property
    def instrumented_ns(self) -> float:
        return sum(b.mean_ns for b in self.blocks)

    @property
    def fps(self) -> float:
        return self.output_frames / (self.end_to_end.mean_ns * 1e-9)

    @property
    def coverage(self) -> float:
        """Sum of per-block means over end-to-end mean; 1.0 means nothing escapes instrumentation."""
        return self.instrumented_ns / self.end_to_end.mean_ns

    def to_dict(self) -> dict:
        return {"blocks": [asdict(b) for b in self.blocks], "end_to_end": asdict(self.end_to_end),
                "instrumented_ns": self.instrumented_ns, "coverage": self.coverage,
                "output_frames": self.output_frames, "fps": self.fps,
                "latent_shape": list(self.latent_shape), "environment": self.environment}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["block", "mean_ns", "median_ns", "p95_ns", "share_pct"])
        for b in self.blocks + [self.end_to_end]:
            w.writerow([b.name, f"{b.mean_ns:.0f}", f"{b.median_ns:.0f}", f"{b.p95_ns:.0f}", f"{b.share_pct:.2f}"])
        return buf.getvalue()

    def pretty(self) -> str:
        rows = [f"{'block':<10} {'mean ms':>10} {'median ms':>10} {'p95 ms':>10} {'share':>8}"]
        for b in self.blocks:
            rows.append(f"{b.name:<10} {b.mean_ns / 1e6:>10.3f} {b.median_ns / 1e6:>10.3f} "
                        f"{b.p95_ns / 1e6:>10.3f} {b.share_pct:>7.1f}%")
        e = self.end_to_end
        rows.append(f"{'total':<10} {e.mean_ns / 1e6:>10.3f} {e.median_ns / 1e6:>10.3f} {e.p95_ns / 1e6:>10.3f}")
        env = self.environment
        rows.append(f"latent {tuple(self.latent_shape)} -> {self.output_frames} frames, {self.fps:.2f} FPS; "
                    f"coverage {100 * self.coverage:.1f}%; warmup {env.get('warmup')}, "
                    f"repeats {env.get('repeats')}, threads {env.get('threads')}")
        return "\n".join(rows)


def profile_decoder(cfg: DecoderConfig, weights: Mapping, latent_shape, warmup: int = DEFAULT_WARMUP,
                    repeats: int = DEFAULT_REPEATS, threads: int | None = 1, seed: int = 0) -> BlockTimingReport:
    """Time each block inside the forward pass plus the whole decode call."""
    _check_counts(warmup, repeats)
    latent = np.random.default_rng(seed).normal(size=latent_shape).astype(np.float32)
    decoder_forward(latent, cfg, weights)  # shape and weight validation once, outside the clock
    dec = Decoder(cfg)
    per_block = {b.name: [] for b in cfg.blocks}
    total = []
    with thread_mode(threads) as nthreads, no_gc():
        for i in range(warmup + repeats):
            timings: dict[str, int] = {}
            t0 = time.perf_counter_ns()
            video, _ = dec.forward(latent, weights, timings)
            dt = time.perf_counter_ns() - t0
            if i >= warmup:
                total.append(dt)
                for name, v in timings.items():
                    per_block[name].append(v)
    blocks = [TimingStats.of(name, v) for name, v in per_block.items()]
    inst = sum(b.mean_ns for b in blocks)
    for b in blocks:
        b.share_pct = 100.0 * b.mean_ns / inst
    e2e = TimingStats.of("end_to_end", total)
    frames = video.shape[0] * video.shape[2]
    return BlockTimingReport(blocks, e2e, frames, tuple(latent_shape), environment(warmup, repeats, nthreads))


# ---------------------------------------------------------------- upsampler comparison


UPSAMPLERS: dict[str, Callable[[np.ndarray, UpsampleFactors], np.ndarray]] = {
    "pixel_shuffle_3d": lambda x, f: pixel_shuffle_3d(x, f.r_t, f.r_s),
    "decoupled": decoupled_upsample,
    "interpolate_nearest": lambda x, f: interpolate_3d(x[:, : x.shape[1] // f.channel_factor], f, "nearest"),
    "interpolate_trilinear": lambda x, f: interpolate_3d(x[:, : x.shape[1] // f.channel_factor], f, "trilinear"),
}
REFERENCE = "pixel_shuffle_3d"


@dataclass
class UpsamplerRow:
    shape: tuple
    r_t: int
    r_s: int
    op: str
    mean_ns: float
    median_ns: float
    p95_ns: float
    vs_reference: float = 1.0


@dataclass
class UpsamplerTable:
    rows: list[UpsamplerRow]
    environment: dict = field(default_factory=dict)

    def row(self, op: str, shape=None, r_t=None, r_s=None) -> UpsamplerRow:
        for r in self.rows:
            if r.op == op and (shape is None or tuple(r.shape) == tuple(shape)) \
                    and (r_t is None or r.r_t == r_t) and (r_s is None or r.r_s == r_s):
                return r
        raise KeyError(op)

    def to_dict(self) -> dict:
        return {"rows": [{**asdict(r), "shape": list(r.shape)} for r in self.rows], "environment": self.environment}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["shape", "r_t", "r_s", "op", "mean_ns", "median_ns", "p95_ns", "vs_reference"])
        for r in self.rows:
            w.writerow(["x".join(map(str, r.shape)), r.r_t, r.r_s, r.op,
                        f"{r.mean_ns:.0f}", f"{r.median_ns:.0f}", f"{r.p95_ns:.0f}", f"{r.vs_reference:.3f}"])
        return buf.getvalue()

    def pretty(self) -> str:
        out = [f"{'shape':<22} {'r':>5} {'op':<22} {'median us':>11} {'p95 us':>10} {'vs ref':>7}"]
        for r in self.rows:
            out.append(f"{str(tuple(r.shape)):<22} {f'{r.r_t},{r.r_s}':>5} {r.op:<22} "
                       f"{r.median_ns / 1e3:>11.1f} {r.p95_ns / 1e3:>10.1f} {r.vs_reference:>7.2f}")
        env = self.environment
        out.append(f"warmup {env.get('warmup')}, repeats {env.get('repeats')}, threads {env.get('threads')}")
        return "\n".join(out)


def time_call(fn: Callable[[], object], warmup: int, repeats: int) -> list[int]:
    out = []
    with no_gc():
        for _ in range(warmup):
            fn()
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            fn()
            out.append(time.perf_counter_ns() - t0)
    return out


def bench_upsamplers(shapes, factors, warmup: int = DEFAULT_WARMUP, repeats: int = DEFAULT_REPEATS,
                     ops: tuple[str, ...] | None = None, threads: int | None = 1, seed: int = 0) -> UpsamplerTable:
    """Time each rearrangement on identical channel-packed inputs.

    ``shapes`` are packed inputs ``(N, C * r_t * r_s^2, T, H, W)``; the
    interpolation rows take the first ``C`` channels so every op produces
    the same output size.
    """
    _check_counts(warmup, repeats)
    ops = ops or tuple(UPSAMPLERS)
    rng = np.random.default_rng(seed)
    rows = []
    with thread_mode(threads) as nthreads:
        for shape in shapes:
            x = rng.normal(size=shape).astype(np.float32)
            for r_t, r_s in factors:
                f = UpsampleFactors(r_t, r_s)
                if shape[1] % f.channel_factor:
                    continue
                group = []
                for op in ops:
                    fn = UPSAMPLERS[op]
                    s = TimingStats.of(op, time_call(lambda: fn(x, f), warmup, repeats))
                    group.append(UpsamplerRow(tuple(shape), r_t, r_s, op, s.mean_ns, s.median_ns, s.p95_ns))
                ref = next((g for g in group if g.op == REFERENCE), None)
                for g in group:
                    g.vs_reference = g.median_ns / ref.median_ns if ref else float("nan")
                rows.extend(group)
    return UpsamplerTable(rows, environment(warmup, repeats, nthreads))

"""Oracle-backed correctness suites: rearrangement equivalence, factorized convolution, gradients.

Each suite returns a :class:`SuiteReport` of named properties. A failing
property carries a counterexample. The upsample suite searches shapes in
increasing size, so the reported counterexample is the smallest failing one.

Operators are injectable via :class:`UpsampleOps` so that tests can check
that a deliberately broken implementation is caught.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import oracles, ops, upsample
from .decoder import Shuffle
from .distill import DistillConfig, ProjectionHead, distill_loss, init_heads, total_loss

SUITES = ("upsample", "dwsep", "grad")
GRAD_TOL = 1e-4
DWSEP_TOL = 1e-5


@dataclass
class PropertyResult:
    suite: str
    name: str
    passed: bool
    cases: int
    seconds: float = 0.0
    worst: float | None = None
    counterexample: dict | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" worst={self.worst:.3g}" if self.worst is not None else ""
        s = f"[{status}] {self.suite}/{self.name}: {self.cases} cases in {self.seconds:.2f}s{extra}"
        if self.counterexample:
            s += f"\n        counterexample: {self.counterexample}"
        return s


@dataclass
class SuiteReport:
    results: list[PropertyResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        return [r.line() for r in self.results]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "results": [asdict(r) for r in self.results]}

    def extend(self, other: "SuiteReport") -> "SuiteReport":
        self.results.extend(other.results)
        return self


def _timed(suite: str, name: str, fn: Callable[[], tuple]) -> PropertyResult:
    t0 = time.perf_counter()
    cases, worst, cex = fn()
    return PropertyResult(suite, name, cex is None, cases, time.perf_counter() - t0, worst, cex)


def _first_mismatch(got: np.ndarray, want: np.ndarray):
    if got.shape != want.shape:
        return {"got_shape": list(got.shape), "want_shape": list(want.shape)}
    bad = np.argwhere(got != want)
    if bad.size == 0:
        return None
    idx = tuple(int(i) for i in bad[0])
    return {"index": list(idx), "got": float(got[idx]), "want": float(want[idx])}


# ---------------------------------------------------------------- upsample


@dataclass
class UpsampleOps:
    pixel_shuffle_3d: Callable = upsample.pixel_shuffle_3d
    pixel_unshuffle_3d: Callable = upsample.pixel_unshuffle_3d
    channel_to_time: Callable = upsample.channel_to_time
    time_to_channel: Callable = upsample.time_to_channel
    pixel_shuffle_2d_video: Callable = upsample.pixel_shuffle_2d_video
    pixel_unshuffle_2d_video: Callable = upsample.pixel_unshuffle_2d_video
    decoupled_upsample: Callable = upsample.decoupled_upsample
    decoupled_downsample: Callable = upsample.decoupled_downsample


def _ramp(shape) -> np.ndarray:
    """Distinct values, so any misplaced element shows up."""
    return np.arange(math.prod(shape), dtype=np.float64).reshape(shape)


def _equivalence_shapes():
    for C, r_t, r_s in itertools.product((1, 2, 3), (1, 2), (1, 2)):
        for T, H, W in itertools.product(range(1, 5), repeat=3):
            yield C, r_t, r_s, T, H, W


def _prop_pi_equivalence(u: UpsampleOps):
    cases, pis = 0, {}
    for C, r_t, r_s, T, H, W in sorted(_equivalence_shapes(), key=lambda s: (s[0] * s[3] * s[4] * s[5], s)):
        key = (C, r_t, r_s)
        if key not in pis:
            pis[key] = oracles.solve_channel_permutation(C, r_t, r_s)
        x = _ramp((1, C * r_t * r_s * r_s, T, H, W))
        got = u.decoupled_upsample(x, upsample.UpsampleFactors(r_t, r_s))
        want = u.pixel_shuffle_3d(x[:, pis[key]], r_t, r_s)
        cases += 1
        bad = _first_mismatch(np.asarray(got), want)
        if bad:
            return cases, None, {"C": C, "r_t": r_t, "r_s": r_s, "THW": [T, H, W], **bad}
    return cases, None, None


PROBE_C, PROBE_R, PROBE_EXTENT = range(1, 5), range(1, 4), range(1, 5)


def _probe_shapes(rng, n):
    for _ in range(n):
        C, r = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        T, H, W = (int(v) for v in rng.integers(1, 5, size=3))
        yield C, r, T, H, W


def _minimal_index_failure(op, source):
    """Smallest probe-domain shape (by element count) on which ``op`` disagrees with ``source``."""
    domain = itertools.product(PROBE_C, PROBE_R, PROBE_EXTENT, PROBE_EXTENT, PROBE_EXTENT)
    for C, r, T, H, W in sorted(domain, key=lambda s: (math.prod(s[:1] + s[2:]) * s[1] ** 2, s)):
        x = _ramp((1, C * r * r, T, H, W))
        y = np.asarray(op(x, r))
        for c, t, h, w in itertools.product(range(C), range(T), range(H * r), range(W * r)):
            want = x[(0,) + tuple(source(c, t, h, w, C, r))]
            if y.shape != (1, C, T, H * r, W * r) or y[0, c, t, h, w] != want:
                return {"C": C, "r": r, "THW": [T, H, W], "index": [c, t, h, w],
                        "got": None if y.shape != (1, C, T, H * r, W * r) else float(y[0, c, t, h, w]),
                        "want": float(want)}
    return None


def _prop_framewise_probes(u: UpsampleOps, probes: int = 1000, seed: int = 0):
    """Random (shape, output index) probes of the framewise 2-D shuffle against its index formula."""
    rng = np.random.default_rng(seed)
    cache = {}
    for i, (C, r, T, H, W) in enumerate(_probe_shapes(rng, probes)):
        key = (C, r, T, H, W)
        if key not in cache:
            x = _ramp((1, C * r * r, T, H, W))
            cache[key] = (x, np.asarray(u.pixel_shuffle_2d_video(x, r)))
        x, y = cache[key]
        c, t = int(rng.integers(C)), int(rng.integers(T))
        h, w = int(rng.integers(H * r)), int(rng.integers(W * r))
        src = oracles.framewise_shuffle_source(c, t, h, w, C, r)
        if y.shape != (1, C, T, H * r, W * r) or y[0, c, t, h, w] != x[(0,) + src]:
            cex = _minimal_index_failure(u.pixel_shuffle_2d_video, oracles.framewise_shuffle_source)
            return i + 1, None, cex
    return probes, None, None


def _prop_channel_to_time(u: UpsampleOps, probes: int = 1000, seed: int = 1):
    rng = np.random.default_rng(seed)
    for i in range(probes):
        C, r = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        T, H, W = (int(v) for v in rng.integers(1, 4, size=3))
        x = _ramp((1, C * r, T, H, W))
        y = np.asarray(u.channel_to_time(x, r))
        c, t, h, w = int(rng.integers(C)), int(rng.integers(T * r)), int(rng.integers(H)), int(rng.integers(W))
        src = oracles.channel_to_time_source(c, t, h, w, C, r)
        if y.shape != (1, C, T * r, H, W) or y[0, c, t, h, w] != x[(0,) + src]:
            return i + 1, None, {"C": C, "r_t": r, "THW": [T, H, W], "index": [c, t, h, w]}
    return probes, None, None


def _prop_pixel_shuffle_3d_formula(u: UpsampleOps):
    cases = 0
    for C, r_t, r_s in itertools.product((1, 2), (1, 2, 3), (1, 2)):
        for T, H, W in ((1, 1, 1), (2, 3, 1), (3, 2, 2)):
            x = _ramp((1, C * r_t * r_s * r_s, T, H, W))
            want = oracles.apply_index_map(
                x, (1, C, T * r_t, H * r_s, W * r_s),
                lambda c, t, h, w: oracles.pixel_shuffle_3d_source(c, t, h, w, r_t, r_s))
            cases += 1
            bad = _first_mismatch(np.asarray(u.pixel_shuffle_3d(x, r_t, r_s)), want)
            if bad:
                return cases, None, {"C": C, "r_t": r_t, "r_s": r_s, "THW": [T, H, W], **bad}
    return cases, None, None


def _prop_round_trips(u: UpsampleOps, seed: int = 2):
    rng = np.random.default_rng(seed)
    cases = 0
    for C, r_t, r_s in itertools.product((1, 2, 3), (1, 2), (1, 2, 3)):
        T, H, W = (int(v) for v in rng.integers(1, 4, size=3))
        x = rng.normal(size=(2, C * r_t * r_s * r_s, T, H, W))
        f = upsample.UpsampleFactors(r_t, r_s)
        pairs = {
            "pixel_shuffle_3d": u.pixel_unshuffle_3d(u.pixel_shuffle_3d(x, r_t, r_s), r_t, r_s),
            "decoupled": u.decoupled_downsample(u.decoupled_upsample(x, f), f),
            "channel_to_time": u.time_to_channel(u.channel_to_time(x, r_t), r_t),
            "pixel_shuffle_2d_video": u.pixel_unshuffle_2d_video(u.pixel_shuffle_2d_video(x, r_s), r_s),
        }
        for name, back in pairs.items():
            cases += 1
            if not np.array_equal(np.asarray(back), x):
                return cases, None, {"op": name, "C": C, "r_t": r_t, "r_s": r_s, "THW": [T, H, W]}
    return cases, None, None


def run_upsample(u: UpsampleOps | None = None, probes: int = 1000) -> SuiteReport:
    u = u or UpsampleOps()
    s = "upsample"
    return SuiteReport([
        _timed(s, "decoupled_equals_permuted_3d_shuffle", lambda: _prop_pi_equivalence(u)),
        _timed(s, "framewise_2d_shuffle_index_formula", lambda: _prop_framewise_probes(u, probes)),
        _timed(s, "channel_to_time_index_formula", lambda: _prop_channel_to_time(u, probes)),
        _timed(s, "pixel_shuffle_3d_index_formula", lambda: _prop_pixel_shuffle_3d_formula(u)),
        _timed(s, "inverse_round_trips", lambda: _prop_round_trips(u)),
    ])


# ---------------------------------------------------------------- dwsep


def _random_dwsep(rng, max_extent=5):
    cin, cout = (int(v) for v in rng.integers(1, 5, size=2))
    k = tuple(int(rng.choice([1, 3, 5])) for _ in range(3))
    N = int(rng.integers(1, 3))
    T, H, W = (int(v) for v in rng.integers(1, max_extent + 1, size=3))
    p = ops.DwSepConv3dParams(
        rng.normal(size=(cin,) + k), rng.normal(size=(cout, cin, 1, 1, 1)),
        rng.normal(size=cin) if rng.random() < 0.8 else None,
        rng.normal(size=cout) if rng.random() < 0.8 else None,
        temporal_padding=str(rng.choice(ops.PADDING_MODES)), causal=bool(rng.random() < 0.7))
    return rng.normal(size=(N, cin, T, H, W)), p


def _prop_factorization(instances: int, seed: int = 3):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(instances):
        x, p = _random_dwsep(rng)
        K, b = oracles.factorized_kernel(p.depthwise, p.pointwise, p.depthwise_bias, p.pointwise_bias)
        full = ops.Conv3dParams(K, b, temporal_padding=p.temporal_padding, causal=p.causal)
        err = oracles.rel_error(ops.dwsep_conv3d(x, p), ops.conv3d(x, full))
        worst = max(worst, err)
        if not err < DWSEP_TOL:
            return i + 1, worst, {"x_shape": list(x.shape), "kernel": list(p.kernel), "rel": err}
    return instances, worst, None


def _prop_conv_direct_sum(instances: int, seed: int = 4):
    """The vectorized conv against explicit summation, including both padding modes."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(instances):
        x, p = _random_dwsep(rng, max_extent=3)
        K, b = oracles.factorized_kernel(p.depthwise, p.pointwise, p.depthwise_bias, p.pointwise_bias)
        full = ops.Conv3dParams(K, b, temporal_padding=p.temporal_padding, causal=p.causal)
        err = oracles.rel_error(ops.conv3d(x, full),
                                oracles.naive_conv3d(x, K, b, p.temporal_padding, p.causal))
        dw = oracles.rel_error(ops.depthwise_conv3d(x, p),
                               oracles.naive_depthwise_conv3d(x, p.depthwise, p.depthwise_bias,
                                                              p.temporal_padding, p.causal))
        worst = max(worst, err, dw)
        if not max(err, dw) < DWSEP_TOL:
            return i + 1, worst, {"x_shape": list(x.shape), "kernel": list(p.kernel), "rel": max(err, dw)}
    return instances, worst, None


def run_dwsep(instances: int = 200, direct: int = 40) -> SuiteReport:
    s = "dwsep"
    return SuiteReport([
        _timed(s, "dwsep_equals_factorized_full_conv", lambda: _prop_factorization(instances)),
        _timed(s, "conv_matches_direct_summation", lambda: _prop_conv_direct_sum(direct)),
    ])


# ---------------------------------------------------------------- gradients


@dataclass
class GradCase:
    """Scalar objective over named f64 arrays plus its analytic gradient."""

    inputs: dict[str, np.ndarray]
    objective: Callable[[dict], float]
    analytic: Callable[[dict], dict]


def _check_grad(case: GradCase) -> float:
    """Relative error over the instance's whole gradient vector (all inputs concatenated).

    A single bias gradient can be exactly zero by cancellation; scoring it
    alone would divide difference-quotient noise by nothing.
    """
    got = case.analytic(case.inputs)
    a, b = [], []
    for name, arr in case.inputs.items():
        def f(v, name=name):
            return case.objective({**case.inputs, name: v})
        a.append(np.ravel(got[name]))
        b.append(np.ravel(oracles.central_diff(f, arr)))
    return oracles.rel_error(np.concatenate(a), np.concatenate(b))


def _conv_case(rng) -> GradCase:
    cin, cout = (int(v) for v in rng.integers(1, 4, size=2))
    k = tuple(int(rng.choice([1, 3])) for _ in range(3))
    T, H, W = (int(v) for v in rng.integers(1, 4, size=3))
    pad, causal = str(rng.choice(ops.PADDING_MODES)), bool(rng.random() < 0.7)
    G = rng.normal(size=(1, cout, T, H, W))
    inputs = {"x": rng.normal(size=(1, cin, T, H, W)), "weight": rng.normal(size=(cout, cin) + k),
              "bias": rng.normal(size=cout)}

    def params(d):
        return ops.Conv3dParams(d["weight"], d["bias"], temporal_padding=pad, causal=causal)

    def analytic(d):
        gx, pg = ops.conv3d_grad(d["x"], params(d), G)
        return {"x": gx, **pg}
    return GradCase(inputs, lambda d: float(np.sum(ops.conv3d(d["x"], params(d)) * G)), analytic)


def _dwsep_case(rng) -> GradCase:
    cin, cout = (int(v) for v in rng.integers(1, 4, size=2))
    k = tuple(int(rng.choice([1, 3])) for _ in range(3))
    T, H, W = (int(v) for v in rng.integers(1, 4, size=3))
    pad, causal = str(rng.choice(ops.PADDING_MODES)), bool(rng.random() < 0.7)
    G = rng.normal(size=(1, cout, T, H, W))
    inputs = {"x": rng.normal(size=(1, cin, T, H, W)), "depthwise": rng.normal(size=(cin,) + k),
              "pointwise": rng.normal(size=(cout, cin, 1, 1, 1)),
              "depthwise_bias": rng.normal(size=cin), "pointwise_bias": rng.normal(size=cout)}

    def params(d):
        return ops.DwSepConv3dParams(d["depthwise"], d["pointwise"], d["depthwise_bias"], d["pointwise_bias"],
                                     temporal_padding=pad, causal=causal)

    def analytic(d):
        gx, pg = ops.dwsep_conv3d_grad(d["x"], params(d), G)
        return {"x": gx, **pg}
    return GradCase(inputs, lambda d: float(np.sum(ops.dwsep_conv3d(d["x"], params(d)) * G)), analytic)


def _group_norm_case(rng) -> GradCase:
    groups = int(rng.integers(1, 3))
    C = groups * int(rng.integers(1, 3))
    T, H, W = (int(v) for v in rng.integers(1, 3, size=3))
    shape = (int(rng.integers(1, 3)), C, T, H, W)
    if math.prod(shape[2:]) * C // groups < 2:
        shape = shape[:2] + (2,) + shape[3:]
    G = rng.normal(size=shape)
    inputs = {"x": rng.normal(size=shape), "gamma": rng.normal(size=C), "beta": rng.normal(size=C)}

    def params(d):
        return ops.GroupNormParams(groups, d["gamma"], d["beta"])

    def analytic(d):
        gx, pg = ops.group_norm_grad(d["x"], params(d), G)
        return {"x": gx, **pg}
    return GradCase(inputs, lambda d: float(np.sum(ops.group_norm(d["x"], params(d)) * G)), analytic)


def _activation_case(rng) -> GradCase:
    shape = (1,) + tuple(int(v) for v in rng.integers(1, 4, size=4))
    G = rng.normal(size=shape)
    x = rng.normal(scale=3.0, size=shape)
    return GradCase({"x": x}, lambda d: float(np.sum(ops.activation(d["x"]) * G)),
                    lambda d: {"x": ops.activation_grad(d["x"], G)})


def _rearrangement_case(rng) -> GradCase:
    """Forward rearrangement paired with the inverse used as its backward pass."""
    C, r_t, r_s = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
    T, H, W = (int(v) for v in rng.integers(1, 3, size=3))
    x = rng.normal(size=(1, C * r_t * r_s * r_s, T, H, W))
    f = upsample.UpsampleFactors(r_t, r_s)
    which = int(rng.integers(4))
    if which == 0:
        fwd, bwd = (lambda v: upsample.pixel_shuffle_3d(v, r_t, r_s)), \
                   (lambda g: upsample.pixel_unshuffle_3d(g, r_t, r_s))
    elif which == 1:
        fwd, bwd = (lambda v: upsample.decoupled_upsample(v, f)), (lambda g: upsample.decoupled_downsample(g, f))
    elif which == 2:
        fwd, bwd = (lambda v: upsample.channel_to_time(v, r_t)), (lambda g: upsample.time_to_channel(g, r_t))
    else:
        layer = Shuffle(r_t, r_s)
        fwd, bwd = (lambda v: layer.forward(v, {})), (lambda g: layer.backward(g, {}, {}))
    G = rng.normal(size=np.shape(fwd(x)))
    return GradCase({"x": x}, lambda d: float(np.sum(fwd(d["x"]) * G)), lambda d: {"x": bwd(G)})


def _away_from_zero(rng, shape, lo=0.2, hi=1.0):
    """Offsets bounded away from 0 keep |.| kinks far outside the finite-difference stencil."""
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(lo, hi, size=shape)


def _head_case(rng) -> GradCase:
    cs, ct = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    head = ProjectionHead("b", cs, ct)
    w = {k: v.astype(np.float64) for k, v in init_heads({"b": head}, int(rng.integers(1 << 30))).items()}
    for k in w:
        w[k] = w[k] + rng.normal(scale=0.3, size=w[k].shape)
    shape = (1, cs) + tuple(int(v) for v in rng.integers(1, 3, size=3))
    G = rng.normal(size=(1, ct) + shape[2:])
    inputs = {"x": rng.normal(size=shape), **w}

    def objective(d):
        return float(np.sum(head.forward(d["x"], d) * G))

    def analytic(d):
        grads = {}
        head.forward(d["x"], d)
        gx = head.backward(G, d, grads)
        return {"x": gx, **grads}
    return GradCase(inputs, objective, analytic)


def _distill_setup(rng):
    blocks = ("mid", "up_0")[: int(rng.integers(1, 3))]
    heads, sf, tf = {}, {}, {}
    for b in blocks:
        cs, ct = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        heads[b] = ProjectionHead(b, cs, ct)
    hw = {k: v.astype(np.float64) for k, v in init_heads(heads, int(rng.integers(1 << 30))).items()}
    for b in blocks:
        shape = (1,) + tuple(int(v) for v in rng.integers(1, 3, size=3))
        sf[b] = rng.normal(size=(1, heads[b].c_student) + shape[1:])
        proj = heads[b].forward(sf[b], hw)
        tf[b] = proj + _away_from_zero(rng, proj.shape)
    return blocks, heads, hw, sf, tf


def _distill_case(rng) -> GradCase:
    blocks, heads, hw, sf, tf = _distill_setup(rng)
    inputs = {**{f"feat:{b}": v for b, v in sf.items()}, **hw}

    def split(d):
        return {b: d[f"feat:{b}"] for b in blocks}, {k: v for k, v in d.items() if not k.startswith("feat:")}

    def objective(d):
        s, w = split(d)
        return distill_loss(s, tf, heads, w, blocks).value

    def analytic(d):
        s, w = split(d)
        r = distill_loss(s, tf, heads, w, blocks)
        return {**{f"feat:{b}": g for b, g in r.feature_grads.items()}, **r.head_grads}
    return GradCase(inputs, objective, analytic)


def _total_case(rng) -> GradCase:
    blocks, heads, hw, sf, tf = _distill_setup(rng)
    cfg = DistillConfig(align_blocks=blocks, alpha_distill=float(rng.uniform(0.1, 2.0)))
    shape = (1, 3) + tuple(int(v) for v in rng.integers(1, 3, size=3))
    x_hat = rng.normal(size=shape)
    x = x_hat + _away_from_zero(rng, shape)
    mu, logvar = rng.normal(size=(1, 2, 1, 1, 1)), rng.normal(size=(1, 2, 1, 1, 1))
    inputs = {"x_hat": x_hat, **{f"feat:{b}": v for b, v in sf.items()}, **hw}

    def run(d):
        s = {b: d[f"feat:{b}"] for b in blocks}
        w = {k: v for k, v in d.items() if k != "x_hat" and not k.startswith("feat:")}
        return total_loss(x, d["x_hat"], mu, logvar, cfg, s, tf, heads, w)

    def analytic(d):
        r = run(d)
        return {"x_hat": r.grad_x_hat, **{f"feat:{b}": g for b, g in r.feature_grads.items()}, **r.head_grads}
    return GradCase(inputs, lambda d: run(d).total, analytic)


GRAD_CASES: dict[str, Callable] = {
    "conv3d": _conv_case,
    "dwsep_conv3d": _dwsep_case,
    "group_norm": _group_norm_case,
    "activation": _activation_case,
    "rearrangements": _rearrangement_case,
    "projection_head": _head_case,
    "distill_loss": _distill_case,
    "total_loss": _total_case,
}


def _prop_grad(make: Callable, instances: int, seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(instances):
        err = _check_grad(make(rng))
        worst = max(worst, err)
        if not err < GRAD_TOL:
            return i + 1, worst, {"instance": i, "seed": seed, "rel": err}
    return instances, worst, None


def run_grad(instances: int = 100, only: tuple[str, ...] | None = None) -> SuiteReport:
    names = only or tuple(GRAD_CASES)
    return SuiteReport([
        _timed("grad", name, lambda name=name, i=i: _prop_grad(GRAD_CASES[name], instances, 100 + i))
        for i, name in enumerate(GRAD_CASES) if name in names
    ])


def run(suite: str = "all", upsample_ops: UpsampleOps | None = None) -> SuiteReport:
    if suite not in SUITES + ("all",):
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES + ('all',))}")
    report = SuiteReport()
    if suite in ("upsample", "all"):
        report.extend(run_upsample(upsample_ops))
    if suite in ("dwsep", "all"):
        report.extend(run_dwsep())
    if suite in ("grad", "all"):
        report.extend(run_grad())
    return report

"""Acceptance criteria 1-10, each at its stated tolerance and time budget.

Every test records a one-line verdict through the ``criteria`` fixture; the
lines are repeated in the terminal summary at the end of the run.
"""

import statistics
import time

import numpy as np
import pytest

from turbovaed import verify
from turbovaed import weights as wio
from turbovaed.bench import bench_upsamplers, profile_decoder
from turbovaed.config import load_config
from turbovaed.decoder import count_params, decoder_forward, init_weights, redundancy_sweep
from turbovaed.distill import ToyExperiment
from turbovaed.metrics import psnr, ssim

from test_decoder import block_closed_form

REFERENCE_REDUCTION_PCT = 41.6


def _result(report, name):
    return next(r for r in report.results if r.name == name)


def test_01_upsampling_equivalence(criteria):
    t0 = time.perf_counter()
    r = _result(verify.run_upsample(), "decoupled_equals_permuted_3d_shuffle")
    dt = time.perf_counter() - t0
    ok = r.passed and r.cases == 768 and dt < 30
    criteria.record(1, "decoupled == pi-permuted 3D shuffle, exhaustive", ok,
                    f"{r.cases} shapes exact, {dt:.2f} s (limit 30 s)")
    assert ok, r.counterexample


def test_02_framewise_shuffle_index_formula(criteria):
    t0 = time.perf_counter()
    cases, _, cex = verify._prop_framewise_probes(verify.UpsampleOps(), probes=1000)
    dt = time.perf_counter() - t0
    ok = cex is None and cases == 1000 and dt < 5
    criteria.record(2, "framewise 2D shuffle vs index formula", ok, f"{cases} probes exact, {dt:.2f} s (limit 5 s)")
    assert ok, cex


def test_03_dwsep_factorization(criteria):
    t0 = time.perf_counter()
    r = _result(verify.run_dwsep(200), "dwsep_equals_factorized_full_conv")
    dt = time.perf_counter() - t0
    cases, worst, cex = r.cases, r.worst, r.counterexample
    ok = r.passed and cases == 200 and worst < 1e-5 and dt < 60
    criteria.record(3, "dwsep == full conv with factorized kernel", ok,
                    f"{cases} instances, worst rel err {worst:.2e} (limit 1e-5), {dt:.2f} s (limit 60 s)")
    assert ok, cex


def test_04_gradient_suite(criteria):
    t0 = time.perf_counter()
    rep = verify.run_grad(instances=100)
    dt = time.perf_counter() - t0
    required = {"conv3d", "dwsep_conv3d", "group_norm", "activation", "rearrangements", "distill_loss",
                "total_loss", "projection_head"}
    names = {r.name for r in rep.results}
    worst = max(r.worst for r in rep.results)
    ok = rep.ok and required <= names and all(r.cases >= 100 for r in rep.results) and worst < 1e-4 and dt < 300
    criteria.record(4, "backward passes vs f64 central differences", ok,
                    f"{len(rep.results)} ops x >=100 instances, worst rel err {worst:.2e} (limit 1e-4), "
                    f"{dt:.1f} s (limit 300 s)")
    assert ok, rep.lines()


def test_05_parameter_accounting(criteria):
    cfg = load_config("ltx")
    details, ok = [], True
    for name in ("ltx", "dc", "hunyuan"):
        c = load_config(name)
        pc = count_params(c)
        c_in = c.latent_channels
        for b in c.blocks:
            ok &= pc.per_block[b.name] == block_closed_form(c, b.name, c_in)
            c_in = b.out_channels
        ok &= pc.total == sum(pc.per_block.values())
    base = count_params(cfg.with_kinds(())).total
    hybrid = count_params(cfg.with_kinds(("mid", "up_0"))).total
    ok &= hybrid < base
    counts = [n for _, n in redundancy_sweep(cfg, cfg.block_names[-2])]
    monotone = all(a >= b for a, b in zip(counts, counts[1:]))
    reduction = 100.0 * (base - hybrid) / base
    within = abs(reduction - REFERENCE_REDUCTION_PCT) <= 15
    ok = ok and monotone and within
    details.append(f"closed forms exact; mid+up_0 dwsep {base:,} -> {hybrid:,} params "
                   f"(-{reduction:.2f}%, reference {REFERENCE_REDUCTION_PCT}% +-15 pp); sweep monotone={monotone}")
    criteria.record(5, "parameter accounting", ok, "; ".join(details))
    assert ok


def test_06_shape_laws(criteria):
    t0 = time.perf_counter()
    shapes = {}
    for name in ("hunyuan", "dc", "ltx"):
        cfg = load_config(name).scaled(16, 2)
        lat = cfg.latent_shape(17, 256, 256)
        latent = np.random.default_rng(0).normal(size=lat).astype(np.float32)
        video, _ = decoder_forward(latent, cfg, init_weights(cfg))
        shapes[cfg.factors] = (lat, video.shape)
    dt = time.perf_counter() - t0
    ok = all(v == (1, 3, 17, 256, 256) for _, v in shapes.values()) and len(shapes) == 3 and dt < 120
    criteria.record(6, "shape laws for (4,8,8), (4,32,32), (8,32,32)", ok,
                    ", ".join(f"{f}: {lat[1:]} -> {v}" for f, (lat, v) in shapes.items()) + f"; {dt:.1f} s (limit 120 s)")
    assert ok


@pytest.mark.slow
def test_07_distillation_direction(criteria, toy_teacher_cache):
    exp = ToyExperiment()
    teacher = exp.teacher(cache=toy_teacher_cache)
    rows, ok_time = [], True
    for seed in range(5):
        t0 = time.perf_counter()
        base = exp.run(seed, distill=False, teacher=teacher)
        t_base = time.perf_counter() - t0
        t0 = time.perf_counter()
        dist = exp.run(seed, distill=True, teacher=teacher)
        t_dist = time.perf_counter() - t0
        ok_time &= max(t_base, t_dist) <= 180
        tau = exp.threshold(base.log)
        rows.append((seed, tau, exp.steps_to(base.log, tau), exp.steps_to(dist.log, tau),
                     base.log.final_eval_psnr(), dist.log.final_eval_psnr(), max(t_base, t_dist)))
    never = exp.steps + 1  # a run that never reaches tau counts as slower than any that does
    med_base = statistics.median(r[2] if r[2] is not None else never for r in rows)
    med_dist = statistics.median(r[3] if r[3] is not None else never for r in rows)
    psnr_base = statistics.median(r[4] for r in rows)
    psnr_dist = statistics.median(r[5] for r in rows)
    ok = med_dist < med_base and psnr_dist >= psnr_base and ok_time
    per_seed = "; ".join(f"seed {s}: tau {t:.4f} steps {b}/{d}, PSNR {pb:.2f}/{pd:.2f}, {sec:.0f} s"
                         for s, t, b, d, pb, pd, sec in rows)
    criteria.record(7, "distillation reaches tau sooner, eval PSNR not worse", ok,
                    f"median steps-to-tau {med_dist} (distill) vs {med_base} (baseline), median eval PSNR "
                    f"{psnr_dist:.2f} vs {psnr_base:.2f} dB, slowest run {max(r[6] for r in rows):.0f} s "
                    f"(limit 180 s) [{per_seed}]")
    assert ok


def test_08_profiler_consistency(criteria):
    cfg = load_config("toy-student")
    w = init_weights(cfg, 0)
    lat = cfg.latent_shape(17, 64, 64)
    a = profile_decoder(cfg, w, lat)
    b = profile_decoder(cfg, w, lat)
    coverage_ok = abs(a.coverage - 1.0) <= 0.10
    e2e_dev = abs(a.end_to_end.median_ns - b.end_to_end.median_ns) / min(a.end_to_end.median_ns, b.end_to_end.median_ns)

    shape = (1, 128 * 8, 3, 8, 8)
    t1 = bench_upsamplers([shape], [(2, 2)], warmup=5, repeats=50, ops=("pixel_shuffle_3d", "decoupled"))
    t2 = bench_upsamplers([shape], [(2, 2)], warmup=5, repeats=50, ops=("pixel_shuffle_3d", "decoupled"))
    ref1, ref2 = t1.row("pixel_shuffle_3d").median_ns, t2.row("pixel_shuffle_3d").median_ns
    op_dev = abs(ref1 - ref2) / min(ref1, ref2)
    ratio = t1.row("decoupled").median_ns / ref1
    ok = coverage_ok and e2e_dev <= 0.25 and op_dev <= 0.25 and ratio <= 1.2
    criteria.record(8, "profiler consistency", ok,
                    f"block sum / end-to-end {a.coverage:.3f} (within 10%), back-to-back median deviation "
                    f"decode {100 * e2e_dev:.1f}% and shuffle {100 * op_dev:.1f}% (limit 25%), "
                    f"decoupled / 3D shuffle {ratio:.2f} on {shape} r=2 (limit 1.2)")
    assert ok


def test_09_metric_closed_forms(criteria):
    rng = np.random.default_rng(0)
    a = rng.uniform(0.2, 0.8, size=(1, 3, 4, 16, 16))
    p = psnr(a, a + 0.1)
    s_self = ssim(a, a)
    z, o = np.zeros((1, 1, 1, 11, 11)), np.ones((1, 1, 1, 11, 11))
    c1, c2 = 1e-4, 9e-4
    closed = (2 * 0 * 1 + c1) * (2 * 0 + c2) / ((0 + 1 + c1) * (0 + 0 + c2))
    s_const = ssim(z, o)
    ok = abs(p - 20.0) <= 1e-6 and s_self == 1.0 and abs(s_const - closed) <= 1e-6
    criteria.record(9, "PSNR/SSIM closed forms", ok,
                    f"PSNR(+0.1) {p:.9f} dB, SSIM(a,a) {s_self!r}, SSIM(0,1) {s_const:.9e} vs {closed:.9e}")
    assert ok


def test_10_format_robustness(criteria, tmp_path):
    rng = np.random.default_rng(0)
    store = wio.WeightStore({f"b{i}/t": rng.normal(size=tuple(rng.integers(0, 4, size=i % 6))).astype(np.float32)
                             for i in range(12)})
    store["nan/inf"] = np.array([np.nan, np.inf, -np.inf, -0.0], np.float32)
    wio.save(store, tmp_path / "s.tvwd")
    back = wio.load(tmp_path / "s.tvwd")
    bitwise = list(back) == list(store) and all(back[k].tobytes() == store[k].tobytes() and
                                                back[k].shape == store[k].shape for k in store)
    blob = wio.to_bytes(store)
    structured = crashes = accepted = 0
    for i in range(1000):
        data = bytearray(blob)
        if i % 2:
            data = data[:int(rng.integers(0, len(data)))]
        else:
            for _ in range(int(rng.integers(1, 9))):
                data[int(rng.integers(0, len(data)))] = int(rng.integers(0, 256))
        try:
            wio.from_bytes(bytes(data))
            accepted += 1
        except wio.WeightsError:
            structured += 1
        except Exception:
            crashes += 1
    ok = bitwise and crashes == 0 and structured + accepted == 1000
    criteria.record(10, "TVWD round trip and fuzz", ok,
                    f"bitwise round trip {bitwise}; 1000 fuzz cases: {structured} structured errors, "
                    f"{accepted} loaded (payload-only mutations), {crashes} crashes")
    assert ok

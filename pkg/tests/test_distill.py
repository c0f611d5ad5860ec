import math

import numpy as np
import pytest

from turbovaed.config import _build
from turbovaed.decoder import init_weights
from turbovaed.distill import (DistillConfig, ProjectionHead, ToyData, ToyTeacher, TrainingDiverged, distill_loss,
                               init_heads, kl_divergence, make_heads, total_loss, train_decoder)
from turbovaed.errors import ConfigError, ShapeError
from turbovaed.synthetic import ToyEncoder, moving_patterns


def identity_head(block, c):
    head = ProjectionHead(block, c, c)
    eye = np.eye(c, dtype=np.float64).reshape(c, c, 1, 1, 1)
    w = {f"heads/{block}/conv1/weight": eye, f"heads/{block}/conv1/bias": np.zeros(c),
         f"heads/{block}/conv2/weight": eye, f"heads/{block}/conv2/bias": np.zeros(c)}
    return head, w


def test_perfect_alignment_is_zero():
    f = np.random.default_rng(0).normal(size=(1, 2, 2, 2, 2))
    head, w = identity_head("mid", 2)
    proj = head.forward(f, w)  # teacher features equal to the projection
    d = distill_loss({"mid": f}, {"mid": proj}, {"mid": head}, w)
    assert d.value == 0.0


def test_constant_features_give_unit_loss():
    head, w = identity_head("mid", 3)
    zeros = np.zeros((2, 3, 2, 2, 2))  # SiLU(0) = 0, so the projection is exactly 0
    d = distill_loss({"mid": zeros}, {"mid": np.ones_like(zeros)}, {"mid": head}, w)
    assert d.value == 1.0


def test_losses_sum_over_blocks_and_are_nonnegative():
    rng = np.random.default_rng(1)
    heads = {"mid": ProjectionHead("mid", 2, 3), "up_0": ProjectionHead("up_0", 2, 4)}
    w = init_heads(heads, 0)
    fs = {"mid": rng.normal(size=(1, 2, 2, 2, 2)), "up_0": rng.normal(size=(1, 2, 3, 4, 4))}
    ft = {"mid": rng.normal(size=(1, 3, 2, 2, 2)), "up_0": rng.normal(size=(1, 4, 3, 4, 4))}
    both = distill_loss(fs, ft, heads, w).value
    one = distill_loss(fs, ft, {"mid": heads["mid"]}, w).value
    two = distill_loss(fs, ft, {"up_0": heads["up_0"]}, w).value
    assert both == pytest.approx(one + two, rel=1e-12) and min(one, two) > 0
    assert heads["up_0"].forward(fs["up_0"], w).shape == (1, 4, 3, 4, 4)


def test_distill_errors():
    head, w = identity_head("mid", 2)
    f = np.zeros((1, 2, 1, 1, 1))
    with pytest.raises(ConfigError):
        distill_loss({"mid": f}, {}, {"mid": head}, w)
    with pytest.raises(ShapeError):
        distill_loss({"mid": f}, {"mid": np.zeros((1, 3, 1, 1, 1))}, {"mid": head}, w)
    with pytest.raises(ConfigError):
        DistillConfig(align_blocks=())
    with pytest.raises(ConfigError):
        DistillConfig(alpha_distill=-1)


def test_kl_closed_forms():
    assert kl_divergence(np.zeros((1, 4)), np.zeros((1, 4))) == 0.0
    assert kl_divergence(np.ones((1, 1)), np.zeros((1, 1))) == 0.5
    # batch mean: two items with the same statistics give the per-item value
    assert kl_divergence(np.ones((2, 1)), np.zeros((2, 1))) == 0.5


def test_total_loss_components():
    cfg = DistillConfig(align_blocks=("mid",))
    x = np.random.default_rng(0).uniform(size=(1, 3, 2, 4, 4))
    head, w = identity_head("mid", 2)
    f = np.zeros((1, 2, 1, 1, 1))
    zero = total_loss(x, x.copy(), np.zeros((1, 2)), np.zeros((1, 2)), cfg, {"mid": f}, {"mid": f}, {"mid": head}, w)
    assert (zero.total, zero.l1, zero.distill, zero.kl, zero.lpips, zero.adv) == (0, 0, 0, 0, 0, 0)
    x_hat = x + 0.25
    plain = total_loss(x, x_hat, None, None, DistillConfig(alpha_distill=0.0))
    assert plain.total == plain.l1 == pytest.approx(0.25)
    kl = total_loss(x, x_hat, np.ones((1, 1)), np.zeros((1, 1)), DistillConfig(alpha_distill=0.0))
    assert kl.kl == 0.5 and kl.total == pytest.approx(0.25 + 1e-7 * 0.5)


def test_hooks_and_stage_two():
    def hook(x, x_hat):
        return 2.0, np.full_like(x_hat, 0.5)

    cfg = DistillConfig(alpha_distill=0.0, lpips_hook=hook, adv_hook=hook, stage2_step=3)
    x = np.zeros((1, 3, 1, 2, 2))
    s1 = total_loss(x, x + 1, None, None, cfg)
    s2 = total_loss(x, x + 1, None, None, cfg, stage2=True)
    assert s1.lpips == 2.0 and s1.adv == 0.0 and s1.total == pytest.approx(1 + 2.0)
    assert s2.adv == 2.0 and s2.total == pytest.approx(1 + 2.0 + 0.05 * 2.0)
    np.testing.assert_allclose(s2.grad_x_hat, 1 / 12 + 0.5 + 0.05 * 0.5)


# ---------------------------------------------------------------- training


@pytest.fixture(scope="module")
def toy():
    tcfg = _build(4, [16, 16, 8], [(2, 2), (1, 2)], (1, 1), nmid=1, nup=1, groups=4, dwsep=())
    scfg = _build(4, [8, 8, 4], [(2, 2), (1, 2)], (1, 1), nmid=1, nup=1, groups=4)
    enc = ToyEncoder(4, 2, 4, seed=0)
    teacher = ToyTeacher(enc, tcfg, init_weights(tcfg, 5))
    data = ToyData.generate(enc, scfg, 2, 1, 5, 16, seed=3)
    return scfg, teacher, data


def test_zero_steps_is_a_no_op(toy):
    scfg, teacher, data = toy
    w0 = init_weights(scfg, 0)
    r = train_decoder(DistillConfig(), scfg, data, 0, 0, teacher=teacher, weights=w0.copy())
    assert r.log.records == []
    assert all(np.array_equal(r.weights[k], w0[k]) for k in w0)


def test_zero_lr_full_batch_gives_constant_losses(toy):
    scfg, teacher, data = toy
    r = train_decoder(DistillConfig(lr=0.0, batch_size=2), scfg, data, 4, 0, teacher=teacher)
    totals = [rec.total for rec in r.log.records]
    assert len(set(totals)) == 1 and r.log.records[0].distill > 0


def test_training_is_deterministic_and_leaves_teacher_untouched(toy, tmp_path):
    scfg, teacher, data = toy
    before = {k: v.copy() for k, v in teacher.weights.items()}
    cfg = DistillConfig(lr=1e-3, batch_size=1, eval_every=2)
    a = train_decoder(cfg, scfg, data, 4, 7, teacher=teacher)
    b = train_decoder(cfg, scfg, data, 4, 7, teacher=teacher)
    a.log.write_csv(tmp_path / "a.csv")
    b.log.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert all(a.weights[k].tobytes() == b.weights[k].tobytes() for k in a.weights)
    assert all(teacher.weights[k].tobytes() == before[k].tobytes() for k in before)
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "step,L1,L_distill,L_kl,total,eval_psnr"
    assert not math.isnan(a.log.final_eval_psnr())
    assert set(a.head_weights) == set(init_heads(make_heads(scfg, teacher.cfg, cfg.align_blocks)))


def test_alpha_zero_matches_plain_reconstruction(toy):
    scfg, teacher, data = toy
    with_teacher = train_decoder(DistillConfig(alpha_distill=0.0, lr=1e-3), scfg, data, 3, 1, teacher=teacher)
    plain = train_decoder(DistillConfig(alpha_distill=0.0, lr=1e-3), scfg, data, 3, 1)
    assert [r.total for r in with_teacher.log.records] == [r.total for r in plain.log.records]
    assert all(r.distill == 0.0 for r in plain.log.records)
    for r in plain.log.records:
        assert r.total == pytest.approx(r.l1 + 1e-7 * r.kl, rel=1e-12)


def test_divergence_aborts(toy):
    scfg, teacher, data = toy
    w = init_weights(scfg, 0)
    w["head/conv/bias"] = np.full_like(w["head/conv/bias"], np.nan)
    with pytest.raises(TrainingDiverged):
        train_decoder(DistillConfig(), scfg, data, 2, 0, weights=w)
    with pytest.raises(ValueError):
        train_decoder(DistillConfig(), scfg, data, -1, 0)


def test_synthetic_videos_are_seeded_and_in_range():
    a = moving_patterns(2, 5, 16, 16, seed=4)
    assert a.shape == (2, 3, 5, 16, 16) and a.dtype == np.float32
    assert a.min() >= 0 and a.max() <= 1
    np.testing.assert_array_equal(a, moving_patterns(2, 5, 16, 16, seed=4))
    assert not np.array_equal(a, moving_patterns(2, 5, 16, 16, seed=5))
    mu, logvar = ToyEncoder(4, 2, 4).encode(a)
    assert mu.shape == (2, 4, 3, 4, 4) == logvar.shape

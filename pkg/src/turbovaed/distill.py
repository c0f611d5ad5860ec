"""Decoder-only feature-alignment distillation at toy scale.

A frozen encoder turns synthetic videos into latents; a frozen, wider
teacher decoder provides intermediate features; the student decoder is
trained on

    L = L1 + a_lpips * L_lpips + a_distill * L_distill + a_kl * L_kl + a_adv * L_adv

where L_distill sums, over the aligned blocks, the mean absolute difference
between projected student features and teacher features. Projection heads
are two 1x1x1 convolutions with a SiLU between them and are trained jointly
with the student.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .config import DecoderConfig
from .decoder import Act, Conv, Decoder, Sequential, init_weights
from .errors import ConfigError, ShapeError
from .metrics import frame_psnr
from .optim import AdamState, adam_step
from .synthetic import ToyEncoder, moving_patterns
from .weights import WeightStore

log = logging.getLogger(__name__)

# (x, x_hat) -> (value, d value / d x_hat)
LossHook = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]


@dataclass
class DistillConfig:
    align_blocks: tuple[str, ...] = ("mid", "up_0", "up_1")
    alpha_lpips: float = 1.0
    alpha_distill: float = 1.0
    alpha_kl: float = 1e-7
    alpha_adv: float = 0.05
    lpips_hook: LossHook | None = None
    adv_hook: LossHook | None = None
    lr: float = 2e-4
    head_lr: float | None = None  # projection heads; None = lr
    betas: tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 4
    stage2_step: int | None = None  # L_adv joins from this step; None = never
    eval_every: int = 25

    def __post_init__(self):
        self.align_blocks = tuple(self.align_blocks)
        if not self.align_blocks:
            raise ConfigError("align_blocks must be nonempty")
        for a in (self.alpha_lpips, self.alpha_distill, self.alpha_kl, self.alpha_adv):
            if a < 0:
                raise ConfigError("loss weights must be >= 0")


# ---------------------------------------------------------------- projection heads


class ProjectionHead(Sequential):
    """1x1x1 conv (C_s -> C_t) -> SiLU -> 1x1x1 conv (C_t -> C_t)."""

    def __init__(self, block: str, c_student: int, c_teacher: int):
        self.block, self.c_student, self.c_teacher = block, c_student, c_teacher
        super().__init__([
            Conv(f"heads/{block}/conv1", c_student, c_teacher, "standard", 1), Act(),
            Conv(f"heads/{block}/conv2", c_teacher, c_teacher, "standard", 1),
        ])


def make_heads(student_cfg: DecoderConfig, teacher_cfg: DecoderConfig, blocks) -> dict[str, ProjectionHead]:
    return {b: ProjectionHead(b, student_cfg.block(b).out_channels, teacher_cfg.block(b).out_channels)
            for b in blocks}


def init_heads(heads: Mapping[str, ProjectionHead], seed: int = 0) -> WeightStore:
    rng = np.random.default_rng(seed)
    store = WeightStore()
    for head in heads.values():
        for name, shape in head.spec().items():
            if name.endswith("/bias"):
                store[name] = np.zeros(shape, np.float32)
            else:
                bound = 1.0 / np.sqrt(shape[1])
                store[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return store


# ---------------------------------------------------------------- losses


@dataclass
class DistillResult:
    value: float
    feature_grads: dict[str, np.ndarray]
    head_grads: dict[str, np.ndarray]


def distill_loss(student_feats: Mapping, teacher_feats: Mapping, heads: Mapping[str, ProjectionHead],
                 head_weights: Mapping, blocks=None) -> DistillResult:
    """Sum over aligned blocks of mean |head(f_student) - f_teacher|, with gradients."""
    blocks = tuple(heads) if blocks is None else tuple(blocks)
    value, fgrads, hgrads = 0.0, {}, {}
    for b in blocks:
        if b not in student_feats or b not in teacher_feats or b not in heads:
            raise ConfigError(f"block {b!r} missing from student/teacher features or heads")
        fs, ft = student_feats[b], teacher_feats[b]
        proj = heads[b].forward(fs, head_weights)
        if proj.shape != np.shape(ft):
            raise ShapeError(f"{b}: projected student {proj.shape} vs teacher {np.shape(ft)}")
        diff = proj - np.asarray(ft, proj.dtype)
        value += float(np.abs(diff).sum(dtype=np.float64) / diff.size)
        g = np.sign(diff) / diff.size
        fgrads[b] = heads[b].backward(g, head_weights, hgrads)
    return DistillResult(value, fgrads, hgrads)


def kl_divergence(mu, logvar) -> float:
    """KL(N(mu, exp(logvar)) || N(0, 1)), summed over latent elements, averaged over the batch."""
    mu = np.asarray(mu, np.float64)
    logvar = np.asarray(logvar, np.float64)
    n = mu.shape[0] if mu.ndim else 1
    return float(0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar) / n)


@dataclass
class LossBreakdown:
    total: float
    l1: float
    distill: float = 0.0
    kl: float = 0.0
    lpips: float = 0.0
    adv: float = 0.0
    grad_x_hat: np.ndarray | None = None
    feature_grads: dict[str, np.ndarray] = field(default_factory=dict)
    head_grads: dict[str, np.ndarray] = field(default_factory=dict)


def total_loss(x, x_hat, mu, logvar, cfg: DistillConfig, student_feats=None, teacher_feats=None,
               heads=None, head_weights=None, stage2: bool = False) -> LossBreakdown:
    """Composite loss and its gradients w.r.t. ``x_hat``, student features and heads.

    L_kl depends only on the frozen encoder's statistics, so it is logged but
    carries no gradient to trainable parameters.
    """
    x = np.asarray(x, dtype=np.asarray(x_hat).dtype)
    if x.shape != np.shape(x_hat):
        raise ShapeError(f"x {x.shape} and x_hat {np.shape(x_hat)} differ")
    diff = x_hat - x
    l1 = float(np.abs(diff).sum(dtype=np.float64) / diff.size)
    g = np.sign(diff) / diff.size
    out = LossBreakdown(total=0.0, l1=l1)
    out.kl = kl_divergence(mu, logvar) if mu is not None else 0.0
    total = l1 + cfg.alpha_kl * out.kl
    if cfg.alpha_distill and heads:
        d = distill_loss(student_feats, teacher_feats, heads, head_weights, cfg.align_blocks)
        out.distill = d.value
        total += cfg.alpha_distill * d.value
        out.feature_grads = {k: cfg.alpha_distill * v for k, v in d.feature_grads.items()}
        out.head_grads = {k: cfg.alpha_distill * v for k, v in d.head_grads.items()}
    if cfg.lpips_hook is not None:
        out.lpips, gl = cfg.lpips_hook(x, x_hat)
        total += cfg.alpha_lpips * out.lpips
        g = g + cfg.alpha_lpips * gl
    if stage2 and cfg.adv_hook is not None:
        out.adv, ga = cfg.adv_hook(x, x_hat)
        total += cfg.alpha_adv * out.adv
        g = g + cfg.alpha_adv * ga
    out.total = total
    out.grad_x_hat = g
    return out


# ---------------------------------------------------------------- teacher


@dataclass
class ToyTeacher:
    encoder: ToyEncoder
    cfg: DecoderConfig
    weights: WeightStore

    def features(self, latent):
        return Decoder(self.cfg).forward(latent, self.weights)


@dataclass
class ToyData:
    """Fixed training clips (cycled in order) plus a held-out evaluation batch, pre-encoded."""

    train: np.ndarray
    train_mu: np.ndarray
    train_logvar: np.ndarray
    eval: np.ndarray
    eval_mu: np.ndarray

    @classmethod
    def generate(cls, encoder: ToyEncoder, cfg: DecoderConfig, n_train: int, n_eval: int,
                 frames: int, size: int, seed: int) -> "ToyData":
        train = moving_patterns(n_train, frames, size, size, seed=seed)
        evalv = moving_patterns(n_eval, frames, size, size, seed=seed + 10_007)
        mu, logvar = encoder.encode(train)
        emu, _ = encoder.encode(evalv)
        return cls(train, mu, logvar, evalv, emu)


# ---------------------------------------------------------------- training


@dataclass
class StepRecord:
    step: int
    l1: float
    distill: float
    kl: float
    total: float
    eval_psnr: float = math.nan


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)

    FIELDS = ("step", "L1", "L_distill", "L_kl", "total", "eval_psnr")

    def l1(self) -> np.ndarray:
        return np.array([r.l1 for r in self.records])

    def smoothed_l1(self, window: int = 1) -> np.ndarray:
        """Trailing mean of training L1 over the last ``window`` steps (fewer at the start)."""
        l1 = self.l1()
        c = np.concatenate([[0.0], np.cumsum(l1)])
        i = np.arange(1, len(l1) + 1)
        lo = np.maximum(i - window, 0)
        return (c[i] - c[lo]) / (i - lo)

    def steps_to(self, threshold: float, window: int = 1) -> int | None:
        """First step whose (trailing-mean) training L1 is <= ``threshold``."""
        for r, v in zip(self.records, self.smoothed_l1(window)):
            if v <= threshold:
                return r.step
        return None

    def final_eval_psnr(self) -> float:
        vals = [r.eval_psnr for r in self.records if not math.isnan(r.eval_psnr)]
        return vals[-1] if vals else math.nan

    def rows(self):
        for r in self.records:
            yield [r.step, r.l1, r.distill, r.kl, r.total, "" if math.isnan(r.eval_psnr) else r.eval_psnr]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.FIELDS)
            w.writerows(self.rows())


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    log: TrainLog
    weights: WeightStore
    head_weights: WeightStore


def train_decoder(cfg: DistillConfig, student_cfg: DecoderConfig, data: ToyData, steps: int, seed: int,
                  teacher: ToyTeacher | None = None, weights: WeightStore | None = None) -> TrainResult:
    """Train ``student_cfg`` on ``data`` for ``steps`` AdamW steps.

    With ``teacher`` given and ``alpha_distill > 0`` the feature alignment
    term is active. Minibatches cycle through the training clips in a fixed
    order; everything is determined by ``seed``.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    weights = weights if weights is not None else init_weights(student_cfg, seed)
    distilling = teacher is not None and cfg.alpha_distill > 0
    heads = make_heads(student_cfg, teacher.cfg, cfg.align_blocks) if distilling else {}
    head_weights = init_heads(heads, seed + 1) if distilling else WeightStore()
    teacher_feats = None
    if distilling:
        _, teacher_feats = teacher.features(data.train_mu)

    student = Decoder(student_cfg)
    state, head_state = AdamState(), AdamState()
    head_lr = cfg.lr if cfg.head_lr is None else cfg.head_lr
    n = data.train.shape[0]
    bs = min(cfg.batch_size, n)
    log_ = TrainLog()
    for step in range(1, steps + 1):
        start = ((step - 1) * bs) % n
        idx = np.arange(start, start + bs) % n
        mu = data.train_mu[idx]
        x_hat, feats = student.forward(mu, weights)
        tf = {b: teacher_feats[b][idx] for b in cfg.align_blocks} if distilling else None
        stage2 = cfg.stage2_step is not None and step >= cfg.stage2_step
        loss = total_loss(data.train[idx], x_hat, mu, data.train_logvar[idx], cfg, feats, tf,
                          heads, head_weights, stage2)
        if not math.isfinite(loss.total):
            raise TrainingDiverged(f"step {step}: loss is {loss.total} (L1={loss.l1}, distill={loss.distill})")
        grads, _ = student.backward(loss.grad_x_hat, weights, loss.feature_grads)
        adam_step(weights, grads, state, cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay)
        if distilling:
            adam_step(head_weights, loss.head_grads, head_state, head_lr, cfg.betas, cfg.eps, cfg.weight_decay)
        rec = StepRecord(step, loss.l1, loss.distill, loss.kl, loss.total)
        if step % cfg.eval_every == 0 or step == steps:
            rec.eval_psnr = evaluate(student_cfg, weights, data)
        log_.records.append(rec)
    return TrainResult(log_, weights, head_weights)


def evaluate(cfg: DecoderConfig, weights, data: ToyData) -> float:
    video, _ = Decoder(cfg).forward(data.eval_mu, weights)
    return frame_psnr(data.eval, video)


def make_toy_teacher(teacher_cfg: DecoderConfig, data: ToyData, encoder: ToyEncoder, steps: int = 800,
                     lr: float = 2e-4, batch_size: int = 2, seed: int = 0) -> ToyTeacher:
    """Pre-train ``teacher_cfg`` on ``data`` for a fixed budget (plain L1), then freeze it."""
    cfg = DistillConfig(alpha_distill=0.0, lr=lr, batch_size=batch_size, eval_every=max(steps, 1))
    result = train_decoder(cfg, teacher_cfg, data, steps, seed)
    log.info("teacher pretrained: final L1 %.4f, eval PSNR %.2f",
             result.log.records[-1].l1 if result.log.records else math.nan, result.log.final_eval_psnr())
    return ToyTeacher(encoder, teacher_cfg, result.weights)


def train_toy(cfg: DistillConfig, student_cfg: DecoderConfig, teacher: ToyTeacher, steps: int, seed: int,
              frames: int = 9, size: int = 32, n_train: int | None = None, n_eval: int = 4) -> TrainResult:
    """Distill ``teacher`` into a fresh student on seeded synthetic data."""
    data = ToyData.generate(teacher.encoder, student_cfg, n_train or cfg.batch_size, n_eval, frames, size, seed)
    return train_decoder(cfg, student_cfg, data, steps, seed, teacher=teacher)


@dataclass
class ToyExperiment:
    """The paired-seed convergence experiment: one frozen teacher, students with and without alignment.

    Teacher and students see the same seeded clip pool; a seed fixes the
    student and projection-head initialisation. Convergence is read off the
    training L1 averaged over one pass through the clips (``window`` steps),
    which cancels the fixed data-order pattern of the per-batch loss.
    """

    teacher_config: str = "toy-teacher"
    student_config: str = "toy-student"
    frames: int = 9
    size: int = 32
    n_train: int = 32
    n_eval: int = 4
    data_seed: int = 777
    encoder_seed: int = 0
    teacher_steps: int = 800
    teacher_lr: float = 2e-4
    lr: float = 5e-4
    head_lr: float | None = 5e-3
    batch_size: int = 2
    steps: int = 250
    tau_step: int = 200
    align_blocks: tuple[str, ...] = ("mid", "up_0", "up_1")

    def __post_init__(self):
        from .config import load_config

        self.tcfg = load_config(self.teacher_config)
        self.scfg = load_config(self.student_config)
        d_t, d_s, _ = self.tcfg.factors
        self.encoder = ToyEncoder(self.tcfg.latent_channels, d_t, d_s, seed=self.encoder_seed)
        self.data = ToyData.generate(self.encoder, self.tcfg, self.n_train, self.n_eval, self.frames, self.size,
                                     self.data_seed)

    @property
    def window(self) -> int:
        return max(1, self.n_train // self.batch_size)

    def teacher(self, cache=None) -> ToyTeacher:
        """Pre-trained frozen teacher; with ``cache`` the weights are loaded from (or saved to) a TVWD file."""
        from pathlib import Path

        from .weights import load, save

        if cache is not None and Path(cache).exists():
            return ToyTeacher(self.encoder, self.tcfg, load(cache))
        t = make_toy_teacher(self.tcfg, self.data, self.encoder, self.teacher_steps, self.teacher_lr,
                             self.batch_size, self.encoder_seed)
        if cache is not None:
            save(t.weights, cache)
        return t

    def config(self, distill: bool) -> DistillConfig:
        return DistillConfig(align_blocks=self.align_blocks, alpha_distill=1.0 if distill else 0.0, lr=self.lr,
                             head_lr=self.head_lr, batch_size=self.batch_size, eval_every=50)

    def run(self, seed: int, steps: int | None = None, distill: bool = True,
            teacher: ToyTeacher | None = None) -> TrainResult:
        teacher = teacher or self.teacher()
        return train_decoder(self.config(distill), self.scfg, self.data, self.steps if steps is None else steps,
                             seed, teacher=teacher)

    def threshold(self, baseline: TrainLog) -> float:
        """tau: the baseline's smoothed training L1 at ``tau_step``."""
        if len(baseline.records) < self.tau_step:
            raise ValueError(f"baseline ran {len(baseline.records)} steps; tau needs {self.tau_step}")
        return float(baseline.smoothed_l1(self.window)[self.tau_step - 1])

    def steps_to(self, log_: TrainLog, tau: float) -> int | None:
        return log_.steps_to(tau, self.window)

"""Seeded synthetic videos and a frozen random encoder for toy-scale experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .upsample import UpsampleFactors, decoupled_downsample


def moving_patterns(n: int, frames: int, height: int, width: int, seed: int,
                    blobs: int = 3, textures: int = 1) -> np.ndarray:
    """Videos of translating Gaussian blobs over drifting sinusoidal textures, in [0, 1].

    Returns float32 (n, 3, frames, height, width).
    """
    rng = np.random.default_rng(seed)
    t = np.arange(frames, dtype=np.float64)[:, None, None]
    yy = np.arange(height, dtype=np.float64)[None, :, None] / height
    xx = np.arange(width, dtype=np.float64)[None, None, :] / width
    out = np.empty((n, 3, frames, height, width), np.float32)
    for i in range(n):
        video = np.zeros((3, frames, height, width))
        video += rng.uniform(0.2, 0.5, size=(3, 1, 1, 1))
        for _ in range(textures):
            freq = rng.uniform(1.0, 4.0)
            theta = rng.uniform(0, 2 * np.pi)
            speed = rng.uniform(-0.3, 0.3)
            phase = 2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + speed * t
            video += rng.uniform(0.05, 0.15, size=(3, 1, 1, 1)) * np.sin(phase)[None]
        for _ in range(blobs):
            cy, cx = rng.uniform(0.2, 0.8, size=2)
            vy, vx = rng.uniform(-0.02, 0.02, size=2)
            sigma = rng.uniform(0.06, 0.15)
            py = cy + vy * t
            px = cx + vx * t
            blob = np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2 * sigma * sigma))
            video += rng.uniform(-0.5, 0.5, size=(3, 1, 1, 1)) * blob[None]
        out[i] = np.clip(video, 0.0, 1.0)
    return out


@dataclass
class ToyEncoder:
    """Frozen encoder: random 3x3x3 conv + SiLU, space-to-depth by (d_t, d_s, d_s), random pointwise
    projection to (mu, logvar).

    Videos have ``d_t * (T_l - 1) + 1`` frames; the first frame is replicated
    ``d_t - 1`` times so time folds evenly into ``T_l`` latent frames.
    """

    latent_channels: int
    d_t: int
    d_s: int
    seed: int = 0
    hidden: int = 8
    CALIBRATION_SEED = 12_345

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        self.conv = ops.Conv3dParams(rng.normal(0, 1 / np.sqrt(3 * 27), size=(self.hidden, 3, 3, 3, 3)),
                                     np.zeros(self.hidden))
        fan = self.hidden * self.d_t * self.d_s * self.d_s
        self.proj_mu = rng.normal(0, 1 / np.sqrt(fan), size=(self.latent_channels, fan))
        self.proj_logvar = rng.normal(0, 1 / np.sqrt(fan), size=(self.latent_channels, fan))
        self.scale = 1.0
        frames = 4 * self.d_t + 1
        mu, _ = self.encode(moving_patterns(4, frames, 8 * self.d_s, 8 * self.d_s, seed=self.CALIBRATION_SEED))
        self.scale = 1.0 / float(mu.std())

    def encode(self, video: np.ndarray):
        x = np.asarray(video, dtype=np.float64)
        if self.d_t > 1:
            x = np.concatenate([np.repeat(x[:, :, :1], self.d_t - 1, axis=2), x], axis=2)
        h = ops.activation(ops.conv3d(x - 0.5, self.conv))
        h = decoupled_downsample(h, UpsampleFactors(self.d_t, self.d_s))
        mu = self.scale * np.einsum("lc,ncthw->nlthw", self.proj_mu, h)
        logvar = np.clip(np.einsum("lc,ncthw->nlthw", self.proj_logvar, h) - 2.0, -6.0, 0.0)
        return mu.astype(np.float32), logvar.astype(np.float32)

"""PSNR and SSIM for video tensors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric operands differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, max_val: float = 1.0) -> float:
    """10 log10(max_val^2 / MSE); ``math.inf`` when the inputs are identical."""
    a, b = _pair(a, b)
    if max_val <= 0:
        raise DomainError("max_val must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter2d(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' filtering over the last two axes."""
    k = g.size
    win = np.lib.stride_tricks.sliding_window_view(img, k, axis=-1)
    img = win @ g
    win = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2)
    return win @ g


def ssim_map(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> np.ndarray:
    """Local SSIM over the last two (H, W) axes, valid window positions only."""
    a, b = _pair(a, b)
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise DomainError(f"frames of {a.shape[-2:]} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2
    g = gaussian_window()
    mu_a, mu_b = _filter2d(a, g), _filter2d(b, g)
    var_a = _filter2d(a * a, g) - mu_a * mu_a
    var_b = _filter2d(b * b, g) - mu_b * mu_b
    cov = _filter2d(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, max_val: float = 1.0) -> float:
    """Mean windowed SSIM over every (batch, channel, frame) plane of 5-D videos."""
    return float(np.mean(ssim_map(a, b, max_val)))


def frame_psnr(ref, test, max_val: float = 1.0, clamp: bool = True) -> float:
    """PSNR per (batch, frame), averaged over frames then batch; no SSIM."""
    a, b = _pair(ref, test)
    if clamp:
        a, b = np.clip(a, 0, max_val), np.clip(b, 0, max_val)
    mse = ((a - b) ** 2).mean(axis=(1, 3, 4))
    with np.errstate(divide="ignore"):
        p = 10.0 * np.log10(max_val * max_val / mse)
    return float(p.mean())


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    psnr_per_frame: list[float] = field(default_factory=list)
    ssim_per_frame: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        def enc(v):
            return "identical" if math.isinf(v) else v
        return {"psnr": enc(self.psnr), "ssim": self.ssim,
                "psnr_per_frame": [enc(v) for v in self.psnr_per_frame], "ssim_per_frame": self.ssim_per_frame}


def video_metrics(ref, test, max_val: float = 1.0, clamp: bool = True) -> MetricReport:
    """Per-frame PSNR/SSIM on (N, C, T, H, W) videos, averaged over frames then batch.

    Values are clamped to ``[0, max_val]`` first. An all-identical frame has
    infinite PSNR, which propagates to the aggregate.
    """
    a, b = _pair(ref, test)
    if a.ndim != 5:
        raise ShapeError(f"expected (N, C, T, H, W) videos, got {a.shape}")
    if clamp:
        a, b = np.clip(a, 0, max_val), np.clip(b, 0, max_val)
    N, _, T = a.shape[:3]
    p = np.empty((N, T))
    s = np.empty((N, T))
    for n in range(N):
        for t in range(T):
            p[n, t] = psnr(a[n, :, t], b[n, :, t], max_val)
            s[n, t] = ssim(a[n, :, t], b[n, :, t], max_val)
    return MetricReport(
        psnr=float(p.mean(axis=1).mean()), ssim=float(s.mean(axis=1).mean()),
        psnr_per_frame=[float(v) for v in p.mean(axis=0)], ssim_per_frame=[float(v) for v in s.mean(axis=0)])

"""Sub-pixel upsampling for video tensors.

Three families, all mapping (N, r_t * r_s**2 * C, T, H, W) to
(N, C, r_t * T, r_s * H, r_s * W) where they rearrange:

* ``pixel_shuffle_3d``: the joint 3-D shuffle. Channel index decomposes as
  (c, dt, dh, dw) with dt slowest:
  ``out[n, c, r_t*t+dt, r_s*h+dh, r_s*w+dw] = x[n, ((c*r_t+dt)*r_s+dh)*r_s+dw, t, h, w]``.
* ``decoupled_upsample``: channels -> time (``channel_to_time``), then a
  framewise 2-D shuffle (``pixel_shuffle_2d_video``) whose channel index is
  ``C*r*(w mod r) + C*(h mod r) + c``.
* ``interpolate_3d``: nearest / trilinear resampling, no channel reduction.

Every rearrangement has an exact inverse; the inverse is also the adjoint, so
it doubles as the backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import as_tensor5


@dataclass(frozen=True)
class UpsampleFactors:
    r_t: int = 1
    r_s: int = 1

    def __post_init__(self):
        if self.r_t < 1 or self.r_s < 1:
            raise ConfigError(f"upsample factors must be >= 1, got {(self.r_t, self.r_s)}")

    @property
    def channel_factor(self) -> int:
        return self.r_t * self.r_s * self.r_s


def _split_channels(x: np.ndarray, k: int, op: str) -> int:
    if k < 1:
        raise ConfigError(f"{op}: factor must be >= 1")
    if x.shape[1] % k:
        raise ShapeError(f"{op}: {x.shape[1]} channels not divisible by {k}")
    return x.shape[1] // k


# ---------------------------------------------------------------- joint 3-D shuffle


def pixel_shuffle_3d(x: np.ndarray, r_t: int, r_s: int) -> np.ndarray:
    x = as_tensor5(x)
    N, _, T, H, W = x.shape
    C = _split_channels(x, r_t * r_s * r_s, "pixel_shuffle_3d")
    y = x.reshape(N, C, r_t, r_s, r_s, T, H, W).transpose(0, 1, 5, 2, 6, 3, 7, 4)
    return np.ascontiguousarray(y).reshape(N, C, T * r_t, H * r_s, W * r_s)


def pixel_unshuffle_3d(y: np.ndarray, r_t: int, r_s: int) -> np.ndarray:
    y = as_tensor5(y)
    N, C, Tr, Hr, Wr = y.shape
    if Tr % r_t or Hr % r_s or Wr % r_s:
        raise ShapeError(f"pixel_unshuffle_3d: extents {y.shape[2:]} not divisible by {(r_t, r_s, r_s)}")
    T, H, W = Tr // r_t, Hr // r_s, Wr // r_s
    x = y.reshape(N, C, T, r_t, H, r_s, W, r_s).transpose(0, 1, 3, 5, 7, 2, 4, 6)
    return np.ascontiguousarray(x).reshape(N, C * r_t * r_s * r_s, T, H, W)


# ---------------------------------------------------------------- decoupled pieces


def channel_to_time(x: np.ndarray, r_t: int) -> np.ndarray:
    """``out[n, c, r_t*t + j] = x[n, j*C + c, t]``: frame offset j is the slowest channel block."""
    x = as_tensor5(x)
    N, _, T, H, W = x.shape
    C = _split_channels(x, r_t, "channel_to_time")
    y = x.reshape(N, r_t, C, T, H, W).transpose(0, 2, 3, 1, 4, 5)
    return np.ascontiguousarray(y).reshape(N, C, T * r_t, H, W)


def time_to_channel(y: np.ndarray, r_t: int) -> np.ndarray:
    y = as_tensor5(y)
    N, C, Tr, H, W = y.shape
    if r_t < 1 or Tr % r_t:
        raise ShapeError(f"time_to_channel: {Tr} frames not divisible by {r_t}")
    x = y.reshape(N, C, Tr // r_t, r_t, H, W).transpose(0, 3, 1, 2, 4, 5)
    return np.ascontiguousarray(x).reshape(N, r_t * C, Tr // r_t, H, W)


def pixel_shuffle_2d_video(x: np.ndarray, r_s: int) -> np.ndarray:
    """Framewise 2-D shuffle: ``Y[c,t,h,w] = F[C*r*(w%r) + C*(h%r) + c, t, h//r, w//r]``."""
    x = as_tensor5(x)
    N, _, T, H, W = x.shape
    C = _split_channels(x, r_s * r_s, "pixel_shuffle_2d_video")
    # channel axis splits as (dw, dh, c), dw slowest
    y = x.reshape(N, r_s, r_s, C, T, H, W).transpose(0, 3, 4, 5, 2, 6, 1)
    return np.ascontiguousarray(y).reshape(N, C, T, H * r_s, W * r_s)


def pixel_unshuffle_2d_video(y: np.ndarray, r_s: int) -> np.ndarray:
    y = as_tensor5(y)
    N, C, T, Hr, Wr = y.shape
    if r_s < 1 or Hr % r_s or Wr % r_s:
        raise ShapeError(f"pixel_unshuffle_2d_video: extents {(Hr, Wr)} not divisible by {r_s}")
    H, W = Hr // r_s, Wr // r_s
    x = y.reshape(N, C, T, H, r_s, W, r_s).transpose(0, 6, 4, 1, 2, 3, 5)
    return np.ascontiguousarray(x).reshape(N, r_s * r_s * C, T, H, W)


def decoupled_upsample(x: np.ndarray, f: UpsampleFactors) -> np.ndarray:
    """``pixel_shuffle_2d_video(channel_to_time(x, r_t), r_s)`` as one rearrangement.

    Both steps are folded into a single 8-axis transpose so the data is moved
    once, instead of materializing the intermediate time-expanded tensor.
    """
    x = as_tensor5(x)
    r_t, r_s = f.r_t, f.r_s
    N, _, T, H, W = x.shape
    C = _split_channels(x, f.channel_factor, "decoupled_upsample")
    # channel = j*(r_s^2*C) + dw*(r_s*C) + dh*C + c
    y = x.reshape(N, r_t, r_s, r_s, C, T, H, W).transpose(0, 4, 5, 1, 6, 3, 7, 2)
    return np.ascontiguousarray(y).reshape(N, C, T * r_t, H * r_s, W * r_s)


def decoupled_downsample(y: np.ndarray, f: UpsampleFactors) -> np.ndarray:
    """Exact inverse (and adjoint) of :func:`decoupled_upsample`."""
    y = as_tensor5(y)
    r_t, r_s = f.r_t, f.r_s
    N, C, Tr, Hr, Wr = y.shape
    if Tr % r_t or Hr % r_s or Wr % r_s:
        raise ShapeError(f"decoupled_downsample: extents {y.shape[2:]} not divisible by {(r_t, r_s, r_s)}")
    T, H, W = Tr // r_t, Hr // r_s, Wr // r_s
    x = y.reshape(N, C, T, r_t, H, r_s, W, r_s).transpose(0, 3, 7, 5, 1, 2, 4, 6)
    return np.ascontiguousarray(x).reshape(N, f.channel_factor * C, T, H, W)


# ---------------------------------------------------------------- interpolation


def _linear_axis(x: np.ndarray, axis: int, r: int) -> np.ndarray:
    n = x.shape[axis]
    if r == 1:
        return x
    src = (np.arange(n * r) + 0.5) / r - 0.5
    src = np.clip(src, 0.0, n - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n - 1)
    w1 = (src - i0).astype(x.dtype)
    shape = [1] * x.ndim
    shape[axis] = -1
    w1 = w1.reshape(shape)
    return np.take(x, i0, axis=axis) * (1 - w1) + np.take(x, i1, axis=axis) * w1


def interpolate_3d(x: np.ndarray, f: UpsampleFactors, mode: str = "nearest") -> np.ndarray:
    """Resample by (r_t, r_s, r_s); trilinear uses half-pixel (align_corners=False) sampling."""
    x = as_tensor5(x)
    if min(x.shape[2:]) < 1:
        raise ShapeError(f"interpolate_3d: empty spatial extent in {x.shape}")
    factors = (f.r_t, f.r_s, f.r_s)
    if mode == "nearest":
        for axis, r in zip((2, 3, 4), factors):
            if r > 1:
                x = np.repeat(x, r, axis=axis)
        return np.ascontiguousarray(x)
    if mode == "trilinear":
        for axis, r in zip((2, 3, 4), factors):
            x = _linear_axis(x, axis, r)
        return np.ascontiguousarray(x)
    raise ConfigError(f"unknown interpolation mode {mode!r}")

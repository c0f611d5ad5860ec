"""Convolution, normalization and activation operators with backward passes.

Convolutions are evaluated tap by tap: for every kernel offset the shifted
window of the padded input is multiplied by the (C_out, C_in) slice of the
kernel and accumulated. This keeps memory at O(input) regardless of kernel
volume, which matters for 5x5x5 depthwise kernels on full-resolution video.

Padding convention: spatial axes are padded symmetrically with zeros; the
temporal axis is padded either causally (all ``k_t - 1`` frames on the past
side) or centered, with replicate or zero fill.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import as_tensor5, check_finite

PADDING_MODES = ("replicate", "zero")


def _check_kernel(kt: int, kh: int, kw: int) -> None:
    if any(k < 1 or k % 2 == 0 for k in (kt, kh, kw)):
        raise ConfigError(f"kernel extents must be odd and positive, got {(kt, kh, kw)}")


def _check_padding(mode: str, stride) -> None:
    if mode not in PADDING_MODES:
        raise ConfigError(f"unknown temporal padding mode {mode!r}")
    if tuple(stride) != (1, 1, 1):
        raise ConfigError(f"only unit stride is supported, got {tuple(stride)}")


@dataclass
class Conv3dParams:
    weight: np.ndarray  # (C_out, C_in, k_t, k_h, k_w)
    bias: np.ndarray | None = None
    stride: tuple[int, int, int] = (1, 1, 1)
    temporal_padding: str = "replicate"
    causal: bool = True

    def __post_init__(self):
        w = np.asarray(self.weight)
        if w.ndim != 5:
            raise ShapeError(f"conv weight must be 5-D, got shape {w.shape}")
        _check_kernel(*w.shape[2:])
        if self.bias is not None and np.shape(self.bias) != (w.shape[0],):
            raise ShapeError(f"bias shape {np.shape(self.bias)} does not match C_out={w.shape[0]}")
        _check_padding(self.temporal_padding, self.stride)

    @property
    def kernel(self) -> tuple[int, int, int]:
        return tuple(self.weight.shape[2:])


@dataclass
class DwSepConv3dParams:
    depthwise: np.ndarray  # (C_in, k_t, k_h, k_w)
    pointwise: np.ndarray  # (C_out, C_in, 1, 1, 1)
    depthwise_bias: np.ndarray | None = None
    pointwise_bias: np.ndarray | None = None
    temporal_padding: str = "replicate"
    causal: bool = True

    def __post_init__(self):
        d, p = np.asarray(self.depthwise), np.asarray(self.pointwise)
        if d.ndim != 4:
            raise ShapeError(f"depthwise kernel must be (C, k_t, k_h, k_w), got {d.shape}")
        _check_kernel(*d.shape[1:])
        if p.ndim != 5 or p.shape[2:] != (1, 1, 1) or p.shape[1] != d.shape[0]:
            raise ShapeError(f"pointwise kernel {p.shape} incompatible with depthwise {d.shape}")
        if self.depthwise_bias is not None and np.shape(self.depthwise_bias) != (d.shape[0],):
            raise ShapeError("depthwise bias length must equal C_in")
        if self.pointwise_bias is not None and np.shape(self.pointwise_bias) != (p.shape[0],):
            raise ShapeError("pointwise bias length must equal C_out")
        _check_padding(self.temporal_padding, (1, 1, 1))

    @property
    def kernel(self) -> tuple[int, int, int]:
        return tuple(self.depthwise.shape[1:])

    def pointwise_params(self) -> Conv3dParams:
        return Conv3dParams(self.pointwise, self.pointwise_bias)


@dataclass
class GroupNormParams:
    num_groups: int
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-6

    def __post_init__(self):
        c = np.shape(self.gamma)[0]
        if self.num_groups < 1 or c % self.num_groups:
            raise ConfigError(f"{c} channels not divisible into {self.num_groups} groups")
        if np.shape(self.beta) != (c,):
            raise ShapeError("gamma and beta lengths differ")


# ---------------------------------------------------------------- padding


def _pad_amounts(kernel, causal: bool):
    kt, kh, kw = kernel
    pt = (kt - 1, 0) if causal else ((kt - 1) // 2, (kt - 1) // 2)
    return pt, ((kh - 1) // 2,) * 2, ((kw - 1) // 2,) * 2


def pad3d(x: np.ndarray, kernel, temporal_padding: str = "replicate", causal: bool = True) -> np.ndarray:
    """Pad for a 'same'-size convolution with the given odd kernel."""
    pt, ph, pw = _pad_amounts(kernel, causal)
    if pt != (0, 0):
        mode = "edge" if temporal_padding == "replicate" else "constant"
        x = np.pad(x, ((0, 0), (0, 0), pt, (0, 0), (0, 0)), mode=mode)
    if ph[0] or pw[0]:
        x = np.pad(x, ((0, 0), (0, 0), (0, 0), ph, pw))
    return x


def pad3d_grad(gp: np.ndarray, kernel, temporal_padding: str = "replicate", causal: bool = True) -> np.ndarray:
    """Adjoint of :func:`pad3d`: fold padded-grid gradients back onto the input."""
    (t0, t1), (h0, _), (w0, _) = _pad_amounts(kernel, causal)
    Tp, Hp, Wp = gp.shape[2:]
    T, H, W = Tp - t0 - t1, Hp - 2 * h0, Wp - 2 * w0
    g = gp[:, :, :, h0:h0 + H, w0:w0 + W]
    gx = np.array(g[:, :, t0:t0 + T])
    if temporal_padding == "replicate":
        if t0:
            gx[:, :, 0] += g[:, :, :t0].sum(axis=2)
        if t1:
            gx[:, :, -1] += g[:, :, t0 + T:].sum(axis=2)
    return gx


def _tap_major(w: np.ndarray) -> np.ndarray:
    """(C_out, C_in, k_t, k_h, k_w) -> contiguous (k_t, k_h, k_w, C_out, C_in) so each tap is BLAS-ready."""
    return np.ascontiguousarray(w.transpose(2, 3, 4, 0, 1))


def _taps(kernel):
    kt, kh, kw = kernel
    for i in range(kt):
        for j in range(kh):
            for f in range(kw):
                yield i, j, f


# ---------------------------------------------------------------- conv3d


def conv3d(x: np.ndarray, p: Conv3dParams) -> np.ndarray:
    x = as_tensor5(x)
    w = np.asarray(p.weight, dtype=x.dtype)
    N, C, T, H, W = x.shape
    if C != w.shape[1]:
        raise ShapeError(f"conv3d: input has {C} channels, kernel expects {w.shape[1]}")
    cout = w.shape[0]
    if p.kernel == (1, 1, 1):
        acc = np.tensordot(np.ascontiguousarray(w[:, :, 0, 0, 0]), x, axes=(1, 1))
    else:
        xp = pad3d(x, p.kernel, p.temporal_padding, p.causal).transpose(1, 0, 2, 3, 4)
        wt = _tap_major(w)
        acc = np.zeros((cout, N, T, H, W), dtype=x.dtype)
        for i, j, f in _taps(p.kernel):
            xs = xp[:, :, i:i + T, j:j + H, f:f + W].reshape(C, -1)
            acc += (wt[i, j, f] @ xs).reshape(cout, N, T, H, W)
    if p.bias is not None:
        acc += np.asarray(p.bias, dtype=x.dtype)[:, None, None, None, None]
    out = np.ascontiguousarray(acc.transpose(1, 0, 2, 3, 4))
    return check_finite(out, "conv3d")


def conv3d_grad(x: np.ndarray, p: Conv3dParams, upstream: np.ndarray):
    """Return ``(grad_x, {"weight": ..., "bias": ...})`` for :func:`conv3d`."""
    x = as_tensor5(x)
    w = np.asarray(p.weight, dtype=x.dtype)
    N, C, T, H, W = x.shape
    cout = w.shape[0]
    g = np.asarray(upstream, dtype=x.dtype)
    if g.shape != (N, cout, T, H, W):
        raise ShapeError(f"conv3d_grad: upstream shape {g.shape} != {(N, cout, T, H, W)}")
    gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3, 4)).reshape(cout, -1)
    if p.kernel == (1, 1, 1):
        gw = np.zeros_like(w)
        xm = x.transpose(1, 0, 2, 3, 4).reshape(C, -1)
        gw[:, :, 0, 0, 0] = gm @ xm.T
        gx = (np.ascontiguousarray(w[:, :, 0, 0, 0].T) @ gm).reshape(C, N, T, H, W).transpose(1, 0, 2, 3, 4)
    else:
        xp = pad3d(x, p.kernel, p.temporal_padding, p.causal).transpose(1, 0, 2, 3, 4)
        wt = np.ascontiguousarray(w.transpose(2, 3, 4, 1, 0))  # (k_t, k_h, k_w, C_in, C_out)
        gwt = np.empty(p.kernel + (cout, C), dtype=x.dtype)
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for i, j, f in _taps(p.kernel):
            xs = xp[:, :, i:i + T, j:j + H, f:f + W].reshape(C, -1)
            np.matmul(gm, xs.T, out=gwt[i, j, f])
            gxp[:, :, i:i + T, j:j + H, f:f + W] += (wt[i, j, f] @ gm).reshape(C, N, T, H, W)
        gw = np.ascontiguousarray(gwt.transpose(3, 4, 0, 1, 2))
        gx = pad3d_grad(gxp.transpose(1, 0, 2, 3, 4), p.kernel, p.temporal_padding, p.causal)
    grads = {"weight": gw}
    if p.bias is not None:
        grads["bias"] = g.sum(axis=(0, 2, 3, 4))
    return np.ascontiguousarray(gx), grads


# ---------------------------------------------------------------- depthwise separable


def depthwise_conv3d(x: np.ndarray, p: DwSepConv3dParams) -> np.ndarray:
    """Per-channel 3-D filtering: output channel m sees only input channel m."""
    x = as_tensor5(x)
    k = np.asarray(p.depthwise, dtype=x.dtype)
    N, C, T, H, W = x.shape
    if C != k.shape[0]:
        raise ShapeError(f"depthwise_conv3d: input has {C} channels, kernel expects {k.shape[0]}")
    xp = pad3d(x, p.kernel, p.temporal_padding, p.causal)
    out = np.zeros_like(x)
    for i, j, f in _taps(p.kernel):
        out += k[:, i, j, f][None, :, None, None, None] * xp[:, :, i:i + T, j:j + H, f:f + W]
    if p.depthwise_bias is not None:
        out += np.asarray(p.depthwise_bias, dtype=x.dtype)[None, :, None, None, None]
    return check_finite(out, "depthwise_conv3d")


def depthwise_conv3d_grad(x: np.ndarray, p: DwSepConv3dParams, upstream: np.ndarray):
    x = as_tensor5(x)
    k = np.asarray(p.depthwise, dtype=x.dtype)
    g = np.asarray(upstream, dtype=x.dtype)
    if g.shape != x.shape:
        raise ShapeError(f"depthwise_conv3d_grad: upstream shape {g.shape} != {x.shape}")
    T, H, W = x.shape[2:]
    xp = pad3d(x, p.kernel, p.temporal_padding, p.causal)
    gxp = np.zeros_like(xp)
    gk = np.zeros_like(k)
    for i, j, f in _taps(p.kernel):
        xs = xp[:, :, i:i + T, j:j + H, f:f + W]
        gk[:, i, j, f] = np.einsum("ncthw,ncthw->c", g, xs)
        gxp[:, :, i:i + T, j:j + H, f:f + W] += k[:, i, j, f][None, :, None, None, None] * g
    grads = {"depthwise": gk}
    if p.depthwise_bias is not None:
        grads["depthwise_bias"] = g.sum(axis=(0, 2, 3, 4))
    return pad3d_grad(gxp, p.kernel, p.temporal_padding, p.causal), grads


def dwsep_conv3d(x: np.ndarray, p: DwSepConv3dParams) -> np.ndarray:
    return conv3d(depthwise_conv3d(x, p), p.pointwise_params())


def dwsep_conv3d_grad(x: np.ndarray, p: DwSepConv3dParams, upstream: np.ndarray):
    """Return ``(grad_x, grads)`` with keys depthwise[_bias], pointwise[_bias]."""
    y = depthwise_conv3d(x, p)
    gy, pw = conv3d_grad(y, p.pointwise_params(), upstream)
    gx, grads = depthwise_conv3d_grad(x, p, gy)
    grads["pointwise"] = pw["weight"]
    if "bias" in pw:
        grads["pointwise_bias"] = pw["bias"]
    return gx, grads


# ---------------------------------------------------------------- group norm


def _gn_stats(x: np.ndarray, p: GroupNormParams):
    N, C = x.shape[:2]
    if C != np.shape(p.gamma)[0]:
        raise ShapeError(f"group_norm: input has {C} channels, params cover {np.shape(p.gamma)[0]}")
    xg = x.reshape(N, p.num_groups, -1)
    mean = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + p.eps)
    return (xg - mean) * inv, inv


def group_norm(x: np.ndarray, p: GroupNormParams) -> np.ndarray:
    x = as_tensor5(x)
    xhat, _ = _gn_stats(x, p)
    bshape = (1, -1, 1, 1, 1)
    out = xhat.reshape(x.shape) * np.asarray(p.gamma, x.dtype).reshape(bshape)
    out += np.asarray(p.beta, x.dtype).reshape(bshape)
    return check_finite(out, "group_norm")


def group_norm_grad(x: np.ndarray, p: GroupNormParams, upstream: np.ndarray):
    """Return ``(grad_x, {"gamma": ..., "beta": ...})``."""
    x = as_tensor5(x)
    g = np.asarray(upstream, dtype=x.dtype)
    if g.shape != x.shape:
        raise ShapeError(f"group_norm_grad: upstream shape {g.shape} != {x.shape}")
    N = x.shape[0]
    xhat, inv = _gn_stats(x, p)
    xhat5 = xhat.reshape(x.shape)
    gamma = np.asarray(p.gamma, x.dtype)
    grads = {"gamma": (g * xhat5).sum(axis=(0, 2, 3, 4)), "beta": g.sum(axis=(0, 2, 3, 4))}
    gxhat = (g * gamma.reshape(1, -1, 1, 1, 1)).reshape(N, p.num_groups, -1)
    m = gxhat.shape[2]
    gx = inv / m * (m * gxhat - gxhat.sum(axis=2, keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=2, keepdims=True))
    return gx.reshape(x.shape), grads


# ---------------------------------------------------------------- activation


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activation(x: np.ndarray) -> np.ndarray:
    """SiLU, x * sigmoid(x)."""
    x = as_tensor5(x)
    return check_finite(x * _sigmoid(x), "activation")


def activation_grad(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    x = as_tensor5(x)
    if np.shape(upstream) != x.shape:
        raise ShapeError(f"activation_grad: upstream shape {np.shape(upstream)} != {x.shape}")
    s = _sigmoid(x)
    return np.asarray(upstream, x.dtype) * (s + x * s * (1.0 - s))


# ---------------------------------------------------------------- parameter counts


def conv3d_param_count(c_in: int, c_out: int, k: int | tuple = 3, bias: bool = True) -> int:
    kt, kh, kw = (k, k, k) if isinstance(k, int) else k
    return c_out * c_in * kt * kh * kw + (c_out if bias else 0)


def dwsep_param_count(c_in: int, c_out: int, k: int | tuple = 5, bias: bool = True) -> int:
    kt, kh, kw = (k, k, k) if isinstance(k, int) else k
    return c_in * kt * kh * kw + c_in * c_out + ((c_in + c_out) if bias else 0)


def group_norm_param_count(c: int) -> int:
    return 2 * c

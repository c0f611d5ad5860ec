"""Hybrid video decoder: graph construction, forward/backward, parameter accounting."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import ops
from .config import BlockConfig, DecoderConfig
from .errors import ConfigError, ShapeError
from .tensor import as_tensor5
from .upsample import UpsampleFactors, decoupled_downsample, decoupled_upsample
from .weights import WeightStore


class LoadError(ValueError):
    """Weights do not match the tensors the decoder graph requires."""


def _get(w: Mapping, name: str, dtype) -> np.ndarray:
    try:
        return np.asarray(w[name], dtype=dtype)
    except KeyError:
        raise LoadError(f"missing weight {name!r}") from None


def _accumulate(grads: dict, name: str, g: np.ndarray) -> None:
    if name in grads:
        grads[name] = grads[name] + g
    else:
        grads[name] = g


# ---------------------------------------------------------------- layers
#
# Each layer keeps the input of its most recent forward call so that
# backward() can recompute what it needs.


class Conv:
    def __init__(self, name: str, c_in: int, c_out: int, kind: str, k: int, cfg: DecoderConfig | None = None):
        self.name, self.c_in, self.c_out, self.kind, self.k = name, c_in, c_out, kind, k
        self.pad = {} if cfg is None else dict(temporal_padding=cfg.temporal_padding, causal=cfg.causal)
        self._x = None

    def spec(self) -> dict:
        k, n = self.k, self.name
        if self.kind == "standard":
            return {f"{n}/weight": (self.c_out, self.c_in, k, k, k), f"{n}/bias": (self.c_out,)}
        return {
            f"{n}/depthwise/weight": (self.c_in, k, k, k),
            f"{n}/depthwise/bias": (self.c_in,),
            f"{n}/pointwise/weight": (self.c_out, self.c_in, 1, 1, 1),
            f"{n}/pointwise/bias": (self.c_out,),
        }

    def fan_in(self, key: str) -> int:
        if key.endswith("depthwise/weight"):
            return self.k ** 3
        if key.endswith("pointwise/weight"):
            return self.c_in
        return self.c_in * self.k ** 3

    def params(self, w, dtype):
        n = self.name
        if self.kind == "standard":
            return ops.Conv3dParams(_get(w, f"{n}/weight", dtype), _get(w, f"{n}/bias", dtype), **self.pad)
        return ops.DwSepConv3dParams(
            _get(w, f"{n}/depthwise/weight", dtype), _get(w, f"{n}/pointwise/weight", dtype),
            _get(w, f"{n}/depthwise/bias", dtype), _get(w, f"{n}/pointwise/bias", dtype), **self.pad)

    def forward(self, x, w):
        self._x = x
        p = self.params(w, x.dtype)
        return ops.conv3d(x, p) if self.kind == "standard" else ops.dwsep_conv3d(x, p)

    def backward(self, g, w, grads):
        x, n = self._x, self.name
        p = self.params(w, x.dtype)
        if self.kind == "standard":
            gx, pg = ops.conv3d_grad(x, p, g)
            _accumulate(grads, f"{n}/weight", pg["weight"])
            _accumulate(grads, f"{n}/bias", pg["bias"])
        else:
            gx, pg = ops.dwsep_conv3d_grad(x, p, g)
            _accumulate(grads, f"{n}/depthwise/weight", pg["depthwise"])
            _accumulate(grads, f"{n}/depthwise/bias", pg["depthwise_bias"])
            _accumulate(grads, f"{n}/pointwise/weight", pg["pointwise"])
            _accumulate(grads, f"{n}/pointwise/bias", pg["pointwise_bias"])
        return gx


class Norm:
    def __init__(self, name: str, c: int, groups: int):
        if c % groups:
            raise ConfigError(f"{name}: {c} channels not divisible by {groups} groups")
        self.name, self.c, self.groups = name, c, groups
        self._x = None

    def spec(self):
        return {f"{self.name}/gamma": (self.c,), f"{self.name}/beta": (self.c,)}

    def params(self, w, dtype):
        return ops.GroupNormParams(self.groups, _get(w, f"{self.name}/gamma", dtype),
                                   _get(w, f"{self.name}/beta", dtype))

    def forward(self, x, w):
        self._x = x
        return ops.group_norm(x, self.params(w, x.dtype))

    def backward(self, g, w, grads):
        gx, pg = ops.group_norm_grad(self._x, self.params(w, self._x.dtype), g)
        _accumulate(grads, f"{self.name}/gamma", pg["gamma"])
        _accumulate(grads, f"{self.name}/beta", pg["beta"])
        return gx


class Act:
    def __init__(self):
        self._x = None

    def spec(self):
        return {}

    def forward(self, x, w):
        self._x = x
        return ops.activation(x)

    def backward(self, g, w, grads):
        return ops.activation_grad(self._x, g)


class Shuffle:
    """Decoupled sub-pixel upsample followed by dropping the first r_t - 1 frames."""

    def __init__(self, r_t: int, r_s: int):
        self.f = UpsampleFactors(r_t, r_s)

    def spec(self):
        return {}

    def forward(self, x, w):
        y = decoupled_upsample(x, self.f)
        return np.ascontiguousarray(y[:, :, self.f.r_t - 1:])

    def backward(self, g, w, grads):
        drop = self.f.r_t - 1
        if drop:
            g = np.concatenate([np.zeros(g.shape[:2] + (drop,) + g.shape[3:], g.dtype), g], axis=2)
        return decoupled_downsample(g, self.f)


class Sequential:
    def __init__(self, layers):
        self.layers = layers

    def spec(self):
        out = {}
        for layer in self.layers:
            out.update(layer.spec())
        return out

    def forward(self, x, w):
        for layer in self.layers:
            x = layer.forward(x, w)
        return x

    def backward(self, g, w, grads):
        for layer in reversed(self.layers):
            g = layer.backward(g, w, grads)
        return g


class ResBlock3D(Sequential):
    """norm1 -> act -> conv1 -> norm2 -> act -> conv2, plus an identity or 1x1x1 skip."""

    def __init__(self, name, c_in, c_out, kind, k, cfg):
        super().__init__([
            Norm(f"{name}/norm1", c_in, cfg.norm_groups), Act(), Conv(f"{name}/conv1", c_in, c_out, kind, k, cfg),
            Norm(f"{name}/norm2", c_out, cfg.norm_groups), Act(), Conv(f"{name}/conv2", c_out, c_out, kind, k, cfg),
        ])
        self.skip = Conv(f"{name}/skip", c_in, c_out, "standard", 1, cfg) if c_in != c_out else None

    def spec(self):
        out = super().spec()
        if self.skip:
            out.update(self.skip.spec())
        return out

    def forward(self, x, w):
        h = super().forward(x, w)
        return h + (self.skip.forward(x, w) if self.skip else x)

    def backward(self, g, w, grads):
        gx = super().backward(g, w, grads)
        return gx + (self.skip.backward(g, w, grads) if self.skip else g)


def build_block(b: BlockConfig, c_in: int, cfg: DecoderConfig) -> Sequential:
    n, k = b.name, b.kernel_size
    layers = []
    if b.name == "mid":
        layers.append(Conv("mid/conv_in", cfg.latent_channels, b.out_channels, "standard", cfg.standard_kernel, cfg))
        c_in = b.out_channels
    elif b.name == "head":
        r = b.upsample[0] * b.upsample[1] ** 2
        layers += [Norm("head/norm", c_in, cfg.norm_groups), Act(),
                   Conv("head/conv", c_in, 3 * r, "standard", k, cfg)]
        if r > 1:
            layers.append(Shuffle(*b.upsample))
        return Sequential(layers)
    elif b.upsamples:
        r = b.upsample[0] * b.upsample[1] ** 2
        layers += [Conv(f"{n}/upsample/conv", c_in, r * b.out_channels, b.conv_kind, k, cfg), Shuffle(*b.upsample)]
        c_in = b.out_channels
    for i in range(b.num_resblocks):
        layers.append(ResBlock3D(f"{n}/res{i}", c_in, b.out_channels, b.conv_kind, k, cfg))
        c_in = b.out_channels
    if c_in != b.out_channels:
        raise ConfigError(f"{n}: no layer maps {c_in} to {b.out_channels} channels (add a resblock or upsample)")
    return Sequential(layers)


# ---------------------------------------------------------------- decoder


class Decoder:
    """Executable decoder graph. Holds per-layer caches from the last forward."""

    def __init__(self, cfg: DecoderConfig):
        self.cfg = cfg
        self.blocks: list[tuple[str, Sequential]] = []
        c = cfg.latent_channels
        for b in cfg.blocks:
            self.blocks.append((b.name, build_block(b, c, cfg)))
            c = b.out_channels

    def spec(self) -> dict[str, tuple]:
        out = {}
        for _, blk in self.blocks:
            out.update(blk.spec())
        return out

    def block_spec(self) -> dict[str, dict[str, tuple]]:
        return {name: blk.spec() for name, blk in self.blocks}

    def check_latent(self, latent: np.ndarray) -> None:
        if latent.ndim != 5:
            raise ShapeError(f"latent must be 5-D (N, C, T, H, W), got shape {latent.shape}")
        if latent.shape[1] != self.cfg.latent_channels:
            raise ShapeError(f"latent channel extent is {latent.shape[1]}, config expects {self.cfg.latent_channels}")
        if min(latent.shape[2:]) < 1:
            raise ShapeError(f"latent spatial/temporal extents must be >= 1, got {latent.shape[2:]}")

    def forward(self, latent, weights: Mapping, timings: dict | None = None):
        """Return ``(video, features)``; ``features`` maps block name -> block output."""
        x = as_tensor5(latent)
        self.check_latent(x)
        feats = {}
        for name, blk in self.blocks:
            t0 = time.perf_counter_ns()
            x = blk.forward(x, weights)
            if timings is not None:
                timings[name] = time.perf_counter_ns() - t0
            feats[name] = x
        return x, feats

    def backward(self, grad_video, weights: Mapping, feature_grads: Mapping | None = None):
        """Gradients of a scalar loss w.r.t. every weight and the latent.

        ``grad_video`` is the loss gradient at the output; ``feature_grads``
        adds gradients that enter at intermediate block outputs.
        """
        feature_grads = feature_grads or {}
        grads: dict[str, np.ndarray] = {}
        g = grad_video
        for name, blk in reversed(self.blocks):
            if name in feature_grads:
                g = feature_grads[name] if g is None else g + feature_grads[name]
            if g is None:
                continue
            g = blk.backward(g, weights, grads)
        return grads, g


def decoder_forward(latent, cfg: DecoderConfig, weights: Mapping, timings: dict | None = None):
    dec = Decoder(cfg)
    spec = dec.spec()
    for name, shape in spec.items():
        if name not in weights:
            raise LoadError(f"missing weight {name!r}")
        if tuple(np.shape(weights[name])) != tuple(shape):
            raise LoadError(f"weight {name!r} has shape {np.shape(weights[name])}, expected {shape}")
    return dec.forward(latent, weights, timings)


def weight_spec(cfg: DecoderConfig) -> dict[str, tuple]:
    return Decoder(cfg).spec()


def init_weights(cfg: DecoderConfig, seed: int = 0, spec: dict | None = None) -> WeightStore:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) kernels, zero biases, unit GroupNorm scale."""
    rng = np.random.default_rng(seed)
    dec = Decoder(cfg)
    fans = {}
    for _, blk in dec.blocks:
        for layer in _walk(blk):
            if isinstance(layer, Conv):
                for key in layer.spec():
                    fans[key] = layer.fan_in(key)
    store = WeightStore()
    for name, shape in (spec or dec.spec()).items():
        if name.endswith("/gamma"):
            store[name] = np.ones(shape, np.float32)
        elif name.endswith("/bias") or name.endswith("/beta"):
            store[name] = np.zeros(shape, np.float32)
        else:
            bound = 1.0 / np.sqrt(fans[name])
            store[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return store


def _walk(layer):
    yield layer
    for child in getattr(layer, "layers", []):
        yield from _walk(child)
    if getattr(layer, "skip", None) is not None:
        yield layer.skip


# ---------------------------------------------------------------- parameter accounting


@dataclass
class ParamCount:
    per_block: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.per_block.values())

    def to_dict(self) -> dict:
        return {"per_block": dict(self.per_block), "total": self.total}


def count_params(cfg: DecoderConfig) -> ParamCount:
    per_block = {}
    for name, spec in Decoder(cfg).block_spec().items():
        per_block[name] = int(sum(int(np.prod(s)) for s in spec.values()))
    return ParamCount(per_block)


def redundancy_sweep(cfg: DecoderConfig, replace_upto: str) -> list[tuple[DecoderConfig, int]]:
    """Variants with dwsep on every block from ``mid`` through ``k``, for each k up to ``replace_upto``."""
    order = cfg.block_names[:-1]
    if replace_upto not in order:
        raise ConfigError(f"unknown block {replace_upto!r}; choose from {order}")
    out = []
    for i in range(order.index(replace_upto) + 1):
        variant = cfg.with_kinds(order[:i + 1])
        out.append((variant, count_params(variant).total))
    return out

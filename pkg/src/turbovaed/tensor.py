"""Dense 5-D (N, C, T, H, W) tensors.

Tensors are plain C-contiguous numpy arrays. The helpers here enforce the
engine's conventions on top of numpy: exactly five axes, float32 for
production paths (float64 allowed for gradient verification), no implicit
broadcasting between tensor operands.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator

import numpy as np

from .errors import DomainError, NonFiniteError, ShapeError

Tensor5 = np.ndarray

DTYPES = (np.float32, np.float64)

_debug = False


@contextlib.contextmanager
def debug_checks(enabled: bool = True) -> Iterator[None]:
    """Enable NaN/Inf sentinels on operator outputs within the block."""
    global _debug
    prev, _debug = _debug, enabled
    try:
        yield
    finally:
        _debug = prev


def debug_enabled() -> bool:
    return _debug


def check_finite(x: np.ndarray, where: str = "") -> np.ndarray:
    """Raise NonFiniteError if debug mode is on and ``x`` has NaN/Inf."""
    if _debug and x.size and not np.isfinite(x).all():
        raise NonFiniteError(f"non-finite values produced by {where or 'operation'}")
    return x


def as_tensor5(x, dtype=None) -> Tensor5:
    a = np.asarray(x)
    if a.ndim != 5:
        raise ShapeError(f"expected a 5-D (N, C, T, H, W) tensor, got shape {a.shape}")
    if dtype is None:
        dtype = a.dtype if a.dtype in DTYPES else np.float32
    return np.ascontiguousarray(a, dtype=dtype)


def zeros(shape, dtype=np.float32) -> Tensor5:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 5:
        raise ShapeError(f"expected 5 extents, got {len(shape)}")
    if any(s < 0 for s in shape):
        raise ShapeError(f"negative extent in {shape}")
    # np.zeros raises MemoryError/ValueError on unaddressable sizes
    return np.zeros(shape, dtype=dtype)


def zeros_like(x: Tensor5) -> Tensor5:
    return np.zeros_like(as_tensor5(x))


def numel(x: Tensor5) -> int:
    return int(np.prod(x.shape, dtype=np.int64))


def _same_shape(a: Tensor5, b: Tensor5, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def elementwise_map(f: Callable[..., np.ndarray], a: Tensor5, b: Tensor5 | float | None = None) -> Tensor5:
    """Apply ``f`` elementwise; tensor operands must have identical shapes."""
    a = as_tensor5(a)
    if b is None:
        out = f(a)
    elif np.ndim(b) == 0:
        out = f(a, a.dtype.type(b))
    else:
        b = as_tensor5(b, a.dtype)
        _same_shape(a, b, "elementwise_map")
        out = f(a, b)
    return check_finite(np.ascontiguousarray(out, dtype=a.dtype), "elementwise_map")


def add(a: Tensor5, b: Tensor5 | float) -> Tensor5:
    return elementwise_map(np.add, a, b)


def sub(a: Tensor5, b: Tensor5 | float) -> Tensor5:
    return elementwise_map(np.subtract, a, b)


def scale(a: Tensor5, k: float) -> Tensor5:
    return elementwise_map(np.multiply, a, float(k))


def reduce_mean_abs(a: Tensor5) -> float:
    a = np.asarray(a)
    if a.size == 0:
        raise DomainError("reduce_mean_abs of an empty tensor")
    return float(np.abs(a).sum(dtype=np.float64) / a.size)


def flatten(a: Tensor5) -> np.ndarray:
    return as_tensor5(a).reshape(-1)


def reshape(flat: np.ndarray, shape) -> Tensor5:
    flat = np.asarray(flat)
    shape = tuple(int(s) for s in shape)
    if len(shape) != 5:
        raise ShapeError(f"expected 5 extents, got {len(shape)}")
    if flat.size != int(np.prod(shape, dtype=np.int64)):
        raise ShapeError(f"cannot reshape {flat.size} elements into {shape}")
    return np.ascontiguousarray(flat.reshape(shape))

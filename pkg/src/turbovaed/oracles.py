"""Independent reference implementations used to check the fast paths.

Nothing here calls into ``ops`` or ``upsample``: convolutions are explicit
loops with their own boundary handling, and rearrangements are derived
from their index formulas.
"""

from __future__ import annotations

import itertools

import numpy as np


# ---------------------------------------------------------------- convolution


def _src_index(o: int, tap: int, before: int, n: int, mode: str):
    """Input coordinate feeding output ``o`` at kernel offset ``tap``; None if it is zero padding."""
    s = o + tap - before
    if 0 <= s < n:
        return s
    if mode == "replicate":
        return min(max(s, 0), n - 1)
    return None


def naive_conv3d(x, weight, bias=None, temporal_padding="replicate", causal=True):
    """Direct summation, one output element at a time."""
    x = np.asarray(x, np.float64)
    weight = np.asarray(weight, np.float64)
    N, C, T, H, W = x.shape
    cout, _, kt, kh, kw = weight.shape
    bt = kt - 1 if causal else (kt - 1) // 2
    bh, bw = (kh - 1) // 2, (kw - 1) // 2
    out = np.zeros((N, cout, T, H, W))
    for n, o, t, h, w in itertools.product(range(N), range(cout), range(T), range(H), range(W)):
        acc = 0.0 if bias is None else float(bias[o])
        for i in range(kt):
            st = _src_index(t, i, bt, T, temporal_padding)
            if st is None:
                continue
            for j in range(kh):
                sh = _src_index(h, j, bh, H, "zero")
                if sh is None:
                    continue
                for f in range(kw):
                    sw = _src_index(w, f, bw, W, "zero")
                    if sw is None:
                        continue
                    acc += float(weight[o, :, i, j, f] @ x[n, :, st, sh, sw])
        out[n, o, t, h, w] = acc
    return out


def naive_depthwise_conv3d(x, kernel, bias=None, temporal_padding="replicate", causal=True):
    """Per-channel direct summation: a full conv with a diagonal channel kernel."""
    C = np.shape(kernel)[0]
    full = np.zeros((C, C) + np.shape(kernel)[1:])
    for m in range(C):
        full[m, m] = kernel[m]
    return naive_conv3d(x, full, bias, temporal_padding, causal)


def factorized_kernel(depthwise, pointwise, depthwise_bias=None, pointwise_bias=None):
    """Full kernel and bias equal to depthwise followed by pointwise:
    ``K[n, m, i, j, f] = P[n, m] * D[m, i, j, f]``, ``b[n] = sum_m P[n, m] d_b[m] + p_b[n]``."""
    D = np.asarray(depthwise, np.float64)
    P = np.asarray(pointwise, np.float64)[:, :, 0, 0, 0]
    cout, cin = P.shape
    K = np.zeros((cout, cin) + D.shape[1:])
    for n in range(cout):
        for m in range(cin):
            K[n, m] = P[n, m] * D[m]
    b = np.zeros(cout)
    if depthwise_bias is not None:
        b += P @ np.asarray(depthwise_bias, np.float64)
    if pointwise_bias is not None:
        b += np.asarray(pointwise_bias, np.float64)
    return K, b


# ---------------------------------------------------------------- rearrangement index maps


def framewise_shuffle_source(c: int, t: int, h: int, w: int, C: int, r: int):
    """Source coordinate of ``Y[c, t, h, w]`` in the framewise 2-D shuffle, by index formula:
    channel ``C*r*mod(w, r) + C*mod(h, r) + c`` at ``(t, floor(h/r), floor(w/r))``."""
    return C * r * (w % r) + C * (h % r) + c, t, h // r, w // r


def channel_to_time_source(c: int, t: int, h: int, w: int, C: int, r_t: int):
    return (t % r_t) * C + c, t // r_t, h, w


def pixel_shuffle_3d_source(c: int, t: int, h: int, w: int, r_t: int, r_s: int):
    return ((c * r_t + t % r_t) * r_s + h % r_s) * r_s + w % r_s, t // r_t, h // r_s, w // r_s


def decoupled_source(c: int, t: int, h: int, w: int, C: int, r_t: int, r_s: int):
    """Compose the printed 2-D step with the channel->time step."""
    k, t1, h1, w1 = framewise_shuffle_source(c, t, h, w, C, r_s)
    return channel_to_time_source(k, t1, h1, w1, r_s * r_s * C, r_t)


def apply_index_map(x: np.ndarray, out_shape, source) -> np.ndarray:
    """Materialize ``out[n, c, t, h, w] = x[n, *source(c, t, h, w)]`` element by element."""
    out = np.empty(out_shape, dtype=x.dtype)
    for c, t, h, w in itertools.product(*(range(s) for s in out_shape[1:])):
        ch, st, sh, sw = source(c, t, h, w)
        out[:, c, t, h, w] = x[:, ch, st, sh, sw]
    return out


def solve_channel_permutation(C: int, r_t: int, r_s: int) -> np.ndarray:
    """Find ``pi`` with ``decoupled(x) == pixel_shuffle_3d(x[:, pi])``.

    Enumerates one full output block of both index maps; each 3-D shuffle
    channel b must always be fed by the same decoupled channel a, giving
    ``pi[b] = a``. Raises if the correspondence is not a bijection.
    """
    n = r_t * r_s * r_s * C
    pi = -np.ones(n, dtype=np.int64)
    for c, t, h, w in itertools.product(range(C), range(r_t), range(r_s), range(r_s)):
        b, *pos_b = pixel_shuffle_3d_source(c, t, h, w, r_t, r_s)
        a, *pos_a = decoupled_source(c, t, h, w, C, r_t, r_s)
        if pos_a != pos_b:
            raise AssertionError("index maps disagree on the source position")
        if pi[b] not in (-1, a):
            raise AssertionError(f"channel {b} fed by both {pi[b]} and {a}")
        pi[b] = a
    if sorted(pi.tolist()) != list(range(n)):
        raise AssertionError("channel correspondence is not a permutation")
    return pi


# ---------------------------------------------------------------- finite differences


def central_diff(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f(x)
        flat[i] = old - eps
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(a, b, floor: float = 1e-12) -> float:
    """max |a - b| / max(max |a|, max |b|): a scale-aware relative error."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))

"""TVWD named-tensor container.

Layout (all integers little-endian)::

    0   4   magic  b"TVWD"
    4   4   version  u32 (=1)
    8   8   header length  u64
    16  n   header: UTF-8 JSON {"entries": [{"name", "dtype", "shape", "offset"}, ...]}
            space-padded so the payload starts on a 64-byte boundary
    ..      payload: raw little-endian float32 data

Entry offsets are relative to the payload start, 64-byte aligned and
non-overlapping. Single tensors (latents, decoded videos) use the same
container with one entry named ``"tensor"`` and the ``.tvt`` extension.
"""

from __future__ import annotations

import json
import struct
from collections.abc import MutableMapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"TVWD"
VERSION = 1
ALIGN = 64
PREAMBLE = struct.Struct("<4sIQ")
DTYPES = {"f32": np.dtype("<f4")}
MAX_RANK = 5
MAX_INDEX = 2**40


class WeightsError(Exception):
    """Base class for every structured loader/store error."""


class FormatError(WeightsError):
    """Not a TVWD file, unsupported version, or unparsable header."""


class CorruptionError(WeightsError):
    """File is truncated or an entry points outside the payload."""


class ValidationError(WeightsError):
    """Header is well formed but violates a store invariant."""


def _check_name(name) -> str:
    if not isinstance(name, str) or not name:
        raise ValidationError(f"entry name must be a nonempty string, got {name!r}")
    if not name.isascii() or any(not p for p in name.split("/")):
        raise ValidationError(f"entry name {name!r} must be ASCII with nonempty '/'-separated parts")
    if any(not c.isprintable() or c.isspace() for c in name):
        raise ValidationError(f"entry name {name!r} contains whitespace or control characters")
    return name


class WeightStore(MutableMapping):
    """Ordered mapping of hierarchical names to float32 arrays of rank <= 5."""

    def __init__(self, tensors=None):
        self._t: dict[str, np.ndarray] = {}
        for k, v in (tensors or {}).items():
            self[k] = v

    def __getitem__(self, name):
        return self._t[name]

    def __setitem__(self, name, value):
        a = np.ascontiguousarray(value, dtype=np.float32)
        if a.ndim > MAX_RANK:
            raise ValidationError(f"{name}: rank {a.ndim} exceeds {MAX_RANK}")
        self._t[_check_name(name)] = a

    def __delitem__(self, name):
        del self._t[name]

    def __iter__(self):
        return iter(self._t)

    def __len__(self):
        return len(self._t)

    def __repr__(self):
        return f"WeightStore({len(self)} entries, {self.num_params()} params)"

    def copy(self) -> "WeightStore":
        return WeightStore({k: v.copy() for k, v in self._t.items()})

    def num_params(self) -> int:
        return int(sum(v.size for v in self._t.values()))

    def subtree(self, prefix: str) -> dict[str, np.ndarray]:
        p = prefix.rstrip("/") + "/"
        return {k: v for k, v in self._t.items() if k.startswith(p)}


# ---------------------------------------------------------------- save / load


def _aligned(n: int) -> int:
    return -(-n // ALIGN) * ALIGN


def to_bytes(store: WeightStore) -> bytes:
    entries, offset = [], 0
    for name, a in store.items():
        entries.append({"name": name, "dtype": "f32", "shape": list(a.shape), "offset": offset})
        offset = _aligned(offset + a.nbytes)
    header = json.dumps({"entries": entries}, separators=(",", ":")).encode("utf-8")
    header += b" " * (_aligned(PREAMBLE.size + len(header)) - PREAMBLE.size - len(header))
    payload = bytearray(offset)
    for e, a in zip(entries, store.values()):
        raw = a.astype("<f4", copy=False).tobytes()
        payload[e["offset"]:e["offset"] + len(raw)] = raw
    # trim trailing alignment padding after the last entry
    end = max((e["offset"] + a.nbytes for e, a in zip(entries, store.values())), default=0)
    return PREAMBLE.pack(MAGIC, VERSION, len(header)) + header + bytes(payload[:end])


def save(store: WeightStore, path) -> None:
    data = to_bytes(store)
    with open(path, "wb") as fh:
        fh.write(data)


def _int(v, what: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(f"{what} must be an integer, got {v!r}")
    if not 0 <= v < MAX_INDEX:
        raise ValidationError(f"{what} out of range: {v}")
    return v


def _parse_entries(header: dict):
    if not isinstance(header, dict) or not isinstance(header.get("entries"), list):
        raise FormatError("header must be an object with an 'entries' list")
    seen, parsed = set(), []
    for e in header["entries"]:
        if not isinstance(e, dict):
            raise ValidationError(f"entry must be an object, got {type(e).__name__}")
        name = _check_name(e.get("name"))
        if name in seen:
            raise ValidationError(f"duplicate entry name {name!r}")
        seen.add(name)
        if e.get("dtype") not in DTYPES:
            raise ValidationError(f"{name}: unsupported dtype {e.get('dtype')!r}")
        shape = e.get("shape")
        if not isinstance(shape, list) or len(shape) > MAX_RANK:
            raise ValidationError(f"{name}: shape must be a list of at most {MAX_RANK} extents")
        shape = tuple(_int(s, f"{name}: extent") for s in shape)
        offset = _int(e.get("offset"), f"{name}: offset")
        if offset % ALIGN:
            raise ValidationError(f"{name}: offset {offset} not {ALIGN}-byte aligned")
        nbytes = DTYPES[e["dtype"]].itemsize * int(np.prod(shape, dtype=object))
        parsed.append((name, DTYPES[e["dtype"]], shape, offset, nbytes))
    return parsed


def from_bytes(data: bytes) -> WeightStore:
    data = memoryview(data)
    if bytes(data[:4]) != MAGIC:
        raise FormatError("bad magic: not a TVWD file")
    if len(data) < PREAMBLE.size:
        raise CorruptionError("truncated preamble")
    _, version, header_len = PREAMBLE.unpack_from(data)
    if version != VERSION:
        raise FormatError(f"unsupported TVWD version {version}")
    start = PREAMBLE.size + header_len
    if start > len(data):
        raise CorruptionError(f"header length {header_len} exceeds file size {len(data)}")
    try:
        header = json.loads(bytes(data[PREAMBLE.size:start]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError, RecursionError) as e:
        raise FormatError(f"unparsable header: {e}") from None
    entries = _parse_entries(header)
    payload_len = len(data) - start
    for name, _, shape, offset, nbytes in entries:
        if offset + nbytes > payload_len:
            raise CorruptionError(f"{name}: bytes [{offset}, {offset + nbytes}) outside payload of {payload_len}")
    reach, owner = 0, None
    for beg, end, name in sorted((off, off + nb, name) for name, _, _, off, nb in entries if nb):
        if beg < reach:
            raise ValidationError(f"entries {owner!r} and {name!r} overlap")
        if end > reach:
            reach, owner = end, name
    store = WeightStore()
    for name, dtype, shape, offset, nbytes in entries:
        a = np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize, offset=start + offset)
        store[name] = a.reshape(shape).astype(np.float32)
    return store


def load(path) -> WeightStore:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e.strerror}") from e
    return from_bytes(data)


def save_tensor(x: np.ndarray, path) -> None:
    save(WeightStore({"tensor": x}), path)


def load_tensor(path) -> np.ndarray:
    store = load(path)
    if "tensor" not in store:
        raise ValidationError(f"{path} has no 'tensor' entry")
    return store["tensor"]


# ---------------------------------------------------------------- config validation


@dataclass
class ValidationReport:
    missing: list[str] = field(default_factory=list)
    extra: list[str] = field(default_factory=list)
    mismatched: list[tuple[str, tuple, tuple]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.missing or self.extra or self.mismatched)

    def lines(self) -> list[str]:
        out = [f"missing: {n}" for n in self.missing]
        out += [f"extra: {n}" for n in self.extra]
        out += [f"shape mismatch: {n} expected {e} got {a}" for n, e, a in self.mismatched]
        return out

    def to_dict(self) -> dict:
        return {"missing": self.missing, "extra": self.extra,
                "mismatched": [{"name": n, "expected": list(e), "actual": list(a)} for n, e, a in self.mismatched]}


def validate_against(store, cfg) -> ValidationReport:
    """Compare ``store`` with the names/shapes ``cfg`` requires; empty report iff loadable."""
    from .decoder import weight_spec

    spec = weight_spec(cfg)
    report = ValidationReport()
    for name, shape in spec.items():
        if name not in store:
            report.missing.append(name)
        elif tuple(store[name].shape) != tuple(shape):
            report.mismatched.append((name, tuple(shape), tuple(store[name].shape)))
    report.extra = [n for n in store if n not in spec]
    return report

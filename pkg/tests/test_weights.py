import json
import re
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from turbovaed import weights as wio
from turbovaed.config import load_config
from turbovaed.decoder import init_weights

DOCS = Path(__file__).parents[1] / "docs" / "format.md"


def raw_file(entries, payload=b"", version=1, magic=b"TVWD"):
    header = json.dumps({"entries": entries}).encode()
    return struct.pack("<4sIQ", magic, version, len(header)) + header + payload


names = st.lists(st.from_regex(r"[a-z0-9_]{1,6}(/[a-z0-9_]{1,6}){0,2}", fullmatch=True), min_size=0, max_size=5,
                 unique=True)
arrays = hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=5, min_side=0, max_side=3),
                    elements=st.floats(width=32, allow_nan=True, allow_infinity=True))


@given(names, st.data())
def test_round_trip_is_bitwise(tmp_path_factory, ns, data):
    store = wio.WeightStore({n: data.draw(arrays) for n in ns})
    path = tmp_path_factory.mktemp("rt") / "w.tvwd"
    wio.save(store, path)
    back = wio.load(path)
    assert list(back) == list(store)
    for n in store:
        assert back[n].shape == store[n].shape
        assert back[n].tobytes() == store[n].tobytes()
    assert wio.to_bytes(back) == path.read_bytes()


def test_empty_store(tmp_path):
    wio.save(wio.WeightStore(), tmp_path / "e.tvwd")
    assert len(wio.load(tmp_path / "e.tvwd")) == 0
    assert (tmp_path / "e.tvwd").read_bytes()[:4] == b"TVWD"


def test_known_bytes_2x3(tmp_path):
    a = np.arange(6, dtype=np.float32).reshape(2, 3) - 2.5
    wio.save_tensor(a, tmp_path / "x.tvt")
    data = (tmp_path / "x.tvt").read_bytes()
    assert data[-24:] == a.astype("<f4").tobytes()
    (hl,) = struct.unpack_from("<Q", data, 8)
    assert (16 + hl) % 64 == 0
    np.testing.assert_array_equal(wio.load_tensor(tmp_path / "x.tvt"), a)


def test_documented_hex_example_matches_writer():
    text = DOCS.read_text()
    block = text.split("```")[1]
    raw = bytearray()
    for line in block.strip().splitlines():
        off = int(line[:8], 16)
        cells = [line[10 + 3 * i: 12 + 3 * i] for i in range(16)]
        present = [i for i, c in enumerate(cells) if re.fullmatch(r"[0-9a-f]{2}", c)]
        assert off == len(raw) and present == list(range(len(present)))
        raw += bytes(int(cells[i], 16) for i in present)
    store = wio.WeightStore({"conv/bias": np.array([1.0, -2.0], np.float32),
                             "conv/weight": np.array([[0.5]], np.float32)})
    assert bytes(raw) == wio.to_bytes(store)
    assert len(raw) == 260


def test_overlapping_offsets_rejected():
    entries = [{"name": "a", "dtype": "f32", "shape": [32], "offset": 0},
               {"name": "b", "dtype": "f32", "shape": [4], "offset": 64}]
    with pytest.raises(wio.ValidationError, match="overlap"):
        wio.from_bytes(raw_file(entries, bytes(256)))


@pytest.mark.parametrize("data,err", [
    (b"NOPE" + bytes(12), wio.FormatError),
    (b"TVWD\x01\x00", wio.CorruptionError),
    (raw_file([], version=2), wio.FormatError),
    (struct.pack("<4sIQ", b"TVWD", 1, 999) + b"{}", wio.CorruptionError),
    (struct.pack("<4sIQ", b"TVWD", 1, 3) + b"\xff\xfe{", wio.FormatError),
    (raw_file({"a": 1}), wio.FormatError),
    (raw_file([{"name": "a", "dtype": "f32", "shape": [2], "offset": 0}] * 2, bytes(8)), wio.ValidationError),
    (raw_file([{"name": "a", "dtype": "f16", "shape": [2], "offset": 0}], bytes(8)), wio.ValidationError),
    (raw_file([{"name": "a", "dtype": "f32", "shape": [1] * 6, "offset": 0}], bytes(8)), wio.ValidationError),
    (raw_file([{"name": "a", "dtype": "f32", "shape": [-1], "offset": 0}], bytes(8)), wio.ValidationError),
    (raw_file([{"name": "a", "dtype": "f32", "shape": [2], "offset": 8}], bytes(80)), wio.ValidationError),
    (raw_file([{"name": "a", "dtype": "f32", "shape": [2], "offset": 0}], bytes(4)), wio.CorruptionError),
    (raw_file([{"name": "a b", "dtype": "f32", "shape": [1], "offset": 0}], bytes(4)), wio.ValidationError),
    (raw_file([{"name": "a//b", "dtype": "f32", "shape": [1], "offset": 0}], bytes(4)), wio.ValidationError),
    (raw_file([{"name": "", "dtype": "f32", "shape": [1], "offset": 0}], bytes(4)), wio.ValidationError),
    (raw_file([{"name": "a", "dtype": "f32", "shape": [2.0], "offset": 0}], bytes(8)), wio.ValidationError),
    (raw_file([{"name": "a", "dtype": "f32", "shape": [2**41], "offset": 0}], bytes(8)), wio.ValidationError),
])
def test_structured_errors(data, err):
    with pytest.raises(err):
        wio.from_bytes(data)


def test_missing_file_is_structured(tmp_path):
    with pytest.raises(wio.WeightsError):
        wio.load(tmp_path / "nothing.tvwd")


def test_tensor_file_needs_tensor_entry(tmp_path):
    wio.save(wio.WeightStore({"other": np.zeros(1, np.float32)}), tmp_path / "x.tvt")
    with pytest.raises(wio.ValidationError):
        wio.load_tensor(tmp_path / "x.tvt")


@given(st.data())
def test_fuzzed_files_fail_cleanly(data):
    store = wio.WeightStore({"a/w": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.ones(3, np.float32)})
    blob = bytearray(wio.to_bytes(store))
    if data.draw(st.booleans()):
        blob = blob[:data.draw(st.integers(0, len(blob) - 1))]
    else:
        for _ in range(data.draw(st.integers(1, 8))):
            i = data.draw(st.integers(0, len(blob) - 1))
            blob[i] = data.draw(st.integers(0, 255))
    try:
        out = wio.from_bytes(bytes(blob))
    except wio.WeightsError:
        return
    assert all(isinstance(v, np.ndarray) for v in out.values())


def test_store_rejects_bad_names_and_ranks():
    s = wio.WeightStore()
    with pytest.raises(wio.ValidationError):
        s["bad name"] = np.zeros(1)
    with pytest.raises(wio.ValidationError):
        s["x"] = np.zeros((1,) * 6)
    s["x"] = np.zeros(2, np.float64)
    assert s["x"].dtype == np.float32


def test_validate_against():
    cfg = load_config("toy-student")
    store = init_weights(cfg)
    assert wio.validate_against(store, cfg).ok
    one = store.copy()
    del one["mid/conv_in/bias"]
    rep = wio.validate_against(one, cfg)
    assert rep.missing == ["mid/conv_in/bias"] and not rep.extra and not rep.mismatched
    two = store.copy()
    two["mid/conv_in/weight"] = np.ascontiguousarray(np.swapaxes(store["mid/conv_in/weight"], 0, 1))
    rep = wio.validate_against(two, cfg)
    assert [m[0] for m in rep.mismatched] == ["mid/conv_in/weight"] and not rep.missing
    two["stray"] = np.zeros(1, np.float32)
    assert wio.validate_against(two, cfg).extra == ["stray"]
    assert len(wio.validate_against(two, cfg).lines()) == 2

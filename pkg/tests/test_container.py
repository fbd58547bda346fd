"""Array container: byte layout, losslessness, corruption handling."""

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays as np_arrays

from spectfield.container import MAGIC, container_read, container_write
from spectfield.errors import FormatError


def roundtrip(tmp_path, arrays, meta=None):
    path = tmp_path / "t.spj"
    container_write(path, arrays, meta)
    return container_read(path)


def test_roundtrip_small_volume(tmp_path):
    vol = np.random.default_rng(3).random((3, 4, 5)).astype(np.float32)
    got, meta = roundtrip(tmp_path, {"vol": vol}, {"note": "x"})
    assert got["vol"].dtype == np.float32
    assert np.array_equal(got["vol"], vol)
    assert meta == {"note": "x"}


def test_roundtrip_empty_array(tmp_path):
    got, _ = roundtrip(tmp_path, {"e": np.zeros((0,), dtype=np.int32)})
    assert got["e"].shape == (0,)
    assert got["e"].dtype == np.int32


def test_roundtrip_multiple_arrays_order_preserved(tmp_path):
    a = np.arange(6, dtype=np.int32).reshape(2, 3)
    b = np.ones((4,), dtype=np.float32)
    path = tmp_path / "t.spj"
    container_write(path, {"zz": a, "aa": b})
    raw = path.read_bytes()
    hlen = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])[0]
    header = json.loads(raw[len(MAGIC) + 4:len(MAGIC) + 4 + hlen])
    assert [e["name"] for e in header["arrays"]] == ["zz", "aa"]
    got, _ = container_read(path)
    assert np.array_equal(got["zz"], a)
    assert np.array_equal(got["aa"], b)


def test_header_is_versioned_and_sorted(tmp_path):
    path = tmp_path / "t.spj"
    container_write(path, {"a": np.zeros(2, dtype=np.float32)}, {"k": 1})
    raw = path.read_bytes()
    hlen = struct.unpack("<I", raw[4:8])[0]
    text = raw[8:8 + hlen].decode()
    header = json.loads(text)
    assert header["version"] == 1
    # canonical serialization: sorted keys, no whitespace
    assert text == json.dumps(header, sort_keys=True, separators=(",", ":"))


def test_returned_arrays_are_writable_copies(tmp_path):
    vol = np.zeros((2, 2), dtype=np.float32)
    got, _ = roundtrip(tmp_path, {"v": vol})
    got["v"][0, 0] = 7.0  # must not raise


def test_rejects_unsupported_dtype(tmp_path):
    with pytest.raises(ValueError):
        container_write(tmp_path / "t.spj", {"v": np.zeros(2, dtype=np.float64)})
    with pytest.raises(ValueError):
        container_write(tmp_path / "t.spj", {"v": np.zeros(2, dtype=np.int64)})


def test_rejects_non_json_meta(tmp_path):
    with pytest.raises(ValueError):
        container_write(tmp_path / "t.spj", {"v": np.zeros(2, dtype=np.float32)},
                        {"bad": np.zeros(2)})


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "t.spj"
    container_write(path, {"v": np.zeros(2, dtype=np.float32)})
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        container_read(path)


def test_wrong_version_rejected(tmp_path):
    path = tmp_path / "t.spj"
    container_write(path, {"v": np.zeros(2, dtype=np.float32)})
    raw = path.read_bytes()
    hlen = struct.unpack("<I", raw[4:8])[0]
    header = json.loads(raw[8:8 + hlen])
    header["version"] = 2
    htext = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path.write_bytes(MAGIC + struct.pack("<I", len(htext)) + htext + raw[8 + hlen:])
    with pytest.raises(FormatError):
        container_read(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "t.spj"
    container_write(path, {"v": np.arange(8, dtype=np.float32)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        container_read(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "t.spj"
    container_write(path, {"v": np.arange(8, dtype=np.float32)})
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError):
        container_read(path)


def test_payload_shape_mismatch_rejected(tmp_path):
    # header claims more elements than the payload carries
    path = tmp_path / "t.spj"
    header = {"version": 1, "meta": {},
              "arrays": [{"name": "v", "dtype": "<f4", "shape": [100]}]}
    htext = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path.write_bytes(MAGIC + struct.pack("<I", len(htext)) + htext
                     + np.zeros(10, dtype=np.float32).tobytes())
    with pytest.raises(FormatError):
        container_read(path)


def test_truncated_header_rejected(tmp_path):
    path = tmp_path / "t.spj"
    container_write(path, {"v": np.zeros(4, dtype=np.float32)})
    raw = path.read_bytes()
    path.write_bytes(raw[:10])
    with pytest.raises(FormatError):
        container_read(path)


def _tmp_roundtrip(arrays, meta=None):
    import tempfile
    from pathlib import Path
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "t.spj"
        container_write(path, arrays, meta)
        return container_read(path)


@settings(max_examples=50, deadline=None)
@given(
    data=st.data(),
    dtype=st.sampled_from([np.float32, np.int32]),
    shape=st.lists(st.integers(0, 6), min_size=1, max_size=3).map(tuple),
)
def test_roundtrip_random_arrays(data, dtype, shape):
    if dtype is np.float32:
        elements = st.floats(-1e6, 1e6, width=32)
    else:
        elements = st.integers(-2**31, 2**31 - 1)
    arr = data.draw(np_arrays(dtype=dtype, shape=shape, elements=elements))
    got, _ = _tmp_roundtrip({"x": arr})
    assert got["x"].dtype == arr.dtype
    assert got["x"].shape == arr.shape
    assert np.array_equal(got["x"], arr, equal_nan=True)


@settings(max_examples=30, deadline=None)
@given(meta=st.dictionaries(
    st.text(min_size=1, max_size=8),
    st.one_of(st.integers(-1000, 1000), st.floats(-10, 10, allow_nan=False),
              st.text(max_size=10), st.booleans(), st.none()),
    max_size=5))
def test_meta_roundtrip(meta):
    _, got = _tmp_roundtrip({"v": np.zeros(1, dtype=np.int32)}, meta)
    assert got == meta

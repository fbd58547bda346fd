"""Self-describing binary container for arrays plus JSON metadata.

Layout, in file order:

1. 4-byte magic ``SPJ1``
2. 4-byte little-endian unsigned header length ``L``
3. ``L`` bytes of UTF-8 JSON (sorted keys, no whitespace)
4. raw array payload: each array's bytes in header order, row-major,
   little-endian, concatenated with no padding

The header holds ``{"version": 1, "arrays": [{"name", "dtype", "shape"}, ...],
"meta": {...}}``.
Only ``<f4`` and ``<i4`` dtypes are allowed, which keeps every artifact
readable without dtype negotiation and makes byte-level comparison of two
files a meaningful equality test.  Offsets are implicit (cumulative sizes),
so a file's bytes are a pure function of the (arrays, meta) contents.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import FormatError

MAGIC = b"SPJ1"
VERSION = 1
ALLOWED_DTYPES = ("<f4", "<i4")


def _canonical_dtype(arr: np.ndarray) -> str:
    dt = arr.dtype.newbyteorder("<")
    s = dt.str
    if s not in ALLOWED_DTYPES:
        raise ValueError(f"dtype {arr.dtype} not storable; convert to float32 or int32 first")
    return s


def container_write(path, arrays, meta=None) -> None:
    """Write named arrays and a metadata dict to ``path``.

    ``arrays`` maps names to float32 or int32 ndarrays (any shape); insertion
    order is preserved in the file.  ``meta`` must be JSON-serializable.
    """
    if not arrays:
        raise ValueError("need at least one array")
    entries = []
    blobs = []
    for name, arr in arrays.items():
        if not isinstance(name, str) or not name:
            raise ValueError("array names must be non-empty strings")
        arr = np.ascontiguousarray(arr)
        dts = _canonical_dtype(arr)
        entries.append({"name": name, "dtype": dts, "shape": list(arr.shape)})
        blobs.append(arr.astype(dts, copy=False).tobytes())
    header = {"version": VERSION, "arrays": entries, "meta": {} if meta is None else meta}
    try:
        hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    except (TypeError, ValueError) as e:
        raise ValueError(f"metadata is not JSON-serializable: {e}") from e
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(hjson).to_bytes(4, "little"))
        f.write(hjson)
        for blob in blobs:
            f.write(blob)


def container_read(path):
    """Read a container file; returns ``(arrays, meta)``.

    ``arrays`` is a dict in file order; each value is a fresh writable
    ndarray with the stored dtype and shape.  Malformed files raise
    :class:`~spectfield.errors.FormatError`.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a {MAGIC.decode()} container")
    hlen = int.from_bytes(raw[4:8], "little")
    if len(raw) < 8 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: bad header JSON: {e}") from e
    if not isinstance(header, dict) or "arrays" not in header:
        raise FormatError(f"{path}: header missing 'arrays'")
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported container version {header.get('version')!r}")
    entries = header["arrays"]
    if not isinstance(entries, list):
        raise FormatError(f"{path}: 'arrays' must be a list")
    arrays = {}
    offset = 8 + hlen
    for ent in entries:
        try:
            name, dts, shape = ent["name"], ent["dtype"], tuple(ent["shape"])
        except (TypeError, KeyError) as e:
            raise FormatError(f"{path}: malformed array entry {ent!r}") from e
        if dts not in ALLOWED_DTYPES:
            raise FormatError(f"{path}: dtype {dts!r} not allowed")
        if name in arrays:
            raise FormatError(f"{path}: duplicate array name {name!r}")
        if any((not isinstance(s, int)) or s < 0 for s in shape):
            raise FormatError(f"{path}: bad shape {shape} for {name!r}")
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = n * 4
        if offset + nbytes > len(raw):
            raise FormatError(f"{path}: truncated payload at array {name!r}")
        arr = np.frombuffer(raw, dtype=np.dtype(dts), count=n, offset=offset).reshape(shape)
        arrays[name] = arr.copy()
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    meta = header.get("meta", {})
    if not isinstance(meta, dict):
        raise FormatError(f"{path}: 'meta' must be an object")
    return arrays, meta

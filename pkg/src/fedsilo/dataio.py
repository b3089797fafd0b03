"""Binary file formats.

Datasets (.fsd):   magic "FEDSILO1", version u16 LE, then u32 n, C, H, W,
                   images as little-endian float32 row-major, labels as
                   one byte each.
Model snapshots (.fsm) and wire-format SharedUpdates share one container:
magic "FEDSILOM", version u16 LE, u32 entry count, then per entry a
length-prefixed key string ("<layer>.<name>"), u8 dtype code, u8 ndim,
u32 dims, raw little-endian data. SharedUpdates prepend u32 silo_id,
round_index, n_samples. Everything is endianness-pinned so the privacy
test can parse actual wire bytes independently of numpy defaults.
"""

import io
import struct

import numpy as np

from .datagen import LabeledDataset

DATASET_MAGIC = b"FEDSILO1"
MODEL_MAGIC = b"FEDSILOM"
VERSION = 1

_DTYPES = {1: "<f4", 2: "<f8"}
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class FormatError(ValueError):
    """Malformed or truncated container file."""


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: expected {n} bytes for {what}, "
                          f"got {len(buf)}")
    return buf


def save_dataset(ds, path):
    n, c, h, w = ds.images.shape
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<H", VERSION))
        f.write(struct.pack("<4I", n, c, h, w))
        f.write(np.ascontiguousarray(ds.images, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(ds.labels, dtype=np.uint8).tobytes())


def load_dataset(path, center_id=-1):
    with open(path, "rb") as f:
        magic = _read_exact(f, 8, "magic")
        if magic != DATASET_MAGIC:
            raise FormatError(f"bad magic {magic!r}, not a dataset file")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != VERSION:
            raise FormatError(f"unsupported dataset version {version}")
        n, c, h, w = struct.unpack("<4I", _read_exact(f, 16, "header"))
        count = n * c * h * w
        if count > 2**33:
            raise FormatError("dimension overflow in dataset header")
        raw = _read_exact(f, count * 4, "image payload")
        images = np.frombuffer(raw, dtype="<f4").reshape(n, c, h, w).copy()
        labels = np.frombuffer(_read_exact(f, n, "labels"), dtype=np.uint8).copy()
        trailing = f.read(1)
        if trailing:
            raise FormatError("trailing bytes after dataset payload")
    return LabeledDataset(images=images, labels=labels, center_id=center_id)


def _key_str(key):
    return f"{key[0]}.{key[1]}"


def _parse_key(s):
    layer, name = s.split(".", 1)
    return (int(layer), name)


def _write_entries(f, entries):
    f.write(struct.pack("<I", len(entries)))
    for key, arr in entries.items():
        ks = _key_str(key).encode()
        code = _DTYPE_CODES[np.dtype(arr.dtype)]
        f.write(struct.pack("<H", len(ks)))
        f.write(ks)
        f.write(struct.pack("<BB", code, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _read_entries(f):
    (count,) = struct.unpack("<I", _read_exact(f, 4, "entry count"))
    entries = {}
    for _ in range(count):
        (klen,) = struct.unpack("<H", _read_exact(f, 2, "key length"))
        key = _parse_key(_read_exact(f, klen, "key").decode())
        code, ndim = struct.unpack("<BB", _read_exact(f, 2, "entry header"))
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, "shape"))
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        itemsize = int(_DTYPES[code][-1])
        raw = _read_exact(f, size * itemsize, f"data for {key}")
        entries[key] = np.frombuffer(raw, dtype=_DTYPES[code]).reshape(shape).copy()
    return entries


def save_model(params, path):
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<H", VERSION))
        _write_entries(f, params)


def load_model(path):
    with open(path, "rb") as f:
        magic = _read_exact(f, 8, "magic")
        if magic != MODEL_MAGIC:
            raise FormatError(f"bad magic {magic!r}, not a model file")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != VERSION:
            raise FormatError(f"unsupported model version {version}")
        return _read_entries(f)


def serialize_shared_update(update):
    """Canonical wire form of a SharedUpdate; input to the privacy checks."""
    f = io.BytesIO()
    f.write(MODEL_MAGIC)
    f.write(struct.pack("<H", VERSION))
    f.write(struct.pack("<3I", update.silo_id, update.round_index,
                        update.n_samples))
    _write_entries(f, update.entries)
    return f.getvalue()


def parse_shared_update(blob):
    """Returns (silo_id, round_index, n_samples, entries)."""
    f = io.BytesIO(blob)
    magic = _read_exact(f, 8, "magic")
    if magic != MODEL_MAGIC:
        raise FormatError("bad magic for shared update")
    struct.unpack("<H", _read_exact(f, 2, "version"))
    silo_id, round_index, n_samples = struct.unpack("<3I", _read_exact(f, 12, "header"))
    return silo_id, round_index, n_samples, _read_entries(f)

"""Binary grid container used for slices (``ATMS``) and GW fields (``GWRL``).

Layout, all little-endian::

    magic      4 bytes
    version    u16
    n_alt      u32
    n_range    u32
    data       float32[n_alt * n_range], row-major (altitude rows)
    alt_axis   float64[n_alt]
    range_axis float64[n_range]
    meta_len   u32
    meta       UTF-8 JSON, meta_len bytes
"""

import json
import struct

import numpy as np

from .errors import FormatError

VERSION = 1
_HEAD = struct.Struct("<4sHII")
_LEN = struct.Struct("<I")


def pack(magic, data, alt_axis, range_axis, meta):
    data = np.asarray(data)
    n_alt, n_range = data.shape
    if len(alt_axis) != n_alt or len(range_axis) != n_range:
        raise FormatError("axis lengths do not match data shape %s" % (data.shape,))
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    return b"".join([
        _HEAD.pack(magic, VERSION, n_alt, n_range),
        np.ascontiguousarray(data, dtype="<f4").tobytes(),
        np.ascontiguousarray(alt_axis, dtype="<f8").tobytes(),
        np.ascontiguousarray(range_axis, dtype="<f8").tobytes(),
        _LEN.pack(len(blob)),
        blob,
    ])


def unpack(buf, magic):
    """Inverse of :func:`pack`; returns ``(data, alt_axis, range_axis, meta)``."""
    if len(buf) < _HEAD.size:
        raise FormatError("truncated container")
    got, version, n_alt, n_range = _HEAD.unpack_from(buf, 0)
    if got != magic:
        raise FormatError("bad magic %r, expected %r" % (got, magic))
    if version != VERSION:
        raise FormatError("unsupported container version %d" % version)
    off = _HEAD.size
    n = n_alt * n_range
    need = off + 4 * n + 8 * (n_alt + n_range) + _LEN.size
    if len(buf) < need:
        raise FormatError("truncated container")
    data = np.frombuffer(buf, "<f4", n, off).reshape(n_alt, n_range).astype(np.float32)
    off += 4 * n
    alt = np.frombuffer(buf, "<f8", n_alt, off).astype(np.float64)
    off += 8 * n_alt
    rng = np.frombuffer(buf, "<f8", n_range, off).astype(np.float64)
    off += 8 * n_range
    (meta_len,) = _LEN.unpack_from(buf, off)
    off += _LEN.size
    if len(buf) < off + meta_len:
        raise FormatError("truncated metadata")
    meta = json.loads(buf[off:off + meta_len].decode("utf-8"))
    return data, alt, rng, meta

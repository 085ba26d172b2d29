"""Model checkpoint container.

Layout: magic ``CRNN``, u16 version, u32 header length, a JSON header
(config, normalization statistics, history, seed, tensor index with a
SHA-256 per tensor), then the little-endian float32 tensor blobs in index
order.  Nothing time-dependent is written, so equal models give equal bytes.
"""

from dataclasses import dataclass, field
import hashlib
import json
import struct

import numpy as np

from ..errors import ChecksumError, FormatError
from .model import ModelConfig

MAGIC = b"CRNN"
VERSION = 1
_HEAD = struct.Struct("<4sHI")


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    params: dict
    state: dict
    norm: dict
    history: list = field(default_factory=list)
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def to_bytes(self):
        index, blobs, offset = [], [], 0
        for group, tensors in (("param", self.params), ("state", self.state)):
            for name in tensors:
                raw = np.ascontiguousarray(tensors[name], dtype="<f4").tobytes()
                index.append({"group": group, "name": name, "shape": list(tensors[name].shape),
                              "offset": offset, "nbytes": len(raw),
                              "sha256": hashlib.sha256(raw).hexdigest()})
                blobs.append(raw)
                offset += len(raw)
        header = {"config": self.config.to_dict(), "norm": self.norm, "history": self.history,
                  "seed": int(self.seed), "meta": self.meta, "tensors": index}
        hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return _HEAD.pack(MAGIC, VERSION, len(hb)) + hb + b"".join(blobs)

    @classmethod
    def from_bytes(cls, buf):
        if len(buf) < _HEAD.size:
            raise FormatError("truncated checkpoint")
        magic, version, hlen = _HEAD.unpack_from(buf, 0)
        if magic != MAGIC:
            raise FormatError("not a model checkpoint (magic %r)" % magic)
        if version != VERSION:
            raise FormatError("unsupported checkpoint version %d" % version)
        start = _HEAD.size + hlen
        header = json.loads(buf[_HEAD.size:start].decode("utf-8"))
        groups = {"param": {}, "state": {}}
        for t in header["tensors"]:
            lo = start + t["offset"]
            raw = buf[lo:lo + t["nbytes"]]
            if len(raw) != t["nbytes"]:
                raise FormatError("truncated tensor %s" % t["name"])
            if hashlib.sha256(raw).hexdigest() != t["sha256"]:
                raise ChecksumError("checksum mismatch for tensor %s" % t["name"])
            groups[t["group"]][t["name"]] = np.frombuffer(raw, "<f4").reshape(t["shape"]).astype(np.float32)
        return cls(ModelConfig.from_dict(header["config"]), groups["param"], groups["state"],
                   header["norm"], header["history"], header["seed"], header["meta"])

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

"""Flat little-endian weights file with the run's config text embedded.

Layout (all integers unsigned little-endian):

    4 bytes   magic b"CRWT"
    u32       format version (1)
    u32       config length L, then L bytes of UTF-8 config text
    u32       tensor count T
    T times:
        u16   name length, then the UTF-8 name
        u8    ndim, then ndim x u32 dims
        f64   prod(dims) values, C order
"""
import struct

import numpy as np

from .exceptions import FormatError

MAGIC = b"CRWT"
VERSION = 1


def save_weights(path, tensors, config_text=""):
    blob = config_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


class _Reader:
    def __init__(self, raw, path):
        self.raw, self.path, self.pos = raw, path, 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated, need {n} bytes", self.pos)
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_weights(path):
    """Returns ``(tensors, config_text)``."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: not a weights file (bad magic)", 0)
    version, n_cfg = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", 4)
    config_text = r.take(n_cfg).decode("utf-8")
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n_name,) = r.unpack("<H")
        name = r.take(n_name).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        size = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(r.raw):
        raise FormatError(f"{path}: {len(r.raw) - r.pos} trailing bytes", r.pos)
    return tensors, config_text

"""Binary checkpoint format ("FMNN").

All integers and floats are little-endian::

    magic        4 bytes   b"FMNN"
    version      u16       1
    layer_count  u32
    per layer, in order:
        name_len     u16
        name         name_len bytes, UTF-8 (e.g. "regressor.fc1")
        w_rank       u32, then w_rank x u32 dims
        b_rank       u32, then b_rank x u32 dims
        weights      prod(w dims) x f32
        biases       prod(b dims) x f32
        accum_w      prod(w dims) x f32   (Adagrad squared-gradient sums)
        accum_b      prod(b dims) x f32
"""

import struct

import numpy as np

from .layers import LayerParams

MAGIC = b"FMNN"
VERSION = 1


class FormatError(ValueError):
    pass


class _Reader:
    def __init__(self, data, what):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n):
        end = self.pos + n
        if end > len(self.data):
            raise FormatError(
                f"truncated {self.what}: expected at least {end} bytes, got {len(self.data)}"
            )
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape):
        count = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)

    def string(self):
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def at_end(self):
        return self.pos == len(self.data)


def _shape_bytes(shape):
    return struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)


def _name_bytes(name):
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def encode_checkpoint(named_params):
    """Serialize ``{name: LayerParams}`` (insertion order kept) to bytes."""
    parts = [MAGIC, struct.pack("<HI", VERSION, len(named_params))]
    for name, p in named_params.items():
        parts.append(_name_bytes(name))
        parts.append(_shape_bytes(p.weights.shape))
        parts.append(_shape_bytes(p.biases.shape))
        for arr in (p.weights, p.biases, p.accum_weights, p.accum_biases):
            parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(data):
    r = _Reader(data, "checkpoint")
    magic = r.take(4)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}")
    version, count = r.unpack("<HI")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    out = {}
    for _ in range(count):
        name = r.string()
        (wr,) = r.unpack("<I")
        wshape = r.unpack(f"<{wr}I")
        (br,) = r.unpack("<I")
        bshape = r.unpack(f"<{br}I")
        w = r.floats(wshape)
        b = r.floats(bshape)
        aw = r.floats(wshape)
        ab = r.floats(bshape)
        out[name] = LayerParams(w, b, aw, ab)
    if not r.at_end():
        raise FormatError(f"trailing bytes in checkpoint: {len(data) - r.pos}")
    return out


def save_checkpoint(path, named_params):
    with open(path, "wb") as f:
        f.write(encode_checkpoint(named_params))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())

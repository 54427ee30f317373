"""Flow files, dataset manifests, and the evaluator-only truth file.

Flow file ("FMFL"), little-endian::

    magic    4 bytes  b"FMFL"
    version  u16      1
    id_len   u16, then id_len bytes UTF-8 clip id "<video_id>:<start_frame>"
    dims     3 x u32  (C, H, W)
    values   C*H*W x f32, row-major

Manifest: UTF-8 text, one ``id<TAB>label<TAB>frame_count<TAB>path`` line per
video; ``path`` is relative to the manifest's directory.
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

from ..nncore.checkpoint import FormatError, _Reader
from .flow import FlowStack, parse_clip_id

FLOW_MAGIC = b"FMFL"
FLOW_VERSION = 1


def encode_flow(stack):
    raw = stack.clip_id.encode("utf-8")
    c, h, w = stack.flow.shape
    return b"".join([
        FLOW_MAGIC,
        struct.pack("<HH", FLOW_VERSION, len(raw)),
        raw,
        struct.pack("<3I", c, h, w),
        np.ascontiguousarray(stack.flow, dtype="<f4").tobytes(),
    ])


def decode_flow(data):
    r = _Reader(data, "flow file")
    magic = r.take(4)
    if magic != FLOW_MAGIC:
        raise FormatError(f"bad flow file magic {magic!r}, expected {FLOW_MAGIC!r}")
    (version,) = r.unpack("<H")
    if version != FLOW_VERSION:
        raise FormatError(f"unsupported flow file version {version}")
    clip_id = r.string()
    dims = r.unpack("<3I")
    flow = r.floats(dims)
    if not r.at_end():
        raise FormatError(f"trailing bytes in flow file: {len(data) - r.pos}")
    video_id, frame_range = parse_clip_id(clip_id)
    return FlowStack(clip_id, flow, video_id, frame_range)


def write_flow_file(stack, path):
    with open(path, "wb") as f:
        f.write(encode_flow(stack))


def read_flow_file(path):
    with open(path, "rb") as f:
        return decode_flow(f.read())


@dataclass(frozen=True)
class ManifestRecord:
    video_id: str
    label: str
    frame_count: int
    path: str


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(f"{r.video_id}\t{r.label}\t{r.frame_count}\t{r.path}\n")


def read_manifest(path):
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            vid, label, count, rel = parts
            if label not in ("normal", "anomalous"):
                raise FormatError(f"{path}:{lineno}: unknown label {label!r}")
            out.append(ManifestRecord(vid, label, int(count), rel))
    return out


def resolve(manifest_path, rel):
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), rel)


def save_frames(path, frames):
    np.save(path, np.ascontiguousarray(frames, dtype=np.uint8), allow_pickle=False)


def load_frames(path):
    return np.load(path, allow_pickle=False)


def write_truth(path, videos):
    """Frame masks as ``id<TAB>0101...`` lines. Only the evaluator reads this."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for v in videos:
            bits = "".join("1" if m else "0" for m in v.mask)
            f.write(f"{v.video_id}\t{bits}\n")

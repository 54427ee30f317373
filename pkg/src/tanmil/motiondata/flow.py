"""Block-matching optical flow and 16-frame flow stacks."""

from dataclasses import dataclass

import numpy as np

from .. import _kernels

CLIP_LENGTH = 16
FLOW_CLIP = 16.0


@dataclass(frozen=True)
class BlockMatcher:
    """Integer SAD block matching; ties go to the smallest displacement."""

    block: int = 8
    radius: int = 4

    def __call__(self, prev, nxt):
        return block_matching_flow(prev, nxt, self.block, self.radius)


def block_matching_flow(prev, nxt, block=8, radius=4):
    """Flow map (2, H, W): channel 0 horizontal, channel 1 vertical, pixels/frame.

    Each ``block`` x ``block`` tile of ``prev`` is matched against ``nxt``
    over displacements within ``radius``; the winning displacement is
    broadcast to every pixel of the tile.
    """
    prev = np.asarray(prev)
    nxt = np.asarray(nxt)
    if prev.shape != nxt.shape or prev.ndim != 2:
        raise ValueError(f"image shapes differ or are not 2D: {prev.shape} vs {nxt.shape}")
    if block < 1 or radius < 0:
        raise ValueError("block must be >= 1 and radius >= 0")
    dy, dx = _kernels.block_match(_as_uint8(prev), _as_uint8(nxt), block, radius)
    h, w = prev.shape
    flow = np.empty((2, h, w), dtype=np.float32)
    flow[0] = np.repeat(np.repeat(dx, block, axis=0), block, axis=1)[:h, :w]
    flow[1] = np.repeat(np.repeat(dy, block, axis=0), block, axis=1)[:h, :w]
    return flow


def _as_uint8(img):
    if img.dtype == np.uint8:
        return np.ascontiguousarray(img)
    return np.ascontiguousarray(np.clip(np.rint(img), 0, 255).astype(np.uint8))


@dataclass
class FlowStack:
    """15 two-channel flow maps of one 16-frame clip, stacked to (30, H, W)."""

    clip_id: str
    flow: np.ndarray
    video_id: str
    frame_range: tuple

    def __post_init__(self):
        if self.flow.ndim != 3 or self.flow.shape[0] != 2 * (CLIP_LENGTH - 1):
            raise ValueError(f"flow stack must have shape (30, H, W), got {self.flow.shape}")
        if not np.all(np.isfinite(self.flow)):
            raise ValueError("flow stack contains non-finite values")


def clip_id_for(video_id, start):
    return f"{video_id}:{start}"


def parse_clip_id(clip_id):
    video_id, _, start = clip_id.rpartition(":")
    start = int(start)
    return video_id, (start, start + CLIP_LENGTH)


def build_flow_stack(frames, estimator=None, video_id="", start=0):
    """Stack the flow of the 15 adjacent frame pairs of a 16-frame clip."""
    estimator = estimator or BlockMatcher()
    if len(frames) != CLIP_LENGTH:
        raise ValueError(f"a clip needs exactly {CLIP_LENGTH} frames, got {len(frames)}")
    frames = [np.asarray(f) for f in frames]
    shape = frames[0].shape
    for i, f in enumerate(frames):
        if f.shape != shape:
            raise ValueError(f"frame {i} has size {f.shape}, expected {shape}")
    maps = [estimator(frames[i], frames[i + 1]) for i in range(CLIP_LENGTH - 1)]
    return FlowStack(
        clip_id_for(video_id, start),
        np.concatenate(maps, axis=0).astype(np.float32),
        video_id,
        (start, start + CLIP_LENGTH),
    )


def video_flow_stacks(frames, video_id, estimator=None):
    """Flow stacks of every non-overlapping 16-frame clip of a video."""
    n = len(frames) // CLIP_LENGTH
    return [
        build_flow_stack(frames[c * CLIP_LENGTH:(c + 1) * CLIP_LENGTH], estimator, video_id, c * CLIP_LENGTH)
        for c in range(n)
    ]


def normalize_flow(flow):
    """Clip to +-16 px and scale into [-1, 1] for the autoencoder."""
    return (np.clip(flow, -FLOW_CLIP, FLOW_CLIP) / FLOW_CLIP).astype(np.float32)

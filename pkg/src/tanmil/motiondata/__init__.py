"""Synthetic weakly labelled videos, block-matching flow, and flow I/O."""

from .flow import (
    CLIP_LENGTH,
    BlockMatcher,
    FlowStack,
    block_matching_flow,
    build_flow_stack,
    normalize_flow,
    video_flow_stacks,
)
from .io import read_flow_file, read_manifest, write_flow_file, write_manifest
from .synth import DatasetConfig, SyntheticVideo, generate_dataset, translating_sequence

__all__ = [
    "CLIP_LENGTH", "BlockMatcher", "DatasetConfig", "FlowStack", "SyntheticVideo",
    "block_matching_flow", "build_flow_stack", "generate_dataset", "normalize_flow",
    "read_flow_file", "read_manifest", "translating_sequence", "video_flow_stacks",
    "write_flow_file", "write_manifest",
]

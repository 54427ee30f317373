import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tanmil import _kernels
from tanmil.motiondata import (
    BlockMatcher,
    DatasetConfig,
    FlowStack,
    block_matching_flow,
    build_flow_stack,
    generate_dataset,
    normalize_flow,
    read_flow_file,
    read_manifest,
    translating_sequence,
    video_flow_stacks,
    write_flow_file,
    write_manifest,
)
from tanmil.motiondata.io import ManifestRecord, decode_flow, encode_flow
from tanmil.nncore import FormatError


def _texture(seed=0, size=64):
    return translating_sequence((0, 0), frames=1, size=size, seed=seed)[0]


class TestBlockMatching:
    def test_identical_images_zero_flow(self):
        img = _texture()
        np.testing.assert_array_equal(block_matching_flow(img, img), 0)

    def test_flat_images_zero_flow_by_tie_break(self):
        img = np.full((32, 32), 77, dtype=np.uint8)
        np.testing.assert_array_equal(block_matching_flow(img, img + 0, block=8, radius=4), 0)

    def test_horizontal_shift(self):
        img = _texture(1)
        shifted = np.roll(img, 3, axis=1)
        flow = block_matching_flow(img, shifted, block=8, radius=4)
        interior = flow[:, 8:-8, 8:-8]
        np.testing.assert_array_equal(interior[0], 3)
        np.testing.assert_array_equal(interior[1], 0)

    def test_vertical_shift_sign(self):
        img = _texture(2)
        shifted = np.roll(img, -2, axis=0)
        flow = block_matching_flow(img, shifted, block=8, radius=4)
        np.testing.assert_array_equal(flow[1, 8:-8, 8:-8], -2)

    def test_candidate_order(self):
        cands = _kernels._pure.candidate_order(1)
        assert cands[:5] == [(0, 0), (-1, 0), (0, -1), (0, 1), (1, 0)]
        assert len(cands) == 9

    def test_tie_break_picks_first_candidate(self):
        # a vertical stripe pattern is ambiguous along y; the smallest |dy| wins
        img = np.tile((np.arange(32) % 7 * 30).astype(np.uint8), (32, 1))
        dy, dx = _kernels.block_match(img, np.roll(img, 2, axis=1), 8, 3)
        assert np.all(dy == 0) and np.all(dx[:, :-1] == 2)

    def test_content_leaving_frame_is_tracked(self):
        frames = translating_sequence((3, -2), frames=2, size=64, seed=9)
        dy, dx = _kernels.block_match(frames[0], frames[1], 8, 4)
        assert np.all(dx == 3) and np.all(dy == -2)

    def test_partial_blocks_cover_image(self):
        img = _texture(3, size=30)[:30, :27]
        flow = block_matching_flow(img, np.roll(img, 1, axis=1), block=8, radius=2)
        assert flow.shape == (2, 30, 27)

    @pytest.mark.parametrize("seed", range(4))
    def test_backends_agree(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.integers(0, 256, size=(37, 45), dtype=np.uint8)
        b = np.roll(a, (seed - 2, 3 - seed), axis=(0, 1))
        b[rng.random(b.shape) < 0.1] = 0
        results = [mod.block_match(a, b, 8, 3) for mod in _kernels.backends().values()]
        for dy, dx in results[1:]:
            np.testing.assert_array_equal(dy, results[0][0])
            np.testing.assert_array_equal(dx, results[0][1])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            block_matching_flow(np.zeros((8, 8)), np.zeros((8, 9)))


class TestFlowStack:
    def test_static_clip_gives_exact_zero(self):
        frames = [_texture(4)] * 16
        stack = build_flow_stack(frames)
        assert stack.flow.shape == (30, 64, 64)
        assert np.all(stack.flow == 0)

    def test_rigid_translation_recovered(self):
        frames = translating_sequence((2, 0), frames=16, size=64, seed=5)
        stack = build_flow_stack(frames, BlockMatcher(8, 4))
        inner = stack.flow[:, 8:-8, 8:-8]
        assert np.all(np.abs(inner[0::2] - 2) <= 0.5)
        assert np.all(np.abs(inner[1::2]) <= 0.5)

    def test_channel_order_horizontal_then_vertical(self):
        frames = translating_sequence((1, -3), frames=16, size=64, seed=6)
        stack = build_flow_stack(frames)
        inner = stack.flow[:, 8:-8, 8:-8]
        assert np.all(inner[0::2] == 1) and np.all(inner[1::2] == -3)

    def test_wrong_frame_count(self):
        frames = translating_sequence((1, 0), frames=15)
        with pytest.raises(ValueError, match="16"):
            build_flow_stack(frames)

    def test_size_mismatch(self):
        frames = list(translating_sequence((1, 0), frames=16, size=32))
        frames[3] = frames[3][:16]
        with pytest.raises(ValueError, match="size"):
            build_flow_stack(frames)

    def test_video_clips_non_overlapping(self):
        frames = translating_sequence((1, 0), frames=40, size=32)
        stacks = video_flow_stacks(frames, "v")
        assert [s.frame_range for s in stacks] == [(0, 16), (16, 32)]
        assert [s.clip_id for s in stacks] == ["v:0", "v:16"]

    def test_normalization_range(self):
        flow = np.array([-40.0, -16.0, -2.0, 0.0, 8.0, 30.0], dtype=np.float32)
        np.testing.assert_allclose(normalize_flow(flow), [-1, -1, -0.125, 0, 0.5, 1])


class TestGenerator:
    def test_deterministic(self):
        cfg = DatasetConfig(n_normal=10, n_anomalous=10, frames=64, size=112, seed=7)
        a = generate_dataset(cfg)
        b = generate_dataset(cfg)
        assert len(a) == 20
        for va, vb in zip(a, b):
            assert va.video_id == vb.video_id and va.label == vb.label
            assert va.frames.tobytes() == vb.frames.tobytes()
            assert va.mask.tobytes() == vb.mask.tobytes()

    def test_mask_bounds_over_seeds(self):
        for seed in range(100):
            cfg = DatasetConfig(n_normal=1, n_anomalous=1, frames=64, size=32, seed=seed)
            normal, anomalous = generate_dataset(cfg)
            assert not normal.mask.any()
            assert 16 <= anomalous.mask.sum() <= 32
            # exactly one contiguous interval by default
            edges = np.flatnonzero(np.diff(np.r_[0, anomalous.mask.astype(int), 0]))
            assert len(edges) == 2

    def test_multiple_intervals_disjoint(self):
        cfg = DatasetConfig(n_normal=0, n_anomalous=20, frames=128, size=32, intervals=2, seed=3)
        for v in generate_dataset(cfg):
            edges = np.flatnonzero(np.diff(np.r_[0, v.mask.astype(int), 0]))
            assert len(edges) == 4
            assert 16 <= v.mask.sum() <= 64

    def test_frame_properties(self):
        v = generate_dataset(DatasetConfig(n_normal=1, n_anomalous=0, frames=32, size=48, seed=1))[0]
        assert v.frames.shape == (32, 48, 48) and v.frames.dtype == np.uint8
        assert v.frame_count >= 16

    def test_anomalous_motion_is_stronger(self):
        cfg = DatasetConfig(n_normal=0, n_anomalous=6, frames=96, size=64, seed=2)
        for v in generate_dataset(cfg):
            mags = []
            for s in video_flow_stacks(v.frames, v.video_id):
                a, b = s.frame_range
                mags.append((v.mask[a:b].mean(), np.abs(s.flow).mean()))
            inside = [m for frac, m in mags if frac == 1]
            outside = [m for frac, m in mags if frac == 0]
            if inside and outside:
                assert min(inside) > max(outside)

    @pytest.mark.parametrize("kw", [dict(frames=8), dict(n_normal=0, n_anomalous=0),
                                    dict(anomaly_kinds=("teleport",)), dict(size=4),
                                    dict(frames=20)])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            generate_dataset(DatasetConfig(**kw))


class TestFlowFiles:
    @settings(max_examples=25, deadline=None)
    @given(
        h=st.integers(1, 12), w=st.integers(1, 12), seed=st.integers(0, 2**31),
        vid=st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=12),
        start=st.integers(0, 10_000),
    )
    def test_round_trip(self, tmp_path_factory, h, w, seed, vid, start):
        rng = np.random.default_rng(seed)
        flow = (rng.standard_normal((30, h, w)) * 10).astype(np.float32)
        stack = FlowStack(f"{vid}:{start}", flow, vid, (start, start + 16))
        path = tmp_path_factory.mktemp("flow") / "a.flow"
        write_flow_file(stack, path)
        back = read_flow_file(path)
        assert back.flow.tobytes() == flow.tobytes()
        assert (back.clip_id, back.video_id, back.frame_range) == (stack.clip_id, vid, (start, start + 16))

    def test_truncated_names_byte_counts(self):
        stack = FlowStack("v:0", np.zeros((30, 4, 4), dtype=np.float32), "v", (0, 16))
        data = encode_flow(stack)
        with pytest.raises(FormatError, match=f"expected at least {len(data)} bytes, got {len(data) - 5}"):
            decode_flow(data[:-5])

    def test_wrong_magic(self):
        stack = FlowStack("v:0", np.zeros((30, 2, 2), dtype=np.float32), "v", (0, 16))
        with pytest.raises(FormatError, match="magic"):
            decode_flow(b"XXXX" + encode_flow(stack)[4:])

    def test_rejects_non_finite(self):
        flow = np.zeros((30, 2, 2), dtype=np.float32)
        flow[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            FlowStack("v:0", flow, "v", (0, 16))


def test_manifest_round_trip(tmp_path):
    recs = [ManifestRecord("a", "normal", 64, "frames/a.npy"), ManifestRecord("b", "anomalous", 80, "frames/b.npy")]
    write_manifest(tmp_path / "m.txt", recs)
    assert read_manifest(tmp_path / "m.txt") == recs
    assert (tmp_path / "m.txt").read_text().splitlines()[0] == "a\tnormal\t64\tframes/a.npy"

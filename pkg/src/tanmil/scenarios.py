"""Feature-level synthetic bags with planted anomalies.

Bags are built directly in feature space, skipping the video and
autoencoder stages, so ranking behaviour can be studied in seconds. Each
positive video carries ``intervals`` disjoint anomalous segment runs. Run
``k`` shifts its segments along its own direction by ``strengths[k]``, so a
video can hold a strong and a weak anomaly at once.
"""

from dataclasses import dataclass

import numpy as np

from .mil import Bag, l2_normalize


@dataclass(frozen=True)
class ScenarioConfig:
    n_train_pos: int = 30
    n_train_neg: int = 30
    n_test_pos: int = 20
    n_test_neg: int = 20
    dim: int = 64
    segments: int = 32
    frames: int = 128
    strengths: tuple = (1.0, 0.4)
    run_length: tuple = (3, 6)
    noise: float = 0.3
    seed: int = 0

    @property
    def intervals(self):
        return len(self.strengths)

    def validate(self):
        errors = []
        if min(self.n_train_pos, self.n_train_neg, self.n_test_pos, self.n_test_neg) < 1:
            errors.append("every split needs at least one positive and one negative video")
        if self.frames % self.segments:
            errors.append(f"frames ({self.frames}) must be a multiple of segments ({self.segments})")
        lo, hi = self.run_length
        if not 1 <= lo <= hi:
            errors.append(f"bad run_length {self.run_length}")
        if self.intervals * (hi + 1) > self.segments:
            errors.append("anomaly runs do not fit in the bag")
        if max(1, self.dim // 8) * self.intervals > self.dim:
            errors.append("dim too small for one direction per interval")
        if errors:
            raise ValueError("; ".join(errors))
        return self


@dataclass
class Scenario:
    train: list
    test: list
    truth: dict
    segment_labels: dict

    @property
    def frame_counts(self):
        return {vid: len(mask) for vid, mask in self.truth.items()}


def _directions(rng, dim, k):
    """``k`` non-negative unit vectors on disjoint blocks of ``dim // 8`` coordinates."""
    out = np.zeros((k, dim))
    width = max(1, dim // 8)
    for i in range(k):
        out[i, i * width:(i + 1) * width] = rng.uniform(0.5, 1.0, width)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _runs(rng, segments, count, run_length):
    """Disjoint segment runs, each separated from the next by a gap."""
    lo, hi = run_length
    while True:
        lengths = rng.integers(lo, hi + 1, size=count)
        starts = np.sort(rng.choice(segments, size=count, replace=False))
        ends = starts + lengths
        if ends[-1] <= segments and np.all(starts[1:] > ends[:-1]):
            order = rng.permutation(count)
            return [(int(starts[i]), int(ends[i])) for i in order]


def _video(rng, cfg, dirs, positive):
    feats = np.abs(1.0 + cfg.noise * rng.standard_normal((cfg.segments, cfg.dim)))
    labels = np.zeros(cfg.segments, dtype=np.int8)
    if positive:
        for k, (a, b) in enumerate(_runs(rng, cfg.segments, cfg.intervals, cfg.run_length)):
            feats[a:b] += cfg.strengths[k] * np.sqrt(cfg.dim) * dirs[k]
            labels[a:b] = k + 1
    return l2_normalize(feats), labels


def multi_anomaly_scenario(config=None):
    """Train/test bags plus per-frame truth for the test videos.

    ``segment_labels`` maps every video to its per-segment run index
    (0 normal, k for the k-th strength).
    """
    cfg = (config or ScenarioConfig()).validate()
    rng = np.random.default_rng(cfg.seed)
    dirs = _directions(rng, cfg.dim, cfg.intervals)
    per_seg = cfg.frames // cfg.segments
    split = {"train": [], "test": []}
    truth, seg_labels = {}, {}
    plan = [
        ("train", True, cfg.n_train_pos), ("train", False, cfg.n_train_neg),
        ("test", True, cfg.n_test_pos), ("test", False, cfg.n_test_neg),
    ]
    for name, positive, count in plan:
        for i in range(count):
            vid = f"{name}-{'pos' if positive else 'neg'}-{i:03d}"
            feats, labels = _video(rng, cfg, dirs, positive)
            split[name].append(Bag(vid, positive, feats))
            seg_labels[vid] = labels
            if name == "test":
                truth[vid] = np.repeat(labels > 0, per_seg)
    return Scenario(split["train"], split["test"], truth, seg_labels)

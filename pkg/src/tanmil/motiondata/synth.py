"""Seeded synthetic surveillance-style videos with weak labels.

Normal videos show a slowly drifting textured background with a few objects
moving slowly and coherently. Anomalous videos follow the same recipe but
switch, inside one or more frame intervals, to a distinct motion regime:

* ``burst``    background and objects suddenly move several pixels per frame
* ``reversal`` the background shakes back and forth, reversing every 2 frames
* ``scatter``  a crowd of extra objects bursts outward from a point

Every video is generated from its own ``SeedSequence((seed, index))`` so the
dataset is a pure function of the config.
"""

from dataclasses import dataclass, field

import numpy as np

ANOMALY_KINDS = ("burst", "reversal", "scatter")


@dataclass(frozen=True)
class DatasetConfig:
    n_normal: int = 10
    n_anomalous: int = 10
    frames: int = 128
    size: int = 64
    anomaly_kinds: tuple = ANOMALY_KINDS
    intervals: int = 1
    min_anomaly_frames: int = 16
    max_anomaly_fraction: float = 0.5
    seed: int = 0
    id_prefix: str = "vid"

    def validate(self):
        errors = []
        if self.n_normal < 0 or self.n_anomalous < 0:
            errors.append("video counts must be non-negative")
        if self.n_normal + self.n_anomalous == 0:
            errors.append("dataset must contain at least one video")
        if self.frames < 16:
            errors.append(f"frames must be >= 16, got {self.frames}")
        if self.size < 16:
            errors.append(f"size must be >= 16, got {self.size}")
        if not self.anomaly_kinds or set(self.anomaly_kinds) - set(ANOMALY_KINDS):
            errors.append(f"anomaly kinds must be a non-empty subset of {ANOMALY_KINDS}")
        if self.intervals < 1:
            errors.append("intervals must be >= 1")
        max_len = int(self.frames * self.max_anomaly_fraction)
        if self.n_anomalous and max_len < max(self.min_anomaly_frames, 8 * self.intervals):
            errors.append(
                f"{self.frames} frames cannot hold {self.intervals} anomaly interval(s) of "
                f"{self.min_anomaly_frames}+ frames within fraction {self.max_anomaly_fraction}"
            )
        if errors:
            raise ValueError("; ".join(errors))
        return self


@dataclass
class SyntheticVideo:
    video_id: str
    frames: np.ndarray
    label: str
    mask: np.ndarray = field(repr=False)
    kinds: tuple = ()

    @property
    def frame_count(self):
        return len(self.frames)

    @property
    def is_anomalous(self):
        return self.label == "anomalous"


def periodic_texture(rng, size, sigma=1.5):
    """Smooth, seamlessly tileable noise in [20, 235]."""
    noise = rng.standard_normal((size, size))
    f = np.fft.fftfreq(size)
    gain = np.exp(-2 * (np.pi * sigma) ** 2 * (f[:, None] ** 2 + f[None, :] ** 2))
    tex = np.real(np.fft.ifft2(np.fft.fft2(noise) * gain))
    tex -= tex.min()
    tex /= max(tex.max(), 1e-12)
    return 20 + 215 * tex


class _Object:
    def __init__(self, pos, vel, radius, tex):
        self.pos = np.asarray(pos, dtype=float)
        self.vel = np.asarray(vel, dtype=float)
        self.radius = radius
        self.tex = tex


def _random_velocity(rng, lo, hi):
    angle = rng.uniform(0, 2 * np.pi)
    speed = rng.uniform(lo, hi)
    return np.array([np.sin(angle), np.cos(angle)]) * speed


def _make_object(rng, size, speed_lo, speed_hi, pos=None, radius=None):
    radius = radius or int(rng.integers(5, 9))
    if pos is None:
        pos = rng.uniform(radius, size - radius, size=2)
    tex = periodic_texture(rng, 2 * radius + 1, sigma=1.0)
    # keep objects visibly distinct from the background
    tex = np.where(rng.random() < 0.5, 0.5 * tex, 0.5 * tex + 127)
    return _Object(pos, _random_velocity(rng, speed_lo, speed_hi), radius, tex)


def _paste(frame, obj):
    size = frame.shape[0]
    r = obj.radius
    cy, cx = int(np.rint(obj.pos[0])), int(np.rint(obj.pos[1]))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    inside = yy * yy + xx * xx <= r * r
    ys, xs = yy + cy, xx + cx
    ok = inside & (ys >= 0) & (ys < size) & (xs >= 0) & (xs < size)
    frame[ys[ok], xs[ok]] = obj.tex[ok]


def _bounce(obj, size):
    for axis in range(2):
        if obj.pos[axis] < obj.radius:
            obj.pos[axis] = 2 * obj.radius - obj.pos[axis]
            obj.vel[axis] = abs(obj.vel[axis])
        elif obj.pos[axis] > size - 1 - obj.radius:
            obj.pos[axis] = 2 * (size - 1 - obj.radius) - obj.pos[axis]
            obj.vel[axis] = -abs(obj.vel[axis])


def _intervals(rng, config):
    """Disjoint anomalous frame intervals covering between the min and max length."""
    n = config.intervals
    hi = int(config.frames * config.max_anomaly_fraction)
    lo = max(config.min_anomaly_frames, 8 * n)
    total = int(rng.integers(lo, hi + 1))
    # each interval gets at least 8 frames, the rest is split at random
    extra = rng.multinomial(total - 8 * n, np.ones(n) / n) if n > 1 else np.array([total - 8])
    lengths = 8 + extra
    free = config.frames - total - 8 * (n - 1)
    gaps = rng.multinomial(free, np.ones(n + 1) / (n + 1))
    out, t = [], int(gaps[0])
    for i in range(n):
        out.append((t, t + int(lengths[i])))
        t += int(lengths[i]) + 8 + int(gaps[i + 1])
    return out


def _render_video(rng, config, anomalies):
    """Frames (F, S, S) uint8; ``anomalies`` is a list of (start, end, kind)."""
    size, nframes = config.size, config.frames
    period = 2 * size
    tex = periodic_texture(rng, period)
    cam = rng.uniform(0, period, size=2)
    cam_vel = _random_velocity(rng, 0.25, 1.0)
    objects = [_make_object(rng, size, 0.3, 1.2) for _ in range(int(rng.integers(1, 4)))]
    scatter = []
    iy = np.arange(size)[:, None]
    ix = np.arange(size)[None, :]

    # per-interval random parameters are drawn up front so the draw order
    # does not depend on the frame loop
    plans = []
    for start, end, kind in anomalies:
        plan = {"start": start, "end": end, "kind": kind}
        if kind == "burst":
            plan["cam_vel"] = _random_velocity(rng, 3.0, 4.0)
            plan["obj_scale"] = rng.uniform(2.5, 3.5)
        elif kind == "reversal":
            plan["cam_vel"] = _random_velocity(rng, 2.5, 3.5)
        elif kind == "scatter":
            center = rng.uniform(size * 0.3, size * 0.7, size=2)
            plan["objects"] = []
            for _ in range(int(rng.integers(10, 17))):
                o = _make_object(rng, size, 3.0, 4.0, pos=center.copy(), radius=int(rng.integers(4, 8)))
                plan["objects"].append(o)
        plans.append(plan)

    frames = np.empty((nframes, size, size), dtype=np.uint8)
    for t in range(nframes):
        active = [p for p in plans if p["start"] <= t < p["end"]]
        frame = tex[(iy + int(np.rint(cam[0]))) % period, (ix + int(np.rint(cam[1]))) % period].copy()
        for obj in objects:
            _paste(frame, obj)
        for obj in scatter:
            _paste(frame, obj)
        frames[t] = np.clip(np.rint(frame), 0, 255).astype(np.uint8)

        # advance to t + 1
        vel = cam_vel
        obj_scale = 1.0
        for p in active:
            if p["kind"] == "burst":
                vel, obj_scale = p["cam_vel"], p["obj_scale"]
            elif p["kind"] == "reversal":
                vel = p["cam_vel"] * (1 if ((t - p["start"]) // 2) % 2 == 0 else -1)
            elif p["kind"] == "scatter" and t == p["start"]:
                scatter = list(p["objects"])
        if not any(p["kind"] == "scatter" for p in active):
            scatter = []
        cam = cam + vel
        for obj in objects:
            obj.pos = obj.pos + obj.vel * obj_scale
            _bounce(obj, size)
        for obj in scatter:
            obj.pos = obj.pos + obj.vel
            _bounce(obj, size)
    return frames


def generate_video(config, index, anomalous):
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, index)))
    mask = np.zeros(config.frames, dtype=bool)
    anomalies = []
    if anomalous:
        spans = _intervals(rng, config)
        kinds = list(config.anomaly_kinds)
        order = rng.permutation(len(kinds))
        for i, (a, b) in enumerate(spans):
            kind = kinds[order[i % len(kinds)]]
            anomalies.append((a, b, kind))
            mask[a:b] = True
    frames = _render_video(rng, config, anomalies)
    return SyntheticVideo(
        f"{config.id_prefix}{index:04d}",
        frames,
        "anomalous" if anomalous else "normal",
        mask,
        tuple(k for _, _, k in anomalies),
    )


def generate_dataset(config):
    """Normal videos first (indices 0..n_normal-1), then anomalous ones."""
    config.validate()
    videos = [generate_video(config, i, False) for i in range(config.n_normal)]
    videos += [generate_video(config, config.n_normal + i, True) for i in range(config.n_anomalous)]
    return videos


def translating_sequence(shift, frames=16, size=64, seed=0):
    """Textured frames translating rigidly by ``shift`` = (dx, dy) px per frame."""
    rng = np.random.default_rng(seed)
    period = 4 * size
    tex = periodic_texture(rng, period)
    iy = np.arange(size)[:, None]
    ix = np.arange(size)[None, :]
    dx, dy = shift
    out = np.empty((frames, size, size), dtype=np.uint8)
    for t in range(frames):
        out[t] = np.rint(tex[(iy - dy * t) % period, (ix - dx * t) % period]).astype(np.uint8)
    return out

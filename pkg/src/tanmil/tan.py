"""Temporal augmented network: a 7-layer convolutional autoencoder over flow stacks.

Three stride-2 encoder convolutions, one stride-1 bottleneck convolution and
three stride-2 transposed convolutions. The motion feature of a clip is the
global average pool of the (ReLU) bottleneck activations.
"""

import logging
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .nncore import (
    Activation,
    Adagrad,
    Conv2D,
    ConvTranspose2D,
    ShapeError,
    TrainSchedule,
    global_average_pool,
    save_checkpoint,
)
from .nncore.checkpoint import FormatError, _Reader

log = logging.getLogger(__name__)

ENCODER_NAMES = ("enc1", "enc2", "enc3")
DECODER_NAMES = ("dec1", "dec2", "dec3")
LAYER_NAMES = ENCODER_NAMES + ("bottleneck",) + DECODER_NAMES


@dataclass(frozen=True)
class TanConfig:
    in_channels: int = 30
    size: int = 64
    encoder_widths: tuple = (64, 128, 256)
    bottleneck: int = 1024
    kernel: int = 3
    deconv_kernel: int = 4
    final_activation: str = "identity"
    schedule: TrainSchedule = field(
        default_factory=lambda: TrainSchedule(0.005, 5000, (2500, 4000), batch_size=8)
    )

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        if len(self.encoder_widths) != 3:
            raise ValueError("the autoencoder has exactly 3 encoder layers")
        if self.size % 8:
            raise ValueError(f"spatial size must be divisible by 8, got {self.size}")

    @property
    def feature_dim(self):
        return self.bottleneck

    @property
    def decoder_widths(self):
        w1, w2, w3 = self.encoder_widths
        return (w3, w2, self.in_channels)


class TemporalAutoencoder:
    def __init__(self, config=None, seed=0, params=None):
        self.config = config = config or TanConfig()
        rng = np.random.default_rng(seed)
        k, kd = config.kernel, config.deconv_kernel
        pad = k // 2
        w1, w2, w3 = config.encoder_widths
        d1, d2, d3 = config.decoder_widths
        self.layers = {
            "enc1": Conv2D(config.in_channels, w1, k, 2, pad, rng=rng),
            "enc2": Conv2D(w1, w2, k, 2, pad, rng=rng),
            "enc3": Conv2D(w2, w3, k, 2, pad, rng=rng),
            "bottleneck": Conv2D(w3, config.bottleneck, k, 1, pad, rng=rng),
            "dec1": ConvTranspose2D(config.bottleneck, d1, kd, 2, 1, rng=rng),
            "dec2": ConvTranspose2D(d1, d2, kd, 2, 1, rng=rng),
            "dec3": ConvTranspose2D(d2, d3, kd, 2, 1, rng=rng),
        }
        self.acts = {name: Activation("relu") for name in LAYER_NAMES}
        self.acts["dec3"] = Activation(config.final_activation)
        if params is not None:
            self.load_params(params)

    # parameters ---------------------------------------------------------

    def named_params(self):
        return {name: layer.params for name, layer in self.layers.items()}

    def load_params(self, named):
        for name, layer in self.layers.items():
            p = named[name]
            if p.weights.shape != layer.params.weights.shape:
                raise ShapeError(
                    f"layer {name}: checkpoint shape {p.weights.shape} != config shape "
                    f"{layer.params.weights.shape}"
                )
            layer.params = p
            layer.zero_grads()

    def astype(self, dtype):
        for layer in self.layers.values():
            layer.params = layer.params.astype(dtype)
            layer.zero_grads()
        return self

    # passes -------------------------------------------------------------

    def _check(self, x):
        c = self.config
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != (c.in_channels, c.size, c.size):
            raise ShapeError(
                f"flow stack shape {tuple(x.shape[1:])} does not match config "
                f"({c.in_channels}, {c.size}, {c.size})"
            )
        return x

    def encode(self, x):
        """Bottleneck activations (N, B, H/8, W/8)."""
        x = self._check(x)
        for name in ENCODER_NAMES + ("bottleneck",):
            x = self.acts[name].forward(self.layers[name].forward(x))
        return x

    def forward(self, x):
        """Return (reconstruction, bottleneck) for a batch or a single stack."""
        single = x.ndim == 3
        z = self.encode(x)
        y = z
        for name in DECODER_NAMES:
            y = self.acts[name].forward(self.layers[name].forward(y))
        if single:
            return y[0], z[0]
        return y, z

    def backward(self, drecon):
        g = drecon if drecon.ndim == 4 else drecon[None]
        for name in reversed(LAYER_NAMES):
            g = self.layers[name].backward(self.acts[name].backward(g))
        return g


def tan_forward(stack, model):
    return model.forward(np.asarray(stack))


def recon_loss(target, reconstruction):
    """Mean absolute per-element error between a flow stack and its reconstruction."""
    target = np.asarray(target)
    reconstruction = np.asarray(reconstruction)
    if target.shape != reconstruction.shape:
        raise ShapeError(f"shape {target.shape} != {reconstruction.shape}")
    return float(np.mean(np.abs(target.astype(np.float64) - reconstruction)))


def recon_loss_grad(target, reconstruction):
    return (np.sign(reconstruction - target) / target.size).astype(reconstruction.dtype)


def extract_feature(stack, model):
    """Motion feature of one clip: GAP over the bottleneck, no decoder pass."""
    return global_average_pool(model.encode(np.asarray(stack)))[0]


def extract_features(stacks, model, batch=16):
    stacks = np.asarray(stacks)
    out = [global_average_pool(model.encode(stacks[i:i + batch])) for i in range(0, len(stacks), batch)]
    return np.concatenate(out, axis=0)


@dataclass
class TrainResult:
    model: TemporalAutoencoder
    losses: list
    checkpoints: list = field(default_factory=list)


def train_tan(stacks, config=None, seed=0, checkpoint_dir=None, stop_below=None, log_every=500):
    """Train the autoencoder with L1 reconstruction loss and Adagrad.

    ``stacks`` is an array (N, 30, H, W) of normalized flow. Mini-batches are
    drawn without replacement from a seeded per-epoch permutation. The loss
    recorded at each step is the batch loss before the update. When
    ``checkpoint_dir`` is given a checkpoint is written at every milestone and
    at the end. ``stop_below`` ends training early once a step's loss falls
    under that value.
    """
    config = config or TanConfig()
    stacks = np.asarray(stacks, dtype=np.float32)
    if len(stacks) == 0:
        raise ValueError("cannot train on an empty dataset")
    sched = config.schedule
    model = TemporalAutoencoder(config, seed=seed)
    opt = Adagrad(model.layers.values(), sched)
    rng = np.random.default_rng(seed + 1)
    losses, written = [], []
    order, cursor = rng.permutation(len(stacks)), 0
    bs = min(sched.batch_size, len(stacks))

    for step in range(sched.total_steps):
        if cursor + bs > len(order):
            order, cursor = rng.permutation(len(stacks)), 0
        batch = stacks[order[cursor:cursor + bs]]
        cursor += bs
        recon, _ = model.forward(batch)
        loss = recon_loss(batch, recon)
        losses.append(loss)
        model.backward(recon_loss_grad(batch, recon))
        opt.step()
        if log_every and step % log_every == 0:
            log.info("tan step %d loss %.5f lr %.5g", step, loss, sched.rate_at(step))
        done = stop_below is not None and loss < stop_below
        if checkpoint_dir is not None and ((step + 1) in sched.milestones or step + 1 == sched.total_steps or done):
            path = f"{checkpoint_dir}/tan_step{step + 1:06d}.ckpt"
            save_checkpoint(path, model.named_params())
            written.append(path)
        if done:
            break
    return TrainResult(model, losses, written)


def with_schedule(config, **kw):
    return replace(config, schedule=replace(config.schedule, **kw))


# feature files ("FMFT") --------------------------------------------------

FEATURE_MAGIC = b"FMFT"
FEATURE_VERSION = 1


def encode_feature_records(records):
    """Serialize ``[(clip_id, vector), ...]``; each record is self-describing.

    Record layout (little-endian): magic b"FMFT", u16 version, u16 id length,
    UTF-8 id, u32 length, length x f32.
    """
    parts = []
    for clip_id, vec in records:
        raw = clip_id.encode("utf-8")
        vec = np.ascontiguousarray(vec, dtype="<f4").ravel()
        parts.append(FEATURE_MAGIC + struct.pack("<HH", FEATURE_VERSION, len(raw)) + raw)
        parts.append(struct.pack("<I", vec.size) + vec.tobytes())
    return b"".join(parts)


def decode_feature_records(data):
    r = _Reader(data, "feature file")
    out = []
    while not r.at_end():
        magic = r.take(4)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"bad feature magic {magic!r}, expected {FEATURE_MAGIC!r}")
        (version,) = r.unpack("<H")
        if version != FEATURE_VERSION:
            raise FormatError(f"unsupported feature file version {version}")
        clip_id = r.string()
        (n,) = r.unpack("<I")
        out.append((clip_id, r.floats((n,))))
    return out


def write_features(path, records):
    with open(path, "wb") as f:
        f.write(encode_feature_records(records))


def read_features(path):
    with open(path, "rb") as f:
        return decode_feature_records(f.read())

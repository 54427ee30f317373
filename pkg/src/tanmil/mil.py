"""Multiple-instance ranking over video bags.

A video is a bag of ``m`` segment features. A regressor maps each segment
to an anomaly score in (0, 1); an attention block maps each segment to a
logit, normalized over the bag. Training ranks positive (anomalous) bags
above negative ones with a unit-margin hinge, aggregating scores either by
max or by attention-weighted sum, plus a sparsity penalty on the positive
bag.
"""

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .nncore import (
    Adagrad,
    Dense,
    ShapeError,
    TrainSchedule,
    dropout,
    load_checkpoint,
    save_checkpoint,
    sigmoid,
    softmax,
    softmax_backward,
)
from .nncore.checkpoint import FormatError
from .tan import read_features, write_features

log = logging.getLogger(__name__)

MODES = ("max", "attention")


@dataclass(frozen=True)
class MilConfig:
    segments: int = 32
    lambda1: float = 8e-5
    mode: str = "attention"
    regressor_widths: tuple = (512, 32, 1)
    attention_widths: tuple = (256, 64, 1)
    dropout: float = 0.6
    attention_norm: str = "softmax"
    bags_per_side: int = 30
    schedule: TrainSchedule = field(
        default_factory=lambda: TrainSchedule(0.001, 10000, (4000, 8000))
    )

    def __post_init__(self):
        object.__setattr__(self, "regressor_widths", tuple(int(w) for w in self.regressor_widths))
        object.__setattr__(self, "attention_widths", tuple(int(w) for w in self.attention_widths))
        errors = self.errors()
        if errors:
            raise ValueError("; ".join(errors))

    def errors(self):
        out = []
        if self.segments < 1:
            out.append(f"segments must be >= 1, got {self.segments}")
        if self.lambda1 < 0:
            out.append(f"lambda1 must be >= 0, got {self.lambda1}")
        if self.mode not in MODES:
            out.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if len(self.regressor_widths) != 3 or self.regressor_widths[-1] != 1:
            out.append(f"regressor widths must be 3 entries ending in 1, got {self.regressor_widths}")
        if len(self.attention_widths) != 3 or self.attention_widths[-1] != 1:
            out.append(f"attention widths must be 3 entries ending in 1, got {self.attention_widths}")
        if not 0 <= self.dropout < 1:
            out.append(f"dropout must be in [0, 1), got {self.dropout}")
        if self.attention_norm not in ("softmax", "sigmoid"):
            out.append(f"attention_norm must be softmax or sigmoid, got {self.attention_norm!r}")
        if self.bags_per_side < 1:
            out.append("bags_per_side must be >= 1")
        return out


# -- bags -------------------------------------------------------------------

@dataclass
class Bag:
    video_id: str
    positive: bool
    features: np.ndarray

    @property
    def m(self):
        return self.features.shape[0]


def l2_normalize(x, axis=-1):
    x = np.asarray(x, dtype=np.float32)
    norm = np.sqrt((x.astype(np.float64) ** 2).sum(axis=axis, keepdims=True))
    # all-zero rows stay zero rather than becoming NaN
    return (x / np.maximum(norm, 1e-12)).astype(np.float32)


def segment_groups(n_clips, m):
    """Clip index range [lo, hi) averaged into each of the ``m`` segments.

    Contiguous near-equal groups; with fewer clips than segments each clip is
    repeated in temporal order so segment ``s`` holds clip ``floor(s*n/m)``.
    """
    out = []
    for s in range(m):
        lo = s * n_clips // m
        hi = max((s + 1) * n_clips // m, lo + 1)
        out.append((lo, hi))
    return out


def build_bag(clip_features, m=32, video_id="", positive=False):
    feats = np.asarray(clip_features, dtype=np.float32)
    if feats.ndim != 2 or len(feats) == 0:
        raise ValueError("build_bag needs at least one clip feature vector")
    rows = np.stack([feats[lo:hi].astype(np.float64).mean(axis=0) for lo, hi in segment_groups(len(feats), m)])
    return Bag(video_id, bool(positive), l2_normalize(rows))


def fuse_features(a, b):
    """Concatenate two feature vectors (or row-aligned matrices) and L2-normalize."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    return l2_normalize(np.concatenate([a, b], axis=-1))


# -- model ------------------------------------------------------------------

class MilModel:
    """Regressor f (FC-ReLU-drop, FC-drop, FC-sigmoid) and attention block (FC-tanh, FC-tanh, FC)."""

    def __init__(self, feature_dim, config=None, seed=0):
        self.config = config = config or MilConfig()
        self.feature_dim = feature_dim
        rng = np.random.default_rng(seed)
        r1, r2, r3 = config.regressor_widths
        a1, a2, a3 = config.attention_widths
        self.regressor = {
            "fc1": Dense(feature_dim, r1, rng=rng),
            "fc2": Dense(r1, r2, rng=rng),
            "fc3": Dense(r2, r3, rng=rng),
        }
        self.attention = {
            "fc1": Dense(feature_dim, a1, rng=rng),
            "fc2": Dense(a1, a2, rng=rng),
            "fc3": Dense(a2, a3, rng=rng),
        }

    def named_params(self):
        out = {f"regressor.{k}": v.params for k, v in self.regressor.items()}
        out.update({f"attention.{k}": v.params for k, v in self.attention.items()})
        return out

    def load_params(self, named):
        for prefix, layers in (("regressor", self.regressor), ("attention", self.attention)):
            for k, layer in layers.items():
                p = named[f"{prefix}.{k}"]
                if p.weights.shape != layer.params.weights.shape:
                    raise ShapeError(
                        f"{prefix}.{k}: checkpoint shape {p.weights.shape} != {layer.params.weights.shape}"
                    )
                layer.params = p
                layer.zero_grads()

    def astype(self, dtype):
        for layer in self.layers():
            layer.params = layer.params.astype(dtype)
            layer.zero_grads()
        return self

    def layers(self, mode=None):
        mode = mode or self.config.mode
        out = list(self.regressor.values())
        if mode == "attention":
            out += list(self.attention.values())
        return out

    def _check(self, x):
        if x.shape[-1] != self.feature_dim:
            raise ShapeError(f"bag feature dim {x.shape[-1]} != model feature dim {self.feature_dim}")

    # regressor
    def scores(self, x, training=False, rng=None):
        """Scores (B, m) for bag features (B, m, d); caches for backward."""
        x = np.asarray(x)
        self._check(x)
        lead = x.shape[:-1]
        h = x.reshape(-1, self.feature_dim)
        rate = self.config.dropout
        fc1, fc2, fc3 = self.regressor.values()
        h1 = np.maximum(fc1.forward(h), 0)
        h1d, self._mask1 = dropout(h1, rate, training, rng)
        h2 = fc2.forward(h1d)
        h2d, self._mask2 = dropout(h2, rate, training, rng)
        s = sigmoid(fc3.forward(h2d))
        self._h1, self._s = h1, s
        return s.reshape(lead)

    def scores_backward(self, dscores):
        fc1, fc2, fc3 = self.regressor.values()
        g = dscores.reshape(-1, 1) * self._s * (1 - self._s)
        g = fc3.backward(g)
        if self._mask2 is not None:
            g = g * self._mask2
        g = fc2.backward(g)
        if self._mask1 is not None:
            g = g * self._mask1
        g = g * (self._h1 > 0)
        fc1.backward(g)

    # attention
    def weights(self, x):
        """Per-segment attention weights (B, m), normalized over each bag."""
        x = np.asarray(x)
        self._check(x)
        lead = x.shape[:-1]
        fc1, fc2, fc3 = self.attention.values()
        a1 = np.tanh(fc1.forward(x.reshape(-1, self.feature_dim)))
        a2 = np.tanh(fc2.forward(a1))
        logits = fc3.forward(a2).reshape(lead)
        self._a1, self._a2 = a1, a2
        if self.config.attention_norm == "softmax":
            self._w = softmax(logits, axis=-1)
        else:
            self._w = sigmoid(logits)
        return self._w

    def weights_backward(self, dweights):
        fc1, fc2, fc3 = self.attention.values()
        if self.config.attention_norm == "softmax":
            dlogits = softmax_backward(dweights, self._w, axis=-1)
        else:
            dlogits = dweights * self._w * (1 - self._w)
        g = fc3.backward(dlogits.reshape(-1, 1))
        g = fc2.backward(g * (1 - self._a2 ** 2))
        fc1.backward(g * (1 - self._a1 ** 2))


def score_segments(bag, model, training=False, rng=None):
    return model.scores(bag.features, training=training, rng=rng)


def attention_weights(bag, model):
    return model.weights(bag.features)


# -- losses -----------------------------------------------------------------
# All loss functions accept a single bag pair (1-D arrays of length m) or a
# batch of pairs (arrays of shape (P, m)) and return per-pair values.

def max_hinge_loss(pos_scores, neg_scores):
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    return np.maximum(0.0, 1.0 - pos_scores.max(axis=-1) + neg_scores.max(axis=-1))


def attention_hinge_loss(pos_scores, pos_weights, neg_scores, neg_weights):
    a = (np.asarray(pos_weights, dtype=np.float64) * pos_scores).sum(axis=-1)
    b = (np.asarray(neg_weights, dtype=np.float64) * neg_scores).sum(axis=-1)
    return np.maximum(0.0, 1.0 - a + b)


def uniform_weights(scores):
    scores = np.asarray(scores)
    return np.full(scores.shape, 1.0 / scores.shape[-1])


def total_loss(pos_scores, pos_weights, neg_scores, neg_weights, lambda1, mode):
    """Ranking hinge plus ``lambda1`` times the weighted positive-bag score sum.

    In max mode the weight arguments are ignored; the sparsity term uses
    uniform weights 1/m.
    """
    if mode == "max":
        rank = max_hinge_loss(pos_scores, neg_scores)
        pos_weights = uniform_weights(pos_scores)
    elif mode == "attention":
        rank = attention_hinge_loss(pos_scores, pos_weights, neg_scores, neg_weights)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    sparsity = (np.asarray(pos_weights, dtype=np.float64) * pos_scores).sum(axis=-1)
    return rank + lambda1 * sparsity


def total_loss_grad(pos_scores, pos_weights, neg_scores, neg_weights, lambda1, mode):
    """Gradients of ``total_loss`` (per pair, not averaged).

    Returns (d_pos_scores, d_pos_weights, d_neg_scores, d_neg_weights); the
    weight gradients are zero in max mode.
    """
    ps = np.atleast_2d(np.asarray(pos_scores, dtype=np.float64))
    ns = np.atleast_2d(np.asarray(neg_scores, dtype=np.float64))
    dps = np.zeros_like(ps)
    dns = np.zeros_like(ns)
    dpw = np.zeros_like(ps)
    dnw = np.zeros_like(ns)
    rows = np.arange(len(ps))
    if mode == "max":
        active = (1.0 - ps.max(axis=-1) + ns.max(axis=-1)) > 0
        dps[rows, ps.argmax(axis=-1)] -= active
        dns[rows, ns.argmax(axis=-1)] += active
        dps += lambda1 / ps.shape[-1]
    else:
        pw = np.atleast_2d(pos_weights)
        nw = np.atleast_2d(neg_weights)
        a = (pw * ps).sum(axis=-1)
        b = (nw * ns).sum(axis=-1)
        active = ((1.0 - a + b) > 0).astype(np.float64)
        da = (lambda1 - active)[:, None]
        db = active[:, None]
        dps, dpw = da * pw, da * ps
        dns, dnw = db * nw, db * ns
    shape = np.shape(pos_scores)
    return dps.reshape(shape), dpw.reshape(shape), dns.reshape(shape), dnw.reshape(shape)


# -- training ---------------------------------------------------------------

@dataclass
class MilResult:
    model: MilModel
    losses: list


def batch_loss(model, pos_x, neg_x, config, training=False, rng=None, backward=False):
    """Mean per-pair total loss for stacked bags; optionally backpropagates."""
    k = len(pos_x)
    x = np.concatenate([pos_x, neg_x], axis=0)
    s = model.scores(x, training=training, rng=rng)
    if config.mode == "attention":
        w = model.weights(x)
    else:
        w = uniform_weights(s)
    ps, ns, pw, nw = s[:k], s[k:], w[:k], w[k:]
    loss = float(total_loss(ps, pw, ns, nw, config.lambda1, config.mode).mean())
    if backward:
        dps, dpw, dns, dnw = total_loss_grad(ps, pw, ns, nw, config.lambda1, config.mode)
        ds = np.concatenate([dps, dns]) / k
        model.scores_backward(ds.astype(s.dtype))
        if config.mode == "attention":
            dw = np.concatenate([dpw, dnw]) / k
            model.weights_backward(dw.astype(w.dtype))
    return loss


def _sample(rng, n, k):
    return rng.choice(n, size=k, replace=n < k)


def train_mil(bags, config=None, seed=0, log_every=500):
    """Train regressor (and attention, in attention mode) on labelled bags.

    Each step samples ``bags_per_side`` positive and negative bags (with
    replacement only when a side has fewer bags), pairs the i-th positive
    with the i-th negative, and takes an Adagrad step on the mean total loss.
    """
    config = config or MilConfig()
    pos = [b for b in bags if b.positive]
    neg = [b for b in bags if not b.positive]
    if not pos or not neg:
        raise ValueError(f"need positive and negative bags, got {len(pos)} and {len(neg)}")
    pos_x = np.stack([b.features for b in pos]).astype(np.float32)
    neg_x = np.stack([b.features for b in neg]).astype(np.float32)
    if pos_x.shape[1:] != neg_x.shape[1:]:
        raise ShapeError(f"bag shapes differ: {pos_x.shape[1:]} vs {neg_x.shape[1:]}")
    model = MilModel(pos_x.shape[-1], config, seed=seed)
    opt = Adagrad(model.layers(), config.schedule)
    rng = np.random.default_rng(seed + 1)
    k = config.bags_per_side
    losses = []
    for step in range(config.schedule.total_steps):
        pi = _sample(rng, len(pos_x), k)
        ni = _sample(rng, len(neg_x), k)
        loss = batch_loss(model, pos_x[pi], neg_x[ni], config, training=True, rng=rng, backward=True)
        opt.step()
        losses.append(loss)
        if log_every and step % log_every == 0:
            log.info("mil step %d loss %.5f", step, loss)
    return MilResult(model, losses)


def save_mil(path, model):
    save_checkpoint(path, model.named_params())


def load_mil(path, config=None):
    named = load_checkpoint(path)
    try:
        d = named["regressor.fc1"].weights.shape[1]
    except KeyError as exc:
        raise FormatError(f"checkpoint {path} has no regressor section") from exc
    model = MilModel(d, config)
    model.load_params(named)
    return model


# -- bag files --------------------------------------------------------------

def write_bag(path, bag):
    write_features(path, [(f"{bag.video_id}:seg{i:03d}", row) for i, row in enumerate(bag.features)])


def read_bag(path, video_id, positive):
    records = read_features(path)
    if not records:
        raise FormatError(f"bag file {path} is empty")
    return Bag(video_id, positive, np.stack([v for _, v in records]))


def write_bag_manifest(path, entries):
    """``entries``: iterable of (video_id, label, relative feature path)."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for vid, label, rel in entries:
            f.write(f"{vid}\t{label}\t{rel}\n")


def read_bag_manifest(path):
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            out.append(tuple(parts))
    return out


def load_bags(manifest_path):
    base = os.path.dirname(os.path.abspath(manifest_path))
    return [
        read_bag(os.path.join(base, rel), vid, label == "anomalous")
        for vid, label, rel in read_bag_manifest(manifest_path)
    ]

"""Layers with hand-written forward and backward passes.

Every layer caches what its backward pass needs during ``forward`` and
fills ``grads`` (same keys as ``params``) during ``backward``. Arrays are
float32 in normal use; the layers follow whatever dtype their parameters
carry, so gradient checks can run them in float64.
"""

from dataclasses import dataclass, field

import numpy as np

from .. import _kernels


class ShapeError(ValueError):
    pass


@dataclass
class LayerParams:
    """Weights, biases and their Adagrad squared-gradient accumulators."""

    weights: np.ndarray
    biases: np.ndarray
    accum_weights: np.ndarray = None
    accum_biases: np.ndarray = None

    def __post_init__(self):
        if self.accum_weights is None:
            self.accum_weights = np.zeros_like(self.weights)
        if self.accum_biases is None:
            self.accum_biases = np.zeros_like(self.biases)
        if self.accum_weights.shape != self.weights.shape:
            raise ShapeError(
                f"accumulator shape {self.accum_weights.shape} != weight shape {self.weights.shape}"
            )
        if self.accum_biases.shape != self.biases.shape:
            raise ShapeError(
                f"accumulator shape {self.accum_biases.shape} != bias shape {self.biases.shape}"
            )

    def arrays(self):
        return {"weights": self.weights, "biases": self.biases}

    def astype(self, dtype):
        return LayerParams(
            self.weights.astype(dtype),
            self.biases.astype(dtype),
            self.accum_weights.astype(dtype),
            self.accum_biases.astype(dtype),
        )

    def copy(self):
        return self.astype(self.weights.dtype)


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def deconv_output_size(size, kernel, stride, padding):
    return (size - 1) * stride - 2 * padding + kernel


class Layer:
    params: LayerParams

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.arrays().items()}


class Conv2D(Layer):
    """2D convolution; weights have shape (C_out, C_in, k, k)."""

    def __init__(self, in_channels, out_channels, kernel=3, stride=1, padding=1,
                 rng=None, params=None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            fan_in = in_channels * kernel * kernel
            fan_out = out_channels * kernel * kernel
            w = glorot_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in, fan_out)
            params = LayerParams(w, np.zeros(out_channels, dtype=np.float32))
        self.params = params
        self.zero_grads()

    def output_shape(self, shape):
        n, c, h, w = shape
        return (n, self.out_channels,
                conv_output_size(h, self.kernel, self.stride, self.padding),
                conv_output_size(w, self.kernel, self.stride, self.padding))

    def forward(self, x):
        return conv2d_forward(x, self.params, self.stride, self.padding, cache=self)

    def backward(self, dout):
        w = self.params.weights
        cout = w.shape[0]
        d2 = dout.transpose(1, 0, 2, 3).reshape(cout, -1)
        self.grads["weights"] = (d2 @ self._cols.T).reshape(w.shape)
        self.grads["biases"] = d2.sum(axis=1)
        dcols = w.reshape(cout, -1).T @ d2
        return _kernels.col2im(dcols, self._in_shape, self.kernel, self.stride, self.padding)


class ConvTranspose2D(Layer):
    """Transposed convolution; weights have shape (C_in, C_out, k, k).

    Shares the weight layout of a :class:`Conv2D` mapping C_out -> C_in, so
    a convolution's weight array used here applies that convolution's adjoint.
    """

    def __init__(self, in_channels, out_channels, kernel=4, stride=2, padding=1,
                 rng=None, params=None):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            fan_in = in_channels * kernel * kernel
            fan_out = out_channels * kernel * kernel
            w = glorot_uniform(rng, (in_channels, out_channels, kernel, kernel), fan_in, fan_out)
            params = LayerParams(w, np.zeros(out_channels, dtype=np.float32))
        self.params = params
        self.zero_grads()

    def output_shape(self, shape):
        n, c, h, w = shape
        return (n, self.out_channels,
                deconv_output_size(h, self.kernel, self.stride, self.padding),
                deconv_output_size(w, self.kernel, self.stride, self.padding))

    def forward(self, x):
        return deconv2d_forward(x, self.params, self.stride, self.padding, cache=self)

    def backward(self, dout):
        w = self.params.weights
        cin = w.shape[0]
        dcols = _kernels.im2col(dout, self.kernel, self.stride, self.padding)
        self.grads["weights"] = (self._rows @ dcols.T).reshape(w.shape)
        self.grads["biases"] = dout.sum(axis=(0, 2, 3))
        n, _, h, wd = self._in_shape
        dx = w.reshape(cin, -1) @ dcols
        return dx.reshape(cin, n, h, wd).transpose(1, 0, 2, 3).copy()


class Dense(Layer):
    """Fully connected layer, ``y = x @ W.T + b`` with W of shape (out, in)."""

    def __init__(self, in_features, out_features, rng=None, params=None):
        self.in_features = in_features
        self.out_features = out_features
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            w = glorot_uniform(rng, (out_features, in_features), in_features, out_features)
            params = LayerParams(w, np.zeros(out_features, dtype=np.float32))
        self.params = params
        self.zero_grads()

    def forward(self, x):
        self._x = x
        return fc_forward(x, self.params)

    def backward(self, dout):
        self.grads["weights"] = dout.T @ self._x
        self.grads["biases"] = dout.sum(axis=0)
        return dout @ self.params.weights


def _check_channels(x, expected, weight_shape):
    if x.ndim != 4 or x.shape[1] != expected:
        raise ShapeError(
            f"input shape {tuple(x.shape)} does not match weight shape {tuple(weight_shape)}"
        )


def conv2d_forward(x, params, stride, padding, cache=None):
    w, b = params.weights, params.biases
    cout, cin, k, _ = w.shape
    _check_channels(x, cin, w.shape)
    n, _, h, wd = x.shape
    oh = conv_output_size(h, k, stride, padding)
    ow = conv_output_size(wd, k, stride, padding)
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"input shape {tuple(x.shape)} too small for weight shape {tuple(w.shape)}")
    cols = _kernels.im2col(x, k, stride, padding)
    out = w.reshape(cout, -1) @ cols + b[:, None]
    if cache is not None:
        cache._cols = cols
        cache._in_shape = x.shape
    return out.reshape(cout, n, oh, ow).transpose(1, 0, 2, 3).copy()


def deconv2d_forward(x, params, stride, padding, cache=None):
    w, b = params.weights, params.biases
    cin, cout, k, _ = w.shape
    _check_channels(x, cin, w.shape)
    n, _, h, wd = x.shape
    oh = deconv_output_size(h, k, stride, padding)
    ow = deconv_output_size(wd, k, stride, padding)
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"input shape {tuple(x.shape)} too small for weight shape {tuple(w.shape)}")
    if conv_output_size(oh, k, stride, padding) != h or conv_output_size(ow, k, stride, padding) != wd:
        raise ShapeError(f"geometry of input {tuple(x.shape)} is not invertible for weight {tuple(w.shape)}")
    rows = x.transpose(1, 0, 2, 3).reshape(cin, -1)
    cols = w.reshape(cin, -1).T @ rows
    out = _kernels.col2im(cols, (n, cout, oh, ow), k, stride, padding)
    out += b.reshape(1, -1, 1, 1)
    if cache is not None:
        cache._rows = rows
        cache._in_shape = x.shape
    return out


def fc_forward(x, params):
    w = params.weights
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"input shape {tuple(x.shape)} does not match weight shape {tuple(w.shape)}")
    return x @ w.T + params.biases


# -- activations ------------------------------------------------------------

def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def activation(x, kind):
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(dout, out, kind):
    """Gradient through an activation given its *output*."""
    if kind == "relu":
        return dout * (out > 0)
    if kind == "tanh":
        return dout * (1 - out * out)
    if kind == "sigmoid":
        return dout * out * (1 - out)
    if kind == "identity":
        return dout
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class Activation:
    kind: str
    _out: np.ndarray = field(default=None, repr=False)

    def forward(self, x):
        self._out = activation(x, self.kind)
        return self._out

    def backward(self, dout):
        return activation_backward(dout, self._out, self.kind)


# -- pooling, dropout, softmax ----------------------------------------------

def global_average_pool(x):
    """Per-channel spatial mean: (N, C, H, W) -> (N, C), or (C, H, W) -> (C,)."""
    return x.mean(axis=(-2, -1))


def global_average_pool_backward(dout, shape):
    h, w = shape[-2], shape[-1]
    return np.broadcast_to((dout / (h * w))[..., None, None], shape).copy()


def dropout(x, rate, training, rng):
    """Inverted dropout. Returns (output, mask); mask is None when inactive."""
    if not training or rate == 0:
        return x, None
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1 - rate)
    return x * mask, mask


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dout, out, axis=-1):
    return out * (dout - (dout * out).sum(axis=axis, keepdims=True))

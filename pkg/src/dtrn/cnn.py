"""Five-layer Maxout CNN: character classifier and sliding-window feature sequencer.

On a 32x32 window the valid convolutions (kernels 9, 9, 9, 8, 1) shrink the
map to 24, 16, 8, 1, 1 pixels.  Maxout is the only nonlinearity.  Applied to a
32xW word image the same layers give a 1x(W-31) map whose 128 layer-4
channels form the feature sequence.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import alphabet
from .numerics import (
    ShapeError,
    _as_batch,
    conv_backward,
    conv_forward,
    im2col,
    log_softmax,
    make_rng,
    maxout,
    maxout_backward,
    random_init,
    sgd_momentum_step,
    softmax,
)

log = logging.getLogger(__name__)

WINDOW = 32
CANONICAL_WIDTHS = (48, 64, 128, 128, 36)
REDUCED_WIDTHS = (6, 8, 16, 16, 36)
MAXOUT_GROUPS = (2, 2, 2, 2, 4)
KERNEL_SIZES = (9, 9, 9, 8, 1)
FEATURE_LAYER = 3  # zero-based index of the layer whose output is the sequence


@dataclass
class CnnLayer:
    kernels: np.ndarray
    bias: np.ndarray
    group: int


@dataclass
class CnnParams:
    layers: list

    @property
    def widths(self):
        return tuple(layer.kernels.shape[0] // layer.group for layer in self.layers)

    @property
    def feature_dim(self):
        return self.widths[FEATURE_LAYER]

    def tensors(self):
        """Name -> array views; in-place updates write through to the layers."""
        out = {}
        for i, layer in enumerate(self.layers, start=1):
            out[f"cnn.layer{i}.kernels"] = layer.kernels
            out[f"cnn.layer{i}.bias"] = layer.bias
        return out

    @classmethod
    def from_tensors(cls, tensors, groups=MAXOUT_GROUPS):
        layers = []
        for i, group in enumerate(groups, start=1):
            try:
                k = np.array(tensors[f"cnn.layer{i}.kernels"], dtype=np.float64)
                b = np.array(tensors[f"cnn.layer{i}.bias"], dtype=np.float64)
            except KeyError as exc:
                raise KeyError(f"checkpoint is missing tensor {exc.args[0]!r}") from None
            if k.ndim != 4 or b.shape != (k.shape[0],) or k.shape[0] % group:
                raise ShapeError(f"layer {i}: inconsistent shapes {k.shape} / {b.shape}")
            layers.append(CnnLayer(k, b, group))
        params = cls(layers)
        params.validate()
        return params

    def validate(self):
        prev = 1
        for i, layer in enumerate(self.layers, start=1):
            if layer.kernels.shape[1] != prev:
                raise ShapeError(f"layer {i} expects {layer.kernels.shape[1]} input channels, previous layer gives {prev}")
            prev = layer.kernels.shape[0] // layer.group
        if prev != alphabet.NUM_CHARS:
            raise ShapeError(f"last layer must emit {alphabet.NUM_CHARS} classes, got {prev}")

    def copy(self):
        return CnnParams([CnnLayer(l.kernels.copy(), l.bias.copy(), l.group) for l in self.layers])


def make_cnn_params(seed_or_rng=0, widths=CANONICAL_WIDTHS, groups=MAXOUT_GROUPS,
                    kernel_sizes=KERNEL_SIZES, zero=False):
    rng = make_rng(seed_or_rng) if isinstance(seed_or_rng, (int, np.integer)) else seed_or_rng
    layers = []
    c_in = 1
    for width, group, k in zip(widths, groups, kernel_sizes):
        shape = (width * group, c_in, k, k)
        kernels = np.zeros(shape) if zero else random_init(shape, rng)
        layers.append(CnnLayer(kernels, np.zeros(width * group), group))
        c_in = width
    params = CnnParams(layers)
    params.validate()
    return params


def forward_layers(params, x, n_layers=None):
    """Run the first ``n_layers`` layers on a batch; returns (output, cache)."""
    cache = []
    h, squeeze = _as_batch(x)
    for layer in params.layers[:n_layers]:
        cols = im2col(h, layer.kernels.shape[2], layer.kernels.shape[3])
        z = conv_forward(h, layer.kernels, layer.bias, cols=cols)
        out, idx = maxout(z, layer.group)
        cache.append((h, cols, idx))
        h = out
    return (h[0] if squeeze else h), cache


def _backward(params, cache, grad):
    grads = {}
    for i in reversed(range(len(cache))):
        layer = params.layers[i]
        h_in, cols, idx = cache[i]
        gz = maxout_backward(grad, idx, layer.group)
        grad, dk, db = conv_backward(h_in, layer.kernels, gz, input_grad=i > 0, cols=cols)
        grads[f"cnn.layer{i + 1}.kernels"] = dk
        grads[f"cnn.layer{i + 1}.bias"] = db
    return grads


def layer_shapes(params, height=WINDOW, width=WINDOW):
    """Per-layer (channels, height, width) for an input of the given size."""
    shapes = []
    h, w = height, width
    for layer in params.layers:
        k = layer.kernels.shape[2]
        h, w = h - k + 1, w - layer.kernels.shape[3] + 1
        shapes.append((layer.kernels.shape[0] // layer.group, h, w))
    return shapes


def cnn_forward_window(params, window):
    """Classify one 1x32x32 window.

    Returns a dict with ``char_logits`` (36, pre-softmax) and ``penultimate``
    (the layer-4 feature vector).
    """
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (1, WINDOW, WINDOW):
        raise ShapeError(f"window must be 1x{WINDOW}x{WINDOW}, got {window.shape}")
    penultimate, _ = forward_layers(params, window, FEATURE_LAYER + 1)
    last = params.layers[FEATURE_LAYER + 1]
    logits, _ = maxout(conv_forward(penultimate, last.kernels, last.bias), last.group)
    return {"char_logits": logits.reshape(-1), "penultimate": penultimate.reshape(-1)}


def extract_sequence(params, image):
    """Un-normalized feature sequence of a 32xW image, shape [W-31, 128].

    ``image`` is a 2-D raster (or a WordImage); row t is the layer-4 output of
    the window whose left edge sits at column t.
    """
    pixels = np.asarray(getattr(image, "pixels", image), dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[0] != WINDOW:
        raise ShapeError(f"image must be {WINDOW} rows high, got shape {pixels.shape}")
    if pixels.shape[1] < WINDOW:
        raise ShapeError(f"image width {pixels.shape[1]} < {WINDOW}; pad it first")
    feats, _ = forward_layers(params, pixels[None], FEATURE_LAYER + 1)
    return np.ascontiguousarray(feats[:, 0, :].T)


def normalize_columns(seq, eps=1e-8):
    """Standardize every feature column (row of ``seq``) to zero mean, unit variance.

    Columns whose standard deviation falls below ``eps`` become all zeros.
    """
    seq = np.asarray(seq, dtype=np.float64)
    centered = seq - seq.mean(axis=1, keepdims=True)
    std = np.sqrt((centered ** 2).mean(axis=1, keepdims=True))
    flat = std[:, 0] < eps
    safe = np.where(flat[:, None], 1.0, std)
    out = centered / safe
    out[flat] = 0.0
    return out


def cnn_loss_and_grads(params, windows, labels):
    """Mean softmax cross-entropy over a batch [N,1,32,32] and its gradients."""
    windows = np.asarray(windows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if windows.ndim != 4 or windows.shape[1:] != (1, WINDOW, WINDOW):
        raise ShapeError(f"window batch must be [N,1,{WINDOW},{WINDOW}], got {windows.shape}")
    if labels.shape != (windows.shape[0],):
        raise ShapeError("one label per window required")
    if labels.size and (labels.min() < 0 or labels.max() >= alphabet.NUM_CHARS):
        raise ValueError(f"labels must lie in [0, {alphabet.NUM_CHARS})")
    out, cache = forward_layers(params, windows)
    logits = out[:, :, 0, 0]
    n = len(labels)
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    grads = _backward(params, cache, grad[:, :, None, None])
    return float(loss), grads


def train_cnn_step(params, windows, labels, opt):
    loss, grads = cnn_loss_and_grads(params, windows, labels)
    sgd_momentum_step(params.tensors(), grads, opt)
    return loss


def classify_char(params, window):
    """Most probable character and its softmax probability (ties -> lower index)."""
    probs = softmax(cnn_forward_window(params, window)["char_logits"])
    k = int(np.argmax(probs))
    return alphabet.CHARS[k], float(probs[k])

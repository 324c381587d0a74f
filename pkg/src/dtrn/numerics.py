"""Dense float64 kernels shared by the CNN, the LSTM and the CTC layer.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Convolutions
are valid-only with stride 1; batched variants take a leading batch axis.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

#: log-domain representation of probability zero
LOG_ZERO = float("-inf")


class ShapeError(ValueError):
    pass


def make_rng(seed):
    """Seeded generator (PCG64); identical seeds give identical streams everywhere."""
    return np.random.Generator(np.random.PCG64(seed))


def fan_in_out(shape):
    shape = tuple(shape)
    if len(shape) == 1:
        return shape[0], shape[0]
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    return shape[1] * receptive, shape[0] * receptive


def random_init(shape, rng, scale_rule="fan_avg"):
    """Uniform draw on [-s, s] with s = sqrt(6 / (fan_in + fan_out)).

    ``scale_rule`` may also be a float, used directly as s.
    """
    shape = tuple(int(n) for n in shape)
    if any(n <= 0 for n in shape):
        raise ShapeError(f"extents must be positive, got {shape}")
    if scale_rule == "fan_avg":
        fan_in, fan_out = fan_in_out(shape)
        s = np.sqrt(6.0 / (fan_in + fan_out))
    else:
        s = float(scale_rule)
    return rng.uniform(-s, s, size=shape)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected [C,H,W] or [N,C,H,W], got shape {x.shape}")


def im2col(x, kh, kw):
    """Patch matrix [N, H', W', C*kh*kw] of a batch [N,C,H,W] (a copy)."""
    n, c, h, w = x.shape
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))  # [N,C,H',W',kh,kw]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, h - kh + 1, w - kw + 1, c * kh * kw)


def conv_forward(x, kernels, bias, cols=None):
    """Valid 2-D cross-correlation, stride 1.

    x: [C_in,H,W] or [N,C_in,H,W]; kernels: [C_out,C_in,kH,kW]; bias: [C_out].
    ``cols`` may carry a precomputed :func:`im2col` of ``x``.
    """
    xb, squeeze = _as_batch(x)
    c_out, c_in, kh, kw = kernels.shape
    if xb.shape[1] != c_in:
        raise ShapeError(f"input has {xb.shape[1]} channels, kernels expect {c_in}")
    if xb.shape[2] < kh or xb.shape[3] < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than input {xb.shape[2]}x{xb.shape[3]}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match {c_out} output channels")
    if cols is None:
        cols = im2col(xb, kh, kw)
    n, ho, wo, _ = cols.shape
    out = cols.reshape(-1, cols.shape[-1]) @ kernels.reshape(c_out, -1).T
    out += bias
    out = np.ascontiguousarray(out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2))
    return out[0] if squeeze else out


def conv_backward(x, kernels, grad_out, input_grad=True, cols=None):
    """Gradients of :func:`conv_forward` w.r.t. input, kernels and bias.

    Returns ``(dx, dkernels, dbias)``; ``dx`` is None when ``input_grad`` is false.
    """
    xb, squeeze = _as_batch(x)
    gb, _ = _as_batch(grad_out)
    c_out, c_in, kh, kw = kernels.shape
    n, _, ho, wo = gb.shape
    if cols is None:
        cols = im2col(xb, kh, kw)
    g2 = gb.transpose(0, 2, 3, 1).reshape(-1, c_out)
    dk = (g2.T @ cols.reshape(-1, cols.shape[-1])).reshape(kernels.shape)
    db = gb.sum(axis=(0, 2, 3))
    dx = None
    if input_grad:
        # channel-last patch gradients keep the scatter-add slices contiguous
        kmat = kernels.transpose(0, 2, 3, 1).reshape(c_out, -1)
        dcols = (g2 @ kmat).reshape(n, ho, wo, kh, kw, c_in)
        dx = np.zeros((n, xb.shape[2], xb.shape[3], c_in))
        for i in range(kh):
            for j in range(kw):
                dx[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
        dx = np.ascontiguousarray(dx.transpose(0, 3, 1, 2))
        if squeeze:
            dx = dx[0]
    return dx, dk, db


def maxout(x, group_size):
    """Max over consecutive groups of ``group_size`` channels.

    Returns ``(out, argmax)`` where argmax holds the winning offset within each
    group; ties resolve to the lowest channel.
    """
    xb, squeeze = _as_batch(x)
    n, c, h, w = xb.shape
    if group_size <= 0 or c % group_size:
        raise ShapeError(f"{c} channels not divisible into groups of {group_size}")
    grouped = xb.reshape(n, c // group_size, group_size, h, w)
    idx = grouped.argmax(axis=2)
    out = np.take_along_axis(grouped, idx[:, :, None], axis=2)[:, :, 0]
    if squeeze:
        return out[0], idx[0]
    return out, idx


def maxout_backward(grad_out, argmax, group_size):
    """Route each output gradient to the input channel that won the max."""
    gb, squeeze = _as_batch(grad_out)
    ib = argmax[None] if argmax.ndim == 3 else argmax
    n, g, h, w = gb.shape
    grad = np.zeros((n, g, group_size, h, w))
    np.put_along_axis(grad, ib[:, :, None], gb[:, :, None], axis=2)
    grad = grad.reshape(n, g * group_size, h, w)
    return grad[0] if squeeze else grad


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def log_sum_exp(values):
    """ln sum(exp(v)); an empty or all-LOG_ZERO input gives LOG_ZERO."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        return LOG_ZERO
    m = v.max()
    if m == LOG_ZERO:
        return LOG_ZERO
    return float(m + np.log(np.exp(v - m).sum()))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class OptimizerState:
    """Momentum buffers, one per parameter tensor, keyed like the parameters."""

    learning_rate: float
    momentum: float
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    @classmethod
    def for_params(cls, params, learning_rate, momentum):
        state = cls(learning_rate, momentum)
        state.velocity = {k: np.zeros_like(v) for k, v in params.items()}
        return state


def sgd_momentum_step(params, grads, state, key=None):
    """v <- momentum*v - lr*g; w <- w + v, in place.

    ``params``/``grads`` are either dicts of tensors (all keys updated) or a
    single tensor pair, in which case ``key`` names its velocity slot.
    """
    if isinstance(params, dict):
        for name, w in params.items():
            sgd_momentum_step(w, grads[name], state, key=name)
        return params
    if params.shape != grads.shape:
        raise ShapeError(f"parameter shape {params.shape} != gradient shape {grads.shape}")
    v = state.velocity.get(key)
    if v is None:
        v = state.velocity[key] = np.zeros_like(params)
    elif v.shape != params.shape:
        raise ShapeError(f"velocity shape {v.shape} != parameter shape {params.shape}")
    v *= state.momentum
    v -= state.learning_rate * grads
    params += v
    return params

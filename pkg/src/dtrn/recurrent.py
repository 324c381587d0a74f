"""Bidirectional LSTM with a softmax output layer.

Packed gate blocks are ordered input, forget, candidate, output.  No
peepholes; both directions start from zero state.  Parameters live in a flat
name -> array dict so the optimizer and the checkpoint see the same names.
"""

from dataclasses import dataclass

import numpy as np

from .alphabet import NUM_CLASSES
from .numerics import ShapeError, make_rng, random_init, sigmoid, softmax

HIDDEN = 128
INPUT = 128
DIRECTIONS = ("fwd", "bwd")
TENSOR_NAMES = tuple(f"rnn.{d}.{n}" for d in DIRECTIONS for n in ("Wx", "Wh", "b")) + ("rnn.out.W", "rnn.out.b")


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden):
        return cls(np.zeros(hidden), np.zeros(hidden))


@dataclass
class LstmParams:
    tensors: dict

    def __post_init__(self):
        missing = [n for n in TENSOR_NAMES if n not in self.tensors]
        if missing:
            raise KeyError(f"missing LSTM tensors: {', '.join(missing)}")
        self.tensors = {n: np.asarray(self.tensors[n], dtype=np.float64) for n in TENSOR_NAMES}
        h4, d = self.tensors["rnn.fwd.Wx"].shape
        h = h4 // 4
        c = self.tensors["rnn.out.W"].shape[0]
        expected = {"Wx": (4 * h, d), "Wh": (4 * h, h), "b": (4 * h,)}
        for direction in DIRECTIONS:
            for name, shape in expected.items():
                got = self.tensors[f"rnn.{direction}.{name}"].shape
                if got != shape:
                    raise ShapeError(f"rnn.{direction}.{name} has shape {got}, expected {shape}")
        if self.tensors["rnn.out.W"].shape != (c, 2 * h) or self.tensors["rnn.out.b"].shape != (c,):
            raise ShapeError("output layer shapes disagree with the hidden size")

    @property
    def hidden(self):
        return self.tensors["rnn.fwd.Wh"].shape[1]

    @property
    def input_size(self):
        return self.tensors["rnn.fwd.Wx"].shape[1]

    @property
    def num_classes(self):
        return self.tensors["rnn.out.W"].shape[0]

    def direction(self, name):
        return {k: self.tensors[f"rnn.{name}.{k}"] for k in ("Wx", "Wh", "b")}

    def copy(self):
        return LstmParams({k: v.copy() for k, v in self.tensors.items()})


def make_lstm_params(seed_or_rng=0, input_size=INPUT, hidden=HIDDEN, num_classes=NUM_CLASSES,
                     zero=False, forget_bias=1.0):
    rng = make_rng(seed_or_rng) if isinstance(seed_or_rng, (int, np.integer)) else seed_or_rng
    draw = (lambda shape: np.zeros(shape)) if zero else (lambda shape: random_init(shape, rng))
    tensors = {}
    for d in DIRECTIONS:
        tensors[f"rnn.{d}.Wx"] = draw((4 * hidden, input_size))
        tensors[f"rnn.{d}.Wh"] = draw((4 * hidden, hidden))
        b = np.zeros(4 * hidden)
        if not zero:
            b[hidden:2 * hidden] = forget_bias
        tensors[f"rnn.{d}.b"] = b
    tensors["rnn.out.W"] = draw((num_classes, 2 * hidden))
    tensors["rnn.out.b"] = np.zeros(num_classes)
    return LstmParams(tensors)


def count_parameters(params):
    tensors = params.tensors if isinstance(params, LstmParams) else params
    return int(sum(np.asarray(t).size for t in tensors.values()))


def lstm_step(direction, state, x):
    """One memory-cell update; ``direction`` holds ``Wx``, ``Wh`` and ``b``."""
    wx, wh, b = direction["Wx"], direction["Wh"], direction["b"]
    hidden = wh.shape[1]
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (wx.shape[1],) or state.h.shape != (hidden,) or state.c.shape != (hidden,):
        raise ShapeError(f"input {x.shape} / state {state.h.shape} do not match weights {wx.shape}")
    z = wx @ x + wh @ state.h + b
    i, f, o = (sigmoid(z[k * hidden:(k + 1) * hidden]) for k in (0, 1, 3))
    g = np.tanh(z[2 * hidden:3 * hidden])
    c = f * state.c + i * g
    return LstmState(o * np.tanh(c), c)


def _run_direction(direction, xs):
    """Unroll one direction over xs [T,D]; returns hidden outputs and the cache."""
    wx, wh, b = direction["Wx"], direction["Wh"], direction["b"]
    n = wh.shape[1]
    steps = len(xs)
    pre = xs @ wx.T + b
    acts = np.empty((steps, 4 * n))
    cs = np.empty((steps + 1, n))
    hs = np.empty((steps + 1, n))
    cs[0] = 0.0
    hs[0] = 0.0
    for t in range(steps):
        z = pre[t] + wh @ hs[t]
        a = acts[t]
        a[:] = sigmoid(z)
        a[2 * n:3 * n] = np.tanh(z[2 * n:3 * n])
        cs[t + 1] = a[n:2 * n] * cs[t] + a[:n] * a[2 * n:3 * n]
        hs[t + 1] = a[3 * n:] * np.tanh(cs[t + 1])
    return hs[1:], (xs, acts, cs, hs)


def _backprop_direction(direction, cache, dhs):
    wh = direction["Wh"]
    xs, acts, cs, hs = cache
    n = wh.shape[1]
    steps = len(xs)
    dz = np.empty((steps, 4 * n))
    dh_next = np.zeros(n)
    dc_next = np.zeros(n)
    for t in reversed(range(steps)):
        i, f, g, o = acts[t, :n], acts[t, n:2 * n], acts[t, 2 * n:3 * n], acts[t, 3 * n:]
        tc = np.tanh(cs[t + 1])
        dh = dhs[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        d = dz[t]
        d[:n] = dc * g * i * (1.0 - i)
        d[n:2 * n] = dc * cs[t] * f * (1.0 - f)
        d[2 * n:3 * n] = dc * i * (1.0 - g * g)
        d[3 * n:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = wh.T @ d
    return {"Wx": dz.T @ xs, "Wh": dz.T @ hs[:-1], "b": dz.sum(axis=0)}


def bilstm_logits(params, seq):
    """Pre-softmax outputs [T, classes] and the cache needed by :func:`rnn_backward`."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or len(seq) == 0:
        raise ValueError(f"feature sequence must be a non-empty [T, D] array, got shape {seq.shape}")
    if seq.shape[1] != params.input_size:
        raise ShapeError(f"feature size {seq.shape[1]} != LSTM input size {params.input_size}")
    h_f, cache_f = _run_direction(params.direction("fwd"), seq)
    h_b, cache_b = _run_direction(params.direction("bwd"), seq[::-1])
    hcat = np.concatenate([h_f, h_b[::-1]], axis=1)
    logits = hcat @ params.tensors["rnn.out.W"].T + params.tensors["rnn.out.b"]
    return logits, (cache_f, cache_b, hcat)


def bilstm_forward(params, seq):
    """Posterior sequence [T, classes]; each row is a softmax distribution."""
    logits, _ = bilstm_logits(params, seq)
    return softmax(logits)


def rnn_backward(params, seq, grad_logits, cache=None):
    """Reverse-mode gradients of all LSTM tensors given d(loss)/d(logits) per row."""
    if cache is None:
        _, cache = bilstm_logits(params, seq)
    cache_f, cache_b, hcat = cache
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    if grad_logits.shape != (len(hcat), params.num_classes):
        raise ShapeError(f"gradient shape {grad_logits.shape} != ({len(hcat)}, {params.num_classes})")
    n = params.hidden
    grads = {
        "rnn.out.W": grad_logits.T @ hcat,
        "rnn.out.b": grad_logits.sum(axis=0),
    }
    dh = grad_logits @ params.tensors["rnn.out.W"]
    for name, cache_d, dh_d in (("fwd", cache_f, dh[:, :n]), ("bwd", cache_b, dh[::-1, n:])):
        for k, v in _backprop_direction(params.direction(name), cache_d, dh_d).items():
            grads[f"rnn.{name}.{k}"] = v
    return grads

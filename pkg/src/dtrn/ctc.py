"""Connectionist temporal classification: collapse map, loss, gradient, decoding.

All lattice recursions run in the log domain over the blank-interleaved
label.  The blank is the last posterior column unless stated otherwise.
Both ``alpha`` and ``beta`` include the emission at their own frame.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import alphabet
from .numerics import LOG_ZERO, log_softmax, sgd_momentum_step
from .recurrent import bilstm_logits, rnn_backward

log = logging.getLogger(__name__)

BLANK_CHAR = "-"


class InfeasibleLabelError(ValueError):
    """The label cannot be emitted by any path of the given length."""


class CtcUnderflowError(FloatingPointError):
    """A feasible label received zero total probability."""


@dataclass
class CtcTables:
    labels: np.ndarray  # blank-interleaved label, length 2K+1
    alpha: np.ndarray  # [T, 2K+1]
    beta: np.ndarray  # [T, 2K+1]
    log_prob: float

    @property
    def backward_log_prob(self):
        return float(np.logaddexp(self.beta[0, 0], self.beta[0, 1]))


def min_frames(label):
    """Shortest path length able to emit ``label``: K plus adjacent repeats."""
    label = list(label)
    return len(label) + sum(a == b for a, b in zip(label, label[1:]))


def collapse_indices(path, blank=alphabet.BLANK):
    out = []
    prev = None
    for k in path:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def collapse_path(path, blank=alphabet.BLANK):
    """Merge runs of equal symbols, then drop blanks.

    A string path uses ``-`` for the blank and keeps its characters; an
    integer path is mapped through the alphabet.
    """
    if isinstance(path, str):
        out = []
        prev = None
        for ch in path:
            if ch != prev and ch != BLANK_CHAR:
                out.append(ch)
            prev = ch
        return "".join(out)
    return alphabet.decode(collapse_indices(path, blank))


def _augment(label, blank):
    lab = np.full(2 * len(label) + 1, blank, dtype=np.int64)
    lab[1::2] = label
    return lab


def ctc_forward_backward(posteriors=None, label=(), blank=None, log_posteriors=None):
    """Forward and backward lattices for ``label`` under per-frame posteriors [T, C].

    Pass ``log_posteriors`` instead of ``posteriors`` to skip the logarithm.
    """
    if log_posteriors is None:
        with np.errstate(divide="ignore"):
            logp = np.log(np.asarray(posteriors, dtype=np.float64))
    else:
        logp = np.asarray(log_posteriors, dtype=np.float64)
    if logp.ndim != 2 or len(logp) == 0:
        raise ValueError(f"posteriors must be a non-empty [T, C] array, got shape {logp.shape}")
    steps, classes = logp.shape
    blank = classes - 1 if blank is None else blank
    label = [int(k) for k in label]
    if not label:
        raise ValueError("label must contain at least one character")
    if any(k < 0 or k >= classes or k == blank for k in label):
        raise ValueError(f"label {label} has indices outside [0, {classes}) or equal to the blank")
    if steps < min_frames(label):
        raise InfeasibleLabelError(
            f"label of length {len(label)} needs at least {min_frames(label)} frames, got {steps}")

    lab = _augment(label, blank)
    size = len(lab)
    emit = logp[:, lab]  # [T, S]
    # s may jump from s-2 when l'[s] is a character different from l'[s-2]
    skip = np.zeros(size, dtype=bool)
    skip[2:] = (lab[2:] != blank) & (lab[2:] != lab[:-2])

    alpha = np.full((steps, size), LOG_ZERO)
    alpha[0, :2] = emit[0, :2]
    for t in range(1, steps):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]

    beta = np.full((steps, size), LOG_ZERO)
    beta[-1, -2:] = emit[-1, -2:]
    for t in range(steps - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + emit[t]

    log_prob = float(np.logaddexp(alpha[-1, -1], alpha[-1, -2]))
    if log_prob == LOG_ZERO:
        raise CtcUnderflowError("feasible label has zero probability under these posteriors")
    return CtcTables(lab, alpha, beta, log_prob)


def ctc_loss(posteriors, label, blank=None):
    """Negative log-likelihood of ``label`` summed over every admissible path."""
    return max(0.0, -ctc_forward_backward(posteriors, label, blank).log_prob)


def state_occupancy(tables, classes, log_posteriors):
    """Per-frame class occupancy: sum over lattice states of alpha*beta/(emission*P)."""
    emit = log_posteriors[:, tables.labels]
    # states with zero emission carry no path mass; avoid -inf - -inf
    dead = np.isneginf(emit)
    log_occ = tables.alpha + tables.beta - np.where(dead, 0.0, emit) - tables.log_prob
    occ = np.exp(np.where(dead, LOG_ZERO, log_occ))
    out = np.zeros((len(occ), classes))
    np.add.at(out.T, tables.labels, occ.T)
    return out


def ctc_gradient(posteriors=None, label=(), blank=None, logits=None):
    """d(ctc_loss)/d(logits) for softmax outputs, shape [T, C].

    Accepts either ``posteriors`` or the raw ``logits``.
    """
    if logits is not None:
        logp = log_softmax(logits)
        probs = np.exp(logp)
    else:
        probs = np.asarray(posteriors, dtype=np.float64)
        with np.errstate(divide="ignore"):
            logp = np.log(probs)
    tables = ctc_forward_backward(label=label, blank=blank, log_posteriors=logp)
    return probs - state_occupancy(tables, probs.shape[1], logp)


def best_path(posteriors):
    return np.argmax(np.asarray(posteriors), axis=1)


def best_path_decode(posteriors, blank=None):
    """Per-frame argmax (ties to the lower index) followed by the collapse map."""
    posteriors = np.asarray(posteriors)
    blank = posteriors.shape[1] - 1 if blank is None else blank
    return alphabet.decode(collapse_indices(best_path(posteriors), blank))


def clip_gradients(grads, bound):
    return {k: np.clip(v, -bound, bound) for k, v in grads.items()}


def rnn_loss_and_grads(params, seq, label):
    """CTC loss of the bidirectional LSTM on one sequence and its parameter gradients."""
    logits, cache = bilstm_logits(params, seq)
    logp = log_softmax(logits)
    tables = ctc_forward_backward(label=label, log_posteriors=logp)
    grad_logits = np.exp(logp) - state_occupancy(tables, logits.shape[1], logp)
    return -tables.log_prob, rnn_backward(params, seq, grad_logits, cache)


def train_rnn_step(params, seq, label, opt, clip=10.0):
    """One per-sequence update; returns the pre-update loss, or None if skipped."""
    try:
        loss, grads = rnn_loss_and_grads(params, seq, label)
    except InfeasibleLabelError as exc:
        log.warning("skipping sample: %s", exc)
        return None
    if clip is not None:
        grads = clip_gradients(grads, clip)
    sgd_momentum_step(params.tensors, grads, opt)
    return loss


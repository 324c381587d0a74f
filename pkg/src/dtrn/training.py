"""Two-stage training loops: character CNN first, then BiLSTM+CTC on frozen features."""

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import alphabet
from .cnn import extract_sequence, forward_layers, make_cnn_params, normalize_columns, train_cnn_step
from .ctc import best_path_decode, min_frames, train_rnn_step
from .data import load_word_image, read_pgm
from .numerics import OptimizerState, log_softmax, make_rng
from .recurrent import bilstm_forward, make_lstm_params

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-4
    momentum: float = 0.9
    epochs: int = 10
    seed: int = 7
    clip: float = 10.0
    eval_every: int = 1
    batch_size: int = 16

    def __post_init__(self):
        if self.learning_rate < 0 or not 0 <= self.momentum < 1:
            raise ValueError("need learning_rate >= 0 and momentum in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and eval_every >= 1 required")


def load_char_crops(entries):
    crops = np.stack([read_pgm(e.image_path) for e in entries])
    if crops.shape[1:] != (32, 32):
        raise ValueError(f"character crops must be 32x32, got {crops.shape[1:]}")
    labels = np.array([alphabet.encode(e.label)[0] for e in entries], dtype=np.int64)
    return crops[:, None], labels


def cnn_metrics(params, crops, labels, batch=64):
    """Mean cross-entropy and accuracy over a crop set (forward only)."""
    losses, hits = [], 0
    for i in range(0, len(crops), batch):
        out, _ = forward_layers(params, crops[i:i + batch])
        logp = log_softmax(out[:, :, 0, 0])
        y = labels[i:i + batch]
        losses.append(-logp[np.arange(len(y)), y])
        hits += int((logp.argmax(axis=1) == y).sum())
    return float(np.concatenate(losses).mean()), hits / len(crops)


def train_cnn(crops, labels, config, heldout=None, params=None):
    """Mini-batch SGD with momentum on softmax cross-entropy; returns (params, history)."""
    rng = make_rng(config.seed)
    params = params or make_cnn_params(rng)
    opt = OptimizerState.for_params(params.tensors(), config.learning_rate, config.momentum)
    history = []

    def report(epoch, train_loss):
        row = {"epoch": epoch}
        if train_loss is not None:
            row["train_loss"] = train_loss
        if heldout is not None:
            row["heldout_loss"], row["heldout_accuracy"] = cnn_metrics(params, *heldout)
        history.append(row)
        log.info("cnn epoch %d " + " ".join(f"{k} {v:.4f}" for k, v in row.items() if k != "epoch"), epoch)

    report(0, None)
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(crops))
        losses = []
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            losses.append(train_cnn_step(params, crops[idx], labels[idx], opt) * len(idx))
        log.info("cnn epoch %d took %.1fs", epoch, time.perf_counter() - start)
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            report(epoch, float(np.sum(losses) / len(crops)))
    return params, history


def sequence_features(cnn, image):
    return normalize_columns(extract_sequence(cnn, image))


def load_sequences(cnn, entries):
    """Normalized feature sequences and encoded labels for manifest entries."""
    seqs, labels = [], []
    for e in entries:
        seqs.append(sequence_features(cnn, load_word_image(e.image_path)))
        labels.append(alphabet.encode(e.label))
    return seqs, labels


def exact_match_rate(lstm, seqs, labels):
    if not seqs:
        return float("nan")
    hits = sum(best_path_decode(bilstm_forward(lstm, s)) == alphabet.decode(l) for s, l in zip(seqs, labels))
    return hits / len(seqs)


def train_rnn(seqs, labels, config, heldout=None, params=None, input_size=None):
    """Per-sequence SGD on the CTC loss; returns (params, history).

    Infeasible samples are dropped up front with a warning.
    """
    rng = make_rng(config.seed)
    if params is None:
        params = make_lstm_params(rng, input_size=input_size or seqs[0].shape[1])
    keep = []
    for i, (s, l) in enumerate(zip(seqs, labels)):
        if len(s) < min_frames(l):
            log.warning("skipping infeasible sample %d: %d frames for %r", i, len(s), alphabet.decode(l))
        else:
            keep.append(i)
    opt = OptimizerState.for_params(params.tensors, config.learning_rate, config.momentum)
    history = []

    def report(epoch, train_loss):
        row = {"epoch": epoch}
        if train_loss is not None:
            row["train_loss"] = train_loss
        if heldout is not None:
            row["heldout_exact_match"] = exact_match_rate(params, *heldout)
        history.append(row)
        log.info("rnn epoch %d " + " ".join(f"{k} {v:.4f}" for k, v in row.items() if k != "epoch"), epoch)

    report(0, None)
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        losses = []
        for i in rng.permutation(keep):
            loss = train_rnn_step(params, seqs[i], labels[i], opt, clip=config.clip)
            if loss is not None:
                losses.append(loss)
        log.info("rnn epoch %d took %.1fs", epoch, time.perf_counter() - start)
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            report(epoch, float(np.mean(losses)) if losses else float("nan"))
    return params, history

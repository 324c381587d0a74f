import logging

import numpy as np
import pytest

from dtrn import alphabet
from dtrn.cnn import REDUCED_WIDTHS, make_cnn_params
from dtrn.ctc import ctc_loss, rnn_loss_and_grads, train_rnn_step
from dtrn.numerics import OptimizerState, make_rng, softmax
from dtrn.recurrent import bilstm_forward, bilstm_logits, make_lstm_params
from dtrn.training import TrainingConfig, train_cnn, train_rnn

from oracles import central_difference, relative_error


def tiny_lstm(seed, input_size=4, hidden=6, classes=4):
    return make_lstm_params(seed, input_size=input_size, hidden=hidden, num_classes=classes)


class TestRnnStep:
    def test_overfit_one_sample(self):
        params = tiny_lstm(0)
        seq = make_rng(1).normal(size=(8, 4))
        label = [0, 2, 2]
        opt = OptimizerState.for_params(params.tensors, 1e-2, 0.9)
        first = train_rnn_step(params, seq, label, opt)
        for _ in range(199):
            last = train_rnn_step(params, seq, label, opt)
        assert last < first
        assert ctc_loss(bilstm_forward(params, seq), label) < 0.5 * first

    def test_zero_learning_rate(self):
        params = tiny_lstm(2)
        before = {k: v.copy() for k, v in params.tensors.items()}
        opt = OptimizerState.for_params(params.tensors, 0.0, 0.9)
        for _ in range(3):
            train_rnn_step(params, make_rng(3).normal(size=(5, 4)), [1], opt)
        for k, v in params.tensors.items():
            assert v.tobytes() == before[k].tobytes()

    def test_infeasible_skipped(self, caplog):
        params = tiny_lstm(4)
        before = {k: v.copy() for k, v in params.tensors.items()}
        opt = OptimizerState.for_params(params.tensors, 0.1, 0.9)
        with caplog.at_level(logging.WARNING):
            assert train_rnn_step(params, np.zeros((2, 4)), [1, 1], opt) is None
        assert "skipping" in caplog.text
        assert all((v == before[k]).all() for k, v in params.tensors.items())

    def test_clipping_bounds_update(self):
        params = tiny_lstm(5)
        before = {k: v.copy() for k, v in params.tensors.items()}
        opt = OptimizerState.for_params(params.tensors, 1.0, 0.0)
        seq = 50.0 * make_rng(6).normal(size=(10, 4))
        train_rnn_step(params, seq, [0, 1, 2, 0], opt, clip=0.5)
        for k, v in params.tensors.items():
            assert np.abs(v - before[k]).max() <= 0.5 + 1e-15

    @pytest.mark.parametrize("seed", range(3))
    def test_end_to_end_gradient(self, seed):
        params = tiny_lstm(10 + seed, hidden=5)
        rng = make_rng(seed)
        seq = rng.normal(size=(6, 4))
        label = [0, 1, 1]
        _, grads = rnn_loss_and_grads(params, seq, label)

        def loss():
            return ctc_loss(softmax(bilstm_logits(params, seq)[0]), label)

        names = list(params.tensors)
        numeric = central_difference(loss, [params.tensors[n] for n in names])
        for name, num in zip(names, numeric):
            for idx, n in num.items():
                assert relative_error(grads[name][idx], n) < 1e-4, (name, idx)


class TestLoops:
    def test_cnn_loss_decreases(self):
        from dtrn.data import SynthConfig, crop_glyph, render_word

        config = SynthConfig()
        rng = make_rng(0)
        crops, labels = [], []
        for word in ["abc", "xyz", "123"]:
            for _ in range(4):
                r = render_word(word, config, rng)
                for j, ch in enumerate(word):
                    crops.append(crop_glyph(r, j))
                    labels.append(alphabet.encode(ch)[0])
        crops = np.array(crops)[:, None]
        labels = np.array(labels)
        params = make_cnn_params(1, widths=REDUCED_WIDTHS)
        cfg = TrainingConfig(learning_rate=2e-3, epochs=5, batch_size=8)
        _, history = train_cnn(crops, labels, cfg, heldout=(crops, labels), params=params)
        assert [h["epoch"] for h in history] == list(range(6))
        assert history[5]["heldout_loss"] < history[0]["heldout_loss"]

    def test_rnn_loop_deterministic(self):
        rng = make_rng(7)
        seqs = [rng.normal(size=(int(rng.integers(5, 9)), 4)) for _ in range(6)]
        labels = [[0], [1, 2], [2, 2], [0, 1], [1], [2]]
        cfg = TrainingConfig(learning_rate=1e-2, epochs=3, seed=11)
        a, ha = train_rnn(seqs, labels, cfg, heldout=(seqs, labels), params=tiny_lstm(0))
        b, hb = train_rnn(seqs, labels, cfg, heldout=(seqs, labels), params=tiny_lstm(0))
        for k in a.tensors:
            assert a.tensors[k].tobytes() == b.tensors[k].tobytes()
        assert ha == hb and len(ha) == 4

    def test_rnn_loop_drops_infeasible(self, caplog):
        seqs = [np.zeros((1, 4)), make_rng(0).normal(size=(4, 4))]
        with caplog.at_level(logging.WARNING):
            train_rnn(seqs, [[1, 1], [1]], TrainingConfig(epochs=1), params=tiny_lstm(0))
        assert "infeasible" in caplog.text

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainingConfig(momentum=1.0)
        cfg = TrainingConfig()
        assert (cfg.learning_rate, cfg.momentum, cfg.clip) == (1e-4, 0.9, 10.0)

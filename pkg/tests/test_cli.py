import subprocess
import sys

import pytest

from dtrn.alphabet import BLANK
from dtrn.checkpoint import load_model, model_tensors, save_checkpoint
from dtrn.cli import main
from dtrn.cnn import make_cnn_params
from dtrn.data import write_pgm
from dtrn.numerics import make_rng
from dtrn.recurrent import make_lstm_params


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    (out / "w.txt").write_text("good\nzz\nbook\n")
    assert main(["synth", "--out", str(out / "c"), "--words", str(out / "w.txt"),
                 "--per-word", "3", "--holdout", "2", "--seed", "3"]) == 0
    return out / "c"


@pytest.fixture
def blank_model(tmp_path):
    """All-zero network whose output bias favours the blank class."""
    lstm = make_lstm_params(zero=True)
    lstm.tensors["rnn.out.b"][BLANK] = 1.0
    path = tmp_path / "blank.ckpt"
    save_checkpoint(path, model_tensors(make_cnn_params(zero=True), lstm))
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestSynth:
    def test_missing_out_is_usage_error(self, capsys):
        code, _, err = run(capsys, "synth")
        assert code == 1 and "--out" in err

    def test_unknown_command(self, capsys):
        assert run(capsys, "frobnicate")[0] == 1

    def test_rerun_identical(self, tmp_path, capsys):
        outs = []
        for name in ("a", "b"):
            code, out, _ = run(capsys, "synth", "--out", tmp_path / name, "--per-word", 1, "--seed", 7)
            assert code == 0
            outs.append(out)
        assert outs[0] == outs[1] and outs[0].startswith("words 40\nchars 200\n")
        assert (tmp_path / "a" / "words.tsv").read_bytes() == (tmp_path / "b" / "words.tsv").read_bytes()

    def test_bad_word_list(self, tmp_path, capsys):
        (tmp_path / "w.txt").write_text("ca$h\n")
        assert run(capsys, "synth", "--out", tmp_path / "o", "--words", tmp_path / "w.txt")[0] == 3

    def test_missing_word_list(self, tmp_path, capsys):
        assert run(capsys, "synth", "--out", tmp_path / "o", "--words", tmp_path / "nope.txt")[0] == 2


class TestTraining:
    def test_cnn_zero_epochs_then_rnn_zero_epochs(self, corpus, tmp_path, capsys):
        code, out, _ = run(capsys, "train-cnn", "--chars", corpus / "chars.tsv", "--out", tmp_path / "c.ckpt",
                           "--epochs", 0)
        assert code == 0 and "cnn epoch 0" in out
        cnn, lstm = load_model(tmp_path / "c.ckpt", need_rnn=False)
        assert lstm is None and cnn.feature_dim == 128
        code, out, _ = run(capsys, "train-rnn", "--cnn", tmp_path / "c.ckpt", "--train", corpus / "words_train.tsv",
                           "--heldout", corpus / "words_holdout.tsv", "--out", tmp_path / "m.ckpt", "--epochs", 0)
        assert code == 0 and "heldout_exact_match" in out
        assert load_model(tmp_path / "m.ckpt")[1].hidden == 128

    def test_cnn_deterministic_bytes(self, corpus, tmp_path, capsys):
        for name in ("a", "b"):
            assert run(capsys, "train-cnn", "--chars", corpus / "chars.tsv", "--out", tmp_path / name,
                       "--epochs", 1, "--lr", 2e-3, "--seed", 5)[0] == 0
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_rnn_missing_cnn(self, corpus, tmp_path, capsys):
        code, _, err = run(capsys, "train-rnn", "--cnn", tmp_path / "none.ckpt", "--train", corpus / "words.tsv",
                           "--out", tmp_path / "m.ckpt")
        assert code == 2 and "none.ckpt" in err

    def test_rnn_rejects_corrupt_checkpoint(self, corpus, tmp_path, capsys):
        (tmp_path / "bad.ckpt").write_bytes(b"NOPE" + bytes(20))
        code, _, err = run(capsys, "train-rnn", "--cnn", tmp_path / "bad.ckpt", "--train", corpus / "words.tsv",
                           "--out", tmp_path / "m.ckpt")
        assert code == 2 and "magic" in err

    def test_alphabet_violation_in_manifest(self, tmp_path, capsys):
        (tmp_path / "m.tsv").write_text("a.pgm\tok\nb.pgm\tno!\n")
        code, _, err = run(capsys, "train-cnn", "--chars", tmp_path / "m.tsv", "--out", tmp_path / "c.ckpt")
        assert code == 2 and ":2:" in err


class TestRecognize:
    def test_blank_model_prints_empty(self, corpus, blank_model, capsys):
        code, out, _ = run(capsys, "recognize", "--model", blank_model, "--image", corpus / "words" / "000000.pgm")
        assert code == 0 and out == '""\n'

    def test_with_lexicon(self, corpus, blank_model, tmp_path, capsys):
        (tmp_path / "lex.txt").write_text("zz\ngood\n")
        code, out, _ = run(capsys, "recognize", "--model", blank_model, "--image", corpus / "words" / "000000.pgm",
                           "--lexicon", tmp_path / "lex.txt")
        assert code == 0 and out == '""\tzz\t2\n'

    def test_unreadable_image(self, blank_model, tmp_path, capsys):
        (tmp_path / "x.pgm").write_bytes(b"P6\n1 1\n255\n\x00")
        assert run(capsys, "recognize", "--model", blank_model, "--image", tmp_path / "x.pgm")[0] == 2

    def test_cnn_only_checkpoint(self, corpus, tmp_path, capsys):
        save_checkpoint(tmp_path / "c.ckpt", model_tensors(make_cnn_params(zero=True)))
        code = run(capsys, "recognize", "--model", tmp_path / "c.ckpt", "--image", corpus / "words" / "000000.pgm")[0]
        assert code == 2


class TestEval:
    def fixture(self, tmp_path, truths, lexicons):
        rng = make_rng(0)
        lines = []
        for i, (truth, lex) in enumerate(zip(truths, lexicons)):
            write_pgm(rng.random((32, 40)), tmp_path / f"{i}.pgm")
            row = [f"{i}.pgm", truth]
            if lex is not None:
                (tmp_path / f"{i}.lex").write_text("\n".join(lex) + "\n")
                row.append(f"{i}.lex")
            lines.append("\t".join(row))
        (tmp_path / "m.tsv").write_text("\n".join(lines) + "\n")
        return tmp_path / "m.tsv"

    def test_perfect(self, blank_model, tmp_path, capsys):
        truths = ["good", "zz", "book", "a1"]
        manifest = self.fixture(tmp_path, truths, [[t] for t in truths])
        code, out, _ = run(capsys, "eval", "--model", blank_model, "--manifest", manifest,
                           "--report", tmp_path / "r.tsv")
        assert code == 0 and out == "accuracy 1.0000\n"
        assert (tmp_path / "r.tsv").read_text().splitlines()[0] == 'good\t\tgood\t4\t1'

    def test_planted_errors_and_workers(self, blank_model, tmp_path, capsys):
        truths = [f"w{i}" for i in range(10)]
        lexicons = [[t] if i % 5 else ["nope"] for i, t in enumerate(truths)]
        manifest = self.fixture(tmp_path, truths, lexicons)
        reports = []
        for workers in (1, 3):
            code, out, _ = run(capsys, "eval", "--model", blank_model, "--manifest", manifest,
                               "--report", tmp_path / f"r{workers}.tsv", "--workers", workers)
            assert code == 0 and out == "accuracy 0.8000\n"
            reports.append((tmp_path / f"r{workers}.tsv").read_bytes())
        assert reports[0] == reports[1]

    def test_per_sample_lexicon_beats_shared(self, blank_model, tmp_path, capsys):
        manifest = self.fixture(tmp_path, ["good", "zz"], [["good"], None])
        (tmp_path / "shared.txt").write_text("zz\n")
        code, out, _ = run(capsys, "eval", "--model", blank_model, "--manifest", manifest,
                           "--lexicon", tmp_path / "shared.txt")
        assert code == 0 and out == "accuracy 1.0000\n"

    def test_missing_image_is_counted_separately(self, blank_model, tmp_path, capsys):
        manifest = self.fixture(tmp_path, ["good", "zz"], [["good"], ["zz"]])
        (tmp_path / "1.pgm").unlink()
        code, out, _ = run(capsys, "eval", "--model", blank_model, "--manifest", manifest,
                           "--report", tmp_path / "r.tsv")
        assert code == 0 and out.endswith("errored 1\naccuracy 1.0000\n")
        assert (tmp_path / "r.tsv").read_text().endswith("errored 1\naccuracy 1.0000\n")

    def test_empty_dataset(self, blank_model, tmp_path, capsys):
        (tmp_path / "m.tsv").write_text("# nothing here\n")
        code, _, err = run(capsys, "eval", "--model", blank_model, "--manifest", tmp_path / "m.tsv")
        assert code == 3 and "empty" in err


def test_module_entry_point(tmp_path):
    done = subprocess.run([sys.executable, "-m", "dtrn", "synth", "--out", str(tmp_path / "o"), "--per-word", "1"],
                          capture_output=True, text=True)
    assert done.returncode == 0 and "words 40" in done.stdout
    assert len(list((tmp_path / "o" / "words").iterdir())) == 40

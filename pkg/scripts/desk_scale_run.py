"""Desk-scale end-to-end run: synthesize, pretrain the CNN, train the RNN, evaluate.

    python3 scripts/desk_scale_run.py --out runs/seed7

Writes the corpus, both checkpoints, the held-out report and summary.json
under --out. Pins BLAS to one thread so the timing reflects a single core.
"""

import argparse
import json
import os
import time

for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

from pathlib import Path  # noqa: E402

from dtrn.cli import main as dtrn  # noqa: E402


def run_pipeline(out, seed=7, per_word=25, holdout=200, cnn_epochs=1, cnn_lr=2e-3, rnn_epochs=15):
    out = Path(out)
    corpus = out / "corpus"
    stages = {}

    def stage(name, argv):
        start = time.perf_counter()
        code = dtrn([str(a) for a in argv])
        stages[name] = round(time.perf_counter() - start, 1)
        if code != 0:
            raise SystemExit(f"{name} failed with exit code {code}")

    start = time.perf_counter()
    stage("synth", ["synth", "--out", corpus, "--per-word", per_word, "--holdout", holdout, "--seed", seed])
    stage("train_cnn", ["train-cnn", "--chars", corpus / "chars.tsv", "--out", out / "cnn.ckpt",
                        "--epochs", cnn_epochs, "--lr", cnn_lr, "--seed", seed])
    stage("train_rnn", ["train-rnn", "--cnn", out / "cnn.ckpt", "--train", corpus / "words_train.tsv",
                        "--heldout", corpus / "words_holdout.tsv", "--out", out / "model.ckpt",
                        "--epochs", rnn_epochs, "--seed", seed])
    stage("eval", ["eval", "--model", out / "model.ckpt", "--manifest", corpus / "words_holdout.tsv",
                   "--report", out / "report.tsv"])
    elapsed = time.perf_counter() - start

    last = (out / "report.tsv").read_text().splitlines()[-1]
    chars = sum(1 for _ in open(corpus / "chars.tsv"))
    summary = {
        "accuracy": float(last.split()[1]),
        "seconds": round(elapsed, 1),
        "stages": stages,
        "rnn_epochs": rnn_epochs,
        "char_crops": chars,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--cnn-epochs", type=int, default=1)
    ap.add_argument("--rnn-epochs", type=int, default=15)
    args = ap.parse_args()
    result = run_pipeline(args.out, seed=args.seed, cnn_epochs=args.cnn_epochs, rnn_epochs=args.rnn_epochs)
    print(json.dumps(result))

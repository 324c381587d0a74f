"""Command-line entry point.

Exit codes: 0 success, 1 usage, 2 I/O or format error, 3 validation error.
"""

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import alphabet
from .checkpoint import CheckpointError, load_model, model_tensors, save_checkpoint
from .ctc import InfeasibleLabelError, best_path_decode
from .data import (
    ManifestError,
    PgmError,
    SynthConfig,
    load_lexicon,
    load_manifest,
    load_word_image,
    synth_generate,
)
from .evaluation import EmptyDatasetError, EvalSample, evaluate, lexicon_decode
from .numerics import ShapeError, make_rng
from .recurrent import bilstm_forward
from .training import (
    TrainingConfig,
    load_char_crops,
    load_sequences,
    sequence_features,
    train_cnn,
    train_rnn,
)

log = logging.getLogger("dtrn")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVALID = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _split(n, fraction, seed):
    """Deterministic (train_idx, heldout_idx) split."""
    order = make_rng(seed).permutation(n)
    k = int(round(n * fraction))
    return np.sort(order[k:]), np.sort(order[:k])


def _training_config(args):
    return TrainingConfig(learning_rate=args.lr, momentum=args.momentum, epochs=args.epochs,
                          seed=args.seed, clip=getattr(args, "clip", 10.0),
                          batch_size=getattr(args, "batch_size", 16))


def cmd_synth(args):
    words = load_lexicon(args.words).words if args.words else None
    kwargs = {} if words is None else {"words": words}
    config = SynthConfig(seed=args.seed, samples_per_word=args.per_word, noise=args.noise,
                         holdout=args.holdout, **kwargs)
    summary = synth_generate(config, args.out)
    print(f"words {summary.words}")
    print(f"chars {summary.chars}")
    widths = np.array(summary.widths)
    print(f"width min {widths.min()} max {widths.max()} mean {widths.mean():.1f}")
    edges = np.arange(widths.min() // 20 * 20, widths.max() + 20, 20)
    counts, _ = np.histogram(widths, bins=edges)
    for lo, c in zip(edges[:-1], counts):
        print(f"width {lo:4d}-{lo + 19:<4d} {c}")
    return EXIT_OK


def cmd_train_cnn(args):
    entries = load_manifest(args.chars)
    crops, labels = load_char_crops(entries)
    heldout = None
    if args.heldout_fraction > 0:
        tr, ho = _split(len(crops), args.heldout_fraction, args.seed)
        heldout = (crops[ho], labels[ho])
        crops, labels = crops[tr], labels[tr]
    cnn, history = train_cnn(crops, labels, _training_config(args), heldout=heldout)
    save_checkpoint(args.out, model_tensors(cnn))
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_train_rnn(args):
    cnn, _ = load_model(args.cnn, need_rnn=False)
    entries = load_manifest(args.train)
    if args.heldout:
        held_entries = load_manifest(args.heldout)
    elif args.heldout_fraction > 0:
        tr, ho = _split(len(entries), args.heldout_fraction, args.seed)
        held_entries = [entries[i] for i in ho]
        entries = [entries[i] for i in tr]
    else:
        held_entries = []
    log.info("extracting features for %d training and %d held-out images", len(entries), len(held_entries))
    seqs, labels = load_sequences(cnn, entries)
    heldout = load_sequences(cnn, held_entries) if held_entries else None
    lstm, history = train_rnn(seqs, labels, _training_config(args), heldout=heldout)
    save_checkpoint(args.out, model_tensors(cnn, lstm))
    log.info("wrote %s", args.out)
    return EXIT_OK


def _show(word):
    return word if word else '""'


def cmd_recognize(args):
    cnn, lstm = load_model(args.model)
    image = load_word_image(args.image)
    raw = best_path_decode(bilstm_forward(lstm, sequence_features(cnn, image)))
    fields = [_show(raw)]
    if args.lexicon:
        word, distance = lexicon_decode(raw, load_lexicon(args.lexicon))
        fields += [_show(word), str(distance)]
    print("\t".join(fields))
    return EXIT_OK


def cmd_eval(args):
    cnn, lstm = load_model(args.model)
    entries = load_manifest(args.manifest)
    shared = load_lexicon(args.lexicon) if args.lexicon else None
    lexicons = {}
    for e in entries:
        if e.lexicon_path is not None and e.lexicon_path not in lexicons:
            lexicons[e.lexicon_path] = load_lexicon(e.lexicon_path)

    def sample(entry):
        lex = lexicons.get(entry.lexicon_path)
        try:
            image = load_word_image(entry.image_path)
        except (OSError, PgmError) as exc:
            log.warning("line %d: cannot read %s: %s", entry.line, entry.image_path, exc)
            return EvalSample(entry.label, None, lex, str(entry.image_path))
        post = bilstm_forward(lstm, sequence_features(cnn, image))
        return EvalSample(entry.label, post, lex, str(entry.image_path))

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            samples = list(pool.map(sample, entries))
    else:
        samples = [sample(e) for e in entries]
    report = evaluate(samples, shared, standard_filter=args.standard_filter, workers=args.workers)
    if report.total == 0:
        raise EmptyDatasetError("no evaluable samples")
    if args.report:
        report.write(args.report)
    if report.errored:
        print(f"errored {len(report.errored)}")
    print(f"accuracy {report.accuracy:.4f}")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="dtrn", description="Word recognition with a maxout CNN, a BiLSTM and CTC.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--words", help="word list, one per line (default: built-in 40 words)")
    s.add_argument("--per-word", type=int, default=25)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--holdout", type=int, default=0, help="word images reserved for evaluation")
    s.add_argument("--seed", type=int, default=7)
    s.set_defaults(func=cmd_synth)

    def training_flags(q, epochs):
        q.add_argument("--out", required=True, help="checkpoint to write")
        q.add_argument("--epochs", type=int, default=epochs)
        q.add_argument("--lr", type=float, default=1e-4)
        q.add_argument("--momentum", type=float, default=0.9)
        q.add_argument("--seed", type=int, default=7)
        q.add_argument("--heldout-fraction", type=float, default=0.1)

    c = sub.add_parser("train-cnn", help="pretrain the character CNN")
    c.add_argument("--chars", required=True, help="character crop manifest")
    c.add_argument("--batch-size", type=int, default=16)
    training_flags(c, 10)
    c.set_defaults(func=cmd_train_cnn)

    r = sub.add_parser("train-rnn", help="train the BiLSTM with CTC on frozen CNN features")
    r.add_argument("--cnn", required=True, help="checkpoint holding the CNN")
    r.add_argument("--train", required=True, help="word image manifest")
    r.add_argument("--heldout", help="held-out word manifest (overrides --heldout-fraction)")
    r.add_argument("--clip", type=float, default=10.0)
    training_flags(r, 30)
    r.set_defaults(func=cmd_train_rnn)

    g = sub.add_parser("recognize", help="read one word image")
    g.add_argument("--model", required=True)
    g.add_argument("--image", required=True)
    g.add_argument("--lexicon")
    g.add_argument("--seed", type=int, default=7, help="accepted for uniformity; recognition is deterministic")
    g.set_defaults(func=cmd_recognize)

    e = sub.add_parser("eval", help="score a word manifest")
    e.add_argument("--model", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--lexicon", help="shared lexicon; per-sample lexicons take precedence")
    e.add_argument("--report", help="TSV report path")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--standard-filter", action="store_true",
                   help="skip ground truths shorter than 3 characters or with non-alphanumerics")
    e.add_argument("--seed", type=int, default=7, help="accepted for uniformity; evaluation is deterministic")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.INFO, stream=sys.stdout, format="%(message)s", force=True)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (OSError, PgmError, ManifestError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ShapeError, alphabet.AlphabetError, InfeasibleLabelError, EmptyDatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

"""Lexicon-constrained correction and accuracy reports."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import alphabet
from .ctc import best_path_decode
from .data import passes_standard_filter


class EmptyDatasetError(ValueError):
    pass


def edit_distance(a, b):
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def lexicon_decode(raw, lexicon):
    """Closest lexicon word to ``raw``; ties go to the earliest entry."""
    words = getattr(lexicon, "words", lexicon)
    if not words:
        raise ValueError("lexicon is empty")
    raw = alphabet.fold(raw)
    best, best_d = None, None
    for w in words:
        d = edit_distance(raw, alphabet.fold(w))
        if best_d is None or d < best_d:
            best, best_d = w, d
            if d == 0:
                break
    return best, best_d


@dataclass
class EvalSample:
    ground_truth: str
    posteriors: np.ndarray = None  # None marks a sample whose input failed to load
    lexicon: object = None
    name: str = ""


@dataclass
class SampleRecord:
    ground_truth: str
    raw_decode: str
    corrected: str
    distance: int

    @property
    def match(self):
        return alphabet.fold(self.corrected) == alphabet.fold(self.ground_truth)


@dataclass
class EvalReport:
    records: list = field(default_factory=list)
    errored: list = field(default_factory=list)
    skipped: int = 0

    @property
    def total(self):
        return len(self.records)

    @property
    def correct(self):
        return sum(r.match for r in self.records)

    @property
    def accuracy(self):
        return self.correct / self.total if self.total else 0.0

    def to_tsv(self):
        lines = [
            f"{r.ground_truth}\t{r.raw_decode}\t{r.corrected}\t{r.distance}\t{int(r.match)}"
            for r in self.records
        ]
        if self.errored:
            lines.append(f"errored {len(self.errored)}")
        lines.append(f"accuracy {self.accuracy:.4f}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.to_tsv(), encoding="utf-8")


def _score(sample, lexicon):
    raw = best_path_decode(sample.posteriors)
    lex = sample.lexicon if sample.lexicon is not None else lexicon
    if lex is not None:
        corrected, distance = lexicon_decode(raw, lex)
    else:
        corrected, distance = raw, 0
    return SampleRecord(alphabet.fold(sample.ground_truth), raw, corrected, distance)


def evaluate(samples, lexicon=None, standard_filter=False, workers=1):
    """Decode, correct and score samples in input order.

    A per-sample lexicon takes precedence over the shared ``lexicon``.
    Samples without posteriors are counted as errored and left out of the total.
    """
    samples = list(samples)
    if not samples:
        raise EmptyDatasetError("dataset is empty")
    report = EvalReport()
    kept = []
    for s in samples:
        if s.posteriors is None:
            report.errored.append(s.name or s.ground_truth)
        elif standard_filter and not passes_standard_filter(s.ground_truth):
            report.skipped += 1
        else:
            kept.append(s)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            report.records = list(pool.map(lambda s: _score(s, lexicon), kept))
    else:
        report.records = [_score(s, lexicon) for s in kept]
    return report

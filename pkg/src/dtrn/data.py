"""Image ingestion, manifests, lexicons and the synthetic word-image generator."""

import logging
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import alphabet
from .ctc import min_frames
from .numerics import make_rng

log = logging.getLogger(__name__)

HEIGHT = 32


class PgmError(ValueError):
    pass


class PgmMagicError(PgmError):
    pass


class PgmHeaderError(PgmError):
    pass


class PgmTruncatedError(PgmError):
    pass


class ManifestError(ValueError):
    pass


# --- PGM ---------------------------------------------------------------------

_WS = b" \t\r\n\v\f"


def _header_tokens(buf, count, start):
    """Read ``count`` whitespace-separated tokens, skipping '#' comments."""
    tokens = []
    pos = start
    while len(tokens) < count:
        while pos < len(buf) and buf[pos] in _WS:
            pos += 1
        if pos >= len(buf):
            raise PgmHeaderError(f"header ended after {len(tokens)} of {count} fields")
        if buf[pos] == ord("#"):
            while pos < len(buf) and buf[pos] not in b"\r\n":
                pos += 1
            continue
        end = pos
        while end < len(buf) and buf[end] not in _WS and buf[end] != ord("#"):
            end += 1
        tokens.append(buf[pos:end])
        pos = end
    return tokens, pos


def parse_pgm(buf):
    """Decode binary PGM bytes into a float raster scaled to [0, 1]."""
    if buf[:2] != b"P5":
        raise PgmMagicError(f"not a binary PGM: magic {buf[:2]!r}, expected b'P5'")
    tokens, pos = _header_tokens(buf, 3, 2)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise PgmHeaderError(f"non-integer header field in {tokens!r}") from None
    if width <= 0 or height <= 0:
        raise PgmHeaderError(f"bad dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise PgmHeaderError(f"maxval {maxval} unsupported (1..255)")
    if pos >= len(buf) or buf[pos] not in _WS:
        raise PgmHeaderError("missing whitespace after maxval")
    pos += 1
    need = width * height
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise PgmTruncatedError(f"payload has {len(payload)} bytes, expected {need}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return pixels.astype(np.float64) / maxval


def read_pgm(path):
    return parse_pgm(Path(path).read_bytes())


def encode_pgm(raster):
    raster = np.asarray(raster, dtype=np.float64)
    if raster.ndim != 2:
        raise ValueError(f"raster must be 2-D, got shape {raster.shape}")
    if raster.size and (raster.min() < 0.0 or raster.max() > 1.0):
        raise ValueError("raster values must lie in [0, 1]")
    data = np.floor(raster * 255.0 + 0.5).astype(np.uint8)
    h, w = data.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes()


def write_pgm(raster, path):
    Path(path).write_bytes(encode_pgm(raster))


# --- image normalization -------------------------------------------------------

@dataclass
class WordImage:
    pixels: np.ndarray  # [32, W], W >= 32, values in [0, 1]

    @property
    def width(self):
        return self.pixels.shape[1]


def _axis_weights(n_out, n_in):
    """Source indices and weights for pixel-centre linear interpolation."""
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(raster, height, width):
    raster = np.asarray(raster, dtype=np.float64)
    y0, y1, wy = _axis_weights(height, raster.shape[0])
    x0, x1, wx = _axis_weights(width, raster.shape[1])
    rows = raster[y0] * (1 - wy)[:, None] + raster[y1] * wy[:, None]
    return rows[:, x0] * (1 - wx) + rows[:, x1] * wx


def round_half_up(x):
    return int(math.floor(x + 0.5))


def normalize_image(raster):
    """Resample to 32 rows keeping the aspect ratio; pad narrow results to 32 columns."""
    raster = np.asarray(raster, dtype=np.float64)
    if raster.ndim != 2 or raster.shape[0] < 1 or raster.shape[1] < 1:
        raise ValueError(f"image must be a non-empty 2-D raster, got shape {raster.shape}")
    h, w = raster.shape
    new_w = max(1, round_half_up(w * HEIGHT / h))
    if (h, w) == (HEIGHT, new_w):
        out = raster.copy()
    else:
        out = resize_bilinear(raster, HEIGHT, new_w)
    if new_w < HEIGHT:
        pad = np.full((HEIGHT, HEIGHT - new_w), out.mean())
        out = np.concatenate([out, pad], axis=1)
    return WordImage(np.clip(out, 0.0, 1.0))


def load_word_image(path):
    return normalize_image(read_pgm(path))


# --- manifests and lexicons ------------------------------------------------------

@dataclass
class ManifestEntry:
    image_path: Path
    label: str
    lexicon_path: Path = None
    line: int = 0


def load_manifest(path):
    """Parse ``image<TAB>label[<TAB>lexicon]`` lines; paths resolve against the manifest's folder."""
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3):
                raise ManifestError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields, got {len(fields)}")
            label = alphabet.fold(fields[1])
            if not label:
                raise ManifestError(f"{path}:{lineno}: empty label")
            if not alphabet.in_alphabet(label):
                bad = sorted(set(c for c in label if not alphabet.in_alphabet(c)))
                raise ManifestError(f"{path}:{lineno}: label {fields[1]!r} has characters outside the alphabet: {bad}")
            lex = base / fields[2] if len(fields) == 3 and fields[2] else None
            entries.append(ManifestEntry(base / fields[0], label, lex, lineno))
    return entries


def write_manifest(entries, path, base=None):
    path = Path(path)
    base = Path(base) if base is not None else path.parent
    lines = []
    for e in entries:
        row = [Path(e.image_path).relative_to(base).as_posix(), e.label]
        if e.lexicon_path is not None:
            row.append(Path(e.lexicon_path).relative_to(base).as_posix())
        lines.append("\t".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class Lexicon:
    words: list
    name: str = ""

    def __post_init__(self):
        seen = {}
        for w in self.words:
            seen.setdefault(alphabet.fold(w), None)
        self.words = list(seen)

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return alphabet.fold(word) in self.words


def load_lexicon(path):
    path = Path(path)
    words = [w.strip() for w in path.read_text(encoding="utf-8").splitlines()]
    return Lexicon([w for w in words if w and not w.startswith("#")], name=path.name)


def default_words():
    text = resources.files("dtrn").joinpath("words.txt").read_text(encoding="utf-8")
    return [w for w in text.split() if w]


# --- glyphs and synthesis --------------------------------------------------------

GLYPH_W, GLYPH_H = 16, 24


def load_glyphs():
    """Built-in 16x24 bitmaps, one per alphabet member, as float {0,1} arrays."""
    text = resources.files("dtrn").joinpath("glyphs.txt").read_text(encoding="ascii")
    glyphs = {}
    current = None
    for line in text.splitlines():
        if line.startswith("#") or not line:
            continue
        if line.startswith("@"):
            current = line[1:]
            glyphs[current] = []
        else:
            glyphs[current].append([ch == "#" for ch in line])
    out = {c: np.array(rows, dtype=np.float64) for c, rows in glyphs.items()}
    if sorted(out) != sorted(alphabet.CHARS) or any(g.shape != (GLYPH_H, GLYPH_W) for g in out.values()):
        raise RuntimeError("glyph table is corrupt")
    return out


@dataclass
class SynthConfig:
    seed: int = 7
    words: list = field(default_factory=default_words)
    samples_per_word: int = 25
    noise: float = 0.05
    contrast: tuple = (0.4, 0.9)
    jitter: int = 1
    spacing: tuple = (0, 3)
    margin: int = 8
    glyph_height: int = 28
    holdout: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise <= 0.3:
            raise ValueError("noise amplitude must lie in [0, 0.3]")
        if not 0.0 < self.contrast[0] <= self.contrast[1] <= 1.0:
            raise ValueError("contrast range must satisfy 0 < lo <= hi <= 1")
        if self.spacing[0] > self.spacing[1] or self.jitter < 0 or self.margin < 0:
            raise ValueError("bad spacing/jitter/margin")
        if not 1 <= self.glyph_height <= HEIGHT:
            raise ValueError(f"glyph height must lie in [1, {HEIGHT}]")

    @property
    def glyph_width(self):
        return round_half_up(GLYPH_W * self.glyph_height / GLYPH_H)


@dataclass
class Rendering:
    pixels: np.ndarray
    word: str
    glyph_boxes: list  # (x0, width) per glyph
    background: float


def render_word(word, config, rng, glyphs=None):
    """Rasterize ``word`` as dark glyphs on a light background, 32 rows high."""
    glyphs = glyphs or _scaled_glyphs(config)
    word = alphabet.fold(word)
    alphabet.encode(word)
    gw, gh = config.glyph_width, config.glyph_height
    k = len(word)
    gaps = rng.integers(config.spacing[0], config.spacing[1] + 1, size=max(k - 1, 0))
    width = 2 * config.margin + k * gw + int(gaps.sum())
    jitter = rng.integers(-config.jitter, config.jitter + 1, size=k)
    top = (HEIGHT - gh) // 2
    ink = np.zeros((HEIGHT, width))
    boxes = []
    x = config.margin
    for i, ch in enumerate(word):
        x0 = int(np.clip(x + jitter[i], 0, width - gw))
        region = ink[top:top + gh, x0:x0 + gw]
        np.maximum(region, glyphs[ch], out=region)
        boxes.append((x0, gw))
        x += gw + (int(gaps[i]) if i < k - 1 else 0)
    contrast = rng.uniform(*config.contrast)
    bg = rng.uniform(contrast, 1.0)
    fg = bg - contrast
    pixels = bg + (fg - bg) * ink
    if config.noise > 0:
        pixels = pixels + rng.normal(0.0, config.noise, size=pixels.shape)
    return Rendering(np.clip(pixels, 0.0, 1.0), word, boxes, bg)


def _scaled_glyphs(config):
    return {c: np.clip(resize_bilinear(g, config.glyph_height, config.glyph_width), 0.0, 1.0)
            for c, g in load_glyphs().items()}


def crop_glyph(rendering, index):
    """32x32 window centred on glyph ``index``; off-image columns take the background level."""
    x0, gw = rendering.glyph_boxes[index]
    left = round_half_up(x0 + gw / 2.0 - HEIGHT / 2.0)
    pixels = rendering.pixels
    out = np.full((HEIGHT, HEIGHT), rendering.background)
    lo, hi = max(left, 0), min(left + HEIGHT, pixels.shape[1])
    out[:, lo - left:hi - left] = pixels[:, lo:hi]
    return out


@dataclass
class SynthSummary:
    words: int
    chars: int
    widths: list


def synth_generate(config, out_dir):
    """Render the configured corpus into ``out_dir`` and write its manifests.

    Layout: words/NNNNNN.pgm, chars/NNNNNN.pgm, words.tsv, chars.tsv and
    lexicon.txt; with ``holdout`` > 0 also words_train.tsv / words_holdout.tsv,
    and character crops come from the training words only.
    """
    words = [alphabet.fold(w) for w in config.words]
    if not words:
        raise ValueError("word list is empty")
    for w in words:
        alphabet.encode(w)
    out = Path(out_dir)
    (out / "words").mkdir(parents=True, exist_ok=True)
    (out / "chars").mkdir(parents=True, exist_ok=True)
    lexicon = Lexicon(words, name="lexicon.txt")
    (out / "lexicon.txt").write_text("\n".join(lexicon.words) + "\n", encoding="utf-8")

    rng = make_rng(config.seed)
    glyphs = _scaled_glyphs(config)
    order = [w for w in words for _ in range(config.samples_per_word)]
    n = len(order)
    if config.holdout > n:
        raise ValueError(f"holdout {config.holdout} exceeds corpus size {n}")
    held = set(rng.permutation(n)[:config.holdout].tolist()) if config.holdout else set()

    word_entries, char_entries = [], []
    train_entries, held_entries = [], []
    widths = []
    for i, word in enumerate(order):
        r = render_word(word, config, rng, glyphs)
        t = r.pixels.shape[1] - (HEIGHT - 1)
        if t < min_frames(alphabet.encode(word)):
            raise ValueError(f"rendering of {word!r} is too narrow for CTC ({t} frames)")
        path = out / "words" / f"{i:06d}.pgm"
        write_pgm(r.pixels, path)
        widths.append(r.pixels.shape[1])
        entry = ManifestEntry(path, word, out / "lexicon.txt")
        word_entries.append(entry)
        (held_entries if i in held else train_entries).append(entry)
        if i in held:
            continue
        for j, ch in enumerate(word):
            cpath = out / "chars" / f"{len(char_entries):06d}.pgm"
            write_pgm(crop_glyph(r, j), cpath)
            char_entries.append(ManifestEntry(cpath, ch))
    write_manifest(word_entries, out / "words.tsv")
    write_manifest(char_entries, out / "chars.tsv")
    if config.holdout:
        write_manifest(train_entries, out / "words_train.tsv")
        write_manifest(held_entries, out / "words_holdout.tsv")
    return SynthSummary(len(word_entries), len(char_entries), widths)


_SAFE = re.compile(r"^[0-9a-z]+$")


def passes_standard_filter(word):
    """Protocol filter: at least 3 characters, alphanumeric only."""
    return len(word) >= 3 and bool(_SAFE.match(alphabet.fold(word)))

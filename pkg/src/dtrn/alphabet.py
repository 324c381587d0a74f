"""36-class case-insensitive character set plus the CTC blank."""

CHARS = "0123456789abcdefghijklmnopqrstuvwxyz"
NUM_CHARS = len(CHARS)
BLANK = NUM_CHARS
NUM_CLASSES = NUM_CHARS + 1

_INDEX = {c: i for i, c in enumerate(CHARS)}


class AlphabetError(ValueError):
    pass


def fold(text):
    return text.lower()


def in_alphabet(text):
    return all(c in _INDEX for c in fold(text))


def encode(text):
    """Map a string to class indices, folding case first."""
    out = []
    for pos, c in enumerate(fold(text)):
        try:
            out.append(_INDEX[c])
        except KeyError:
            raise AlphabetError(f"character {c!r} at position {pos} of {text!r} is not in the alphabet") from None
    return out


def decode(indices):
    return "".join(CHARS[i] for i in indices if i != BLANK)

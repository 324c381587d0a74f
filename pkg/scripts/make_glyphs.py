"""Rasterize the built-in 16x24 glyph table shipped in src/dtrn/glyphs.txt.

One-off generator; the package itself only reads the resulting text file.
Requires Pillow and a DejaVu Sans Mono Bold TrueType file.
"""
import argparse
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

CHARS = "0123456789abcdefghijklmnopqrstuvwxyz"
WIDTH, HEIGHT = 16, 24


def render(font, ch, baseline):
    img = Image.new("L", (WIDTH, HEIGHT), 0)
    draw = ImageDraw.Draw(img)
    left, _, right, _ = draw.textbbox((0, 0), ch, font=font, anchor="ls")
    x = (WIDTH - (right - left)) / 2 - left
    draw.text((x, baseline), ch, fill=255, font=font, anchor="ls")
    return np.asarray(img) >= 128


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--font", default="/usr/share/fonts/truetype/dejavu/DejaVuSansMono-Bold.ttf")
    ap.add_argument("--size", type=int, default=21)
    ap.add_argument("--baseline", type=int, default=18)
    ap.add_argument("--out", default=str(Path(__file__).parents[1] / "src" / "dtrn" / "glyphs.txt"))
    args = ap.parse_args()
    font = ImageFont.truetype(args.font, args.size)
    lines = [f"# {WIDTH}x{HEIGHT} bitmap glyphs, '#' = ink"]
    for ch in CHARS:
        bits = render(font, ch, args.baseline)
        lines.append(f"@{ch}")
        lines.extend("".join("#" if b else "." for b in row) for row in bits)
    Path(args.out).write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Baseline JPEG (4:2:0) encoder and decoder on top of Pillow.

    pillow_jpeg.py encode <input.png> <output.jpg> <quality>
    pillow_jpeg.py decode <input.jpg> <output.png>
"""
import sys

from PIL import Image


def main(argv):
    if len(argv) == 5 and argv[1] == "encode":
        _, _, src, dst, quality = argv
        img = Image.open(src).convert("RGB")
        img.save(dst, "JPEG", quality=int(float(quality)), subsampling="4:2:0", optimize=True)
    elif len(argv) == 4 and argv[1] == "decode":
        _, _, src, dst = argv
        Image.open(src).convert("RGB").save(dst, "PNG")
    else:
        sys.stderr.write(__doc__)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))

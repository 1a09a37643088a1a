#!/usr/bin/env python3
"""Write the scikit-learn 8x8 digits set as a pair of IDX files.

The output is a small real image corpus in the same format as MNIST, used by
the test suite and as the default image support for desk-scale experiments.
"""
import argparse
import struct
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("outdir", type=Path)
    args = ap.parse_args()
    args.outdir.mkdir(parents=True, exist_ok=True)

    digits = load_digits()
    images = np.clip(np.rint(digits.images * (255.0 / 16.0)), 0, 255).astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    n, rows, cols = images.shape

    with open(args.outdir / "digits-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.tobytes())
    with open(args.outdir / "digits-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())


if __name__ == "__main__":
    main()

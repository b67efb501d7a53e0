"""Write the 5000-sample MNIST subset bundled with mlxtend as gzipped IDX files.

The subset holds 500 images per digit taken from the official MNIST training
set. Each class is split into 400 train and 100 test images (first 400 in
file order go to train), so the result is a small stand-in with the same file
layout as the official distribution:

    python scripts/make_mnist_idx.py data/mnist5k
"""

import argparse
import gzip
import struct
from pathlib import Path

import numpy as np

TRAIN_PER_CLASS = 400


def write_idx(path, array):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 2051 if array.ndim == 3 else 2049
    header = struct.pack(">i", magic) + b"".join(struct.pack(">i", s) for s in array.shape)
    # mtime=0 keeps the archive bytes reproducible
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
        f.write(header + array.tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out_dir", type=Path)
    args = parser.parse_args()

    from mlxtend.data import mnist_data

    X, y = mnist_data()
    X = X.astype(np.uint8).reshape(-1, 28, 28)
    y = y.astype(np.uint8)

    train_idx, test_idx = [], []
    for c in range(10):
        rows = np.flatnonzero(y == c)
        train_idx.extend(rows[:TRAIN_PER_CLASS])
        test_idx.extend(rows[TRAIN_PER_CLASS:])
    train_idx, test_idx = np.sort(train_idx), np.sort(test_idx)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_idx(args.out_dir / "train-images-idx3-ubyte.gz", X[train_idx])
    write_idx(args.out_dir / "train-labels-idx1-ubyte.gz", y[train_idx])
    write_idx(args.out_dir / "t10k-images-idx3-ubyte.gz", X[test_idx])
    write_idx(args.out_dir / "t10k-labels-idx1-ubyte.gz", y[test_idx])
    print(f"wrote {len(train_idx)} train / {len(test_idx)} test images to {args.out_dir}")


if __name__ == "__main__":
    main()

"""Write the bundled MNIST subset used by the test-suite as gzipped IDX files.

Source: the 5000-image MNIST sample shipped with mlxtend
(``mlxtend/data/data/mnist_5k.csv.gz``; 784 pixel columns then the label).
Rows are shuffled with a fixed permutation and split 4000 train / 1000 test.

    python scripts/make_mnist_subset.py path/to/mnist_5k.csv.gz tests/data
"""
import gzip
import struct
import sys
from pathlib import Path

import numpy as np


def write_idx(path, array, magic):
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.astype(np.uint8).tobytes())


def main(src, out):
    table = np.loadtxt(src, delimiter=",", dtype=np.int64)
    images = table[:, :-1].reshape(-1, 28, 28)
    labels = table[:, -1]
    order = np.random.default_rng(0).permutation(len(labels))
    images, labels = images[order], labels[order]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for name, sl in (("train", slice(0, 4000)), ("t10k", slice(4000, None))):
        write_idx(out / f"{name}-images-idx3-ubyte.gz", images[sl], 0x00000803)
        write_idx(out / f"{name}-labels-idx1-ubyte.gz", labels[sl], 0x00000801)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])

"""Write a class-balanced MNIST subset as IDX files.

The 5000-digit MNIST sample shipped inside the mlxtend wheel (500 per class)
is pulled with pip, shuffled with a fixed seed and split into train and test
IDX files under ``data/mnist`` (1000 + 1000 by default).

    python scripts/fetch_mnist_subset.py [--out data/mnist] [--n-train 1000] [--n-test 1000]
"""

import argparse
import glob
import gzip
import io
import os
import subprocess
import sys
import tempfile
import zipfile

import numpy as np

from splinet.data import IMAGE_MAGIC, LABEL_MAGIC, MNIST_FILES, write_idx

WHEEL = "mlxtend==0.24.0"
MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_csv(wheel_dir=None):
    with tempfile.TemporaryDirectory() as tmp:
        where = wheel_dir or tmp
        wheels = glob.glob(os.path.join(where, "mlxtend-*.whl"))
        if not wheels:
            subprocess.run(
                [sys.executable, "-m", "pip", "download", WHEEL, "--no-deps", "-q", "-d", where],
                check=True,
            )
            wheels = glob.glob(os.path.join(where, "mlxtend-*.whl"))
        with zipfile.ZipFile(wheels[0]) as z:
            raw = z.read(MEMBER)
    return np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",", dtype=np.int64)


def balanced_split(labels, n_train, n_test, seed):
    rng = np.random.default_rng(seed)
    train, test = [], []
    classes = np.unique(labels)
    for c in classes:
        idx = rng.permutation(np.flatnonzero(labels == c))
        train.append(idx[: n_train // classes.size])
        test.append(idx[n_train // classes.size : n_train // classes.size + n_test // classes.size])
    return rng.permutation(np.concatenate(train)), rng.permutation(np.concatenate(test))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--n-train", type=int, default=1000)
    ap.add_argument("--n-test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--wheel-dir", default=None, help="directory already holding the mlxtend wheel")
    args = ap.parse_args(argv)

    table = fetch_csv(args.wheel_dir)
    pixels, labels = table[:, :-1].astype(np.uint8), table[:, -1]
    tr, te = balanced_split(labels, args.n_train, args.n_test, args.seed)
    os.makedirs(args.out, exist_ok=True)
    for split, idx in (("train", tr), ("test", te)):
        img_name, lab_name = MNIST_FILES[split]
        write_idx(os.path.join(args.out, img_name), pixels[idx].reshape(-1, 28, 28), IMAGE_MAGIC)
        write_idx(os.path.join(args.out, lab_name), labels[idx], LABEL_MAGIC)
    print(f"wrote {tr.size} train and {te.size} test digits to {args.out}")


if __name__ == "__main__":
    main()

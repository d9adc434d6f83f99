"""Supervised-only vs semi-supervised training of a small CNN on the MNIST subset.

Both arms see the same 50 labeled digits per seed; the semi-supervised arm
also uses the remaining 950 training images through the reconstruction and
entropy terms. Writes one row per (seed, alpha) to ``--out``.

    python scripts/semi_supervised_mnist.py [--seeds 0 1 2 3 4] [--epochs 10] [--out results/semi_supervised.csv]
"""

import argparse
import csv
import os
import time

import numpy as np

from splinet.data import load_mnist_dir, split_labeled
from splinet.trainer import Batch, LossWeights, OptimizerConfig, accuracy, train
from splinet.zoo import small_cnn


def run(bundle, seed, alpha, beta, epochs, lr, n_labeled, pooling):
    lab, rest = split_labeled(bundle.train_y, n_labeled, seed)
    net = small_cnn(seed=seed, pooling=pooling)
    start = time.perf_counter()
    _, hist = train(
        net,
        Batch(bundle.train_x[lab], bundle.train_y[lab]),
        Batch(bundle.train_x[rest]),
        LossWeights(alpha, beta),
        OptimizerConfig(lr=lr),
        epochs=epochs,
        seed=seed,
        test=Batch(bundle.test_x, bundle.test_y),
        track_unsupervised=False,
    )
    return {
        "seed": seed,
        "alpha": alpha,
        "beta": beta,
        "test_acc": accuracy(net, bundle.test_x, bundle.test_y),
        "best_epoch_test_acc": max(r["test_acc"] for r in hist),
        "seconds": round(time.perf_counter() - start, 1),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", default="data/mnist")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--lr", type=float, default=0.005)
    ap.add_argument("--labeled", type=int, default=50)
    ap.add_argument("--alpha", type=float, default=0.7)
    ap.add_argument("--beta", type=float, default=0.5)
    ap.add_argument("--pooling", default="maxpool", choices=["maxpool", "meanpool"])
    ap.add_argument("--out", default="results/semi_supervised.csv")
    args = ap.parse_args()

    bundle = load_mnist_dir(args.data_dir, 1000, 1000)
    rows = []
    for seed in args.seeds:
        for alpha in (1.0, args.alpha):
            row = run(bundle, seed, alpha, args.beta, args.epochs, args.lr, args.labeled, args.pooling)
            rows.append(row)
            print(f"seed {seed} alpha {alpha}: test accuracy {row['test_acc']:.3f} ({row['seconds']}s)", flush=True)

    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    gains = [b["test_acc"] - a["test_acc"] for a, b in zip(rows[::2], rows[1::2])]
    print(f"median gain of alpha={args.alpha} over supervised: {100 * np.median(gains):+.1f} points")


if __name__ == "__main__":
    main()

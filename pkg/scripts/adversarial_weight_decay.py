"""Flip rates of twin networks trained with and without weight decay.

Each seed trains two identical MLPs on a two-Gaussian toy task, one with
weight decay, then sweeps the step size of the class-probability gradient
attack on the test set.

    python scripts/adversarial_weight_decay.py [--decay 0.01] [--mode softmax] [--out results/adversarial_wd.csv]
"""

import argparse
import csv
import os

import numpy as np

from splinet.adversarial import attack_sweep
from splinet.data import gen_two_gaussians
from splinet.trainer import Batch, OptimizerConfig, accuracy, train
from splinet.zoo import mlp


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--decay", type=float, default=0.01)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.01, 0.03, 0.1, 0.3, 1.0])
    ap.add_argument("--mode", default="softmax", choices=["softmax", "logit"])
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--out", default="results/adversarial_wd.csv")
    args = ap.parse_args()

    rows = []
    for seed in args.seeds:
        data = gen_two_gaussians(100, 2.0, seed=seed, dim=10)
        for decay in (0.0, args.decay):
            net = mlp(10, [32], 2, seed=seed)
            train(net, Batch(data.train_x, data.train_y), epochs=args.epochs, seed=seed,
                  optimizer=OptimizerConfig(lr=0.01, weight_decay=decay), track_unsupervised=False)
            acc = accuracy(net, data.test_x, data.test_y)
            for r in attack_sweep(net, data.test_x, args.alphas, mode=args.mode):
                rows.append({"seed": seed, "weight_decay": decay, "test_acc": acc, **r})

    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for a in args.alphas:
        med = [np.median([r["flip_rate"] for r in rows if r["alpha"] == a and r["weight_decay"] == d]) for d in (0.0, args.decay)]
        print(f"alpha {a:<6g} median flip rate: plain {med[0]:.3f}  decayed {med[1]:.3f}")


if __name__ == "__main__":
    main()

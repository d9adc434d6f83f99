"""Adversarial perturbations along the gradient of one class probability."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .layers import network_forward, softmax
from .splinex import slope_rows
from .tensor import as_array


@dataclass
class AdversarialResult:
    x: np.ndarray
    x_adv: np.ndarray
    alpha: float
    target: int
    probs: np.ndarray
    probs_adv: np.ndarray
    gradient: np.ndarray
    flipped: bool
    pert_norm: float


def class_gradient(net, x, k, mode="softmax"):
    """Gradient of class ``k``'s softmax output (or its logit) with respect to the input.

    For the softmax output this is the template rows weighted by
    ``p_k (e_k - p)``.
    """
    logits, trace = network_forward(net, x)
    if not 0 <= k < logits.size:
        raise IndexError(f"class {k} out of range for {logits.size} classes")
    if mode == "softmax":
        p = softmax(logits)
        cot = -p[k] * p
        cot[k] += p[k]
    elif mode == "logit":
        cot = np.zeros_like(logits)
        cot[k] = 1.0
    else:
        raise ConfigError(f"unknown gradient mode {mode!r}")
    return slope_rows(net, trace, cot[None])[0]


def gen_adversarial(net, x, k, alpha, mode="softmax", renormalize=False):
    x = as_array(x).reshape(-1)
    g = class_gradient(net, x, k, mode)
    p = softmax(network_forward(net, x)[0])
    # alpha = 0 must return the input untouched (x + 0 * g can flip the sign of zeros)
    x_adv = x.copy() if alpha == 0 else x + alpha * g
    if renormalize:
        n = np.linalg.norm(x_adv)
        if n == 0:
            raise DomainError("perturbed input is zero and cannot be renormalized")
        x_adv = x_adv / n
    p_adv = softmax(network_forward(net, x_adv)[0])
    flipped = bool(np.argmax(p_adv) != np.argmax(p))
    return AdversarialResult(x, x_adv, float(alpha), int(k), p, p_adv, g, flipped, float(abs(alpha) * np.linalg.norm(g)))


def sensitivity(net, x, k):
    """Norm of the gradient of class ``k``'s probability."""
    return float(np.linalg.norm(class_gradient(net, x, k)))


def _runner_up(net, x):
    return int(np.argsort(network_forward(net, x)[0])[-2])


def attack_sweep(net, inputs, alphas, target=None, mode="softmax"):
    """Flip rate and mean perturbation norm per step size.

    ``target=None`` pushes each input toward its current runner-up class.
    """
    inputs = [as_array(x).reshape(-1) for x in inputs]
    alphas = sorted(float(a) for a in alphas)
    if not inputs or not alphas:
        raise DomainError("attack sweep needs inputs and step sizes")
    targets = [target if target is not None else _runner_up(net, x) for x in inputs]
    rows = []
    for a in alphas:
        res = [gen_adversarial(net, x, k, a, mode) for x, k in zip(inputs, targets)]
        rows.append(
            {
                "alpha": a,
                "flip_rate": float(np.mean([r.flipped for r in res])),
                "mean_pert_norm": float(np.mean([r.pert_norm for r in res])),
            }
        )
    return rows


SWEEP_COLUMNS = ["alpha", "flip_rate", "mean_pert_norm"]


def write_sweep(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([repr(r[c]) for c in SWEEP_COLUMNS])

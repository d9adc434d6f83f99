"""Losses, their gradients with frozen regions, optimizers and the training loop.

The combined objective mixes supervised cross-entropy on labeled samples with
two unsupervised terms on every sample: the reconstruction error of
``A[x]^T f(x)`` and the prediction entropy::

    alpha * mean_labeled(CE) + (1 - alpha) * mean_all(beta * R + (1 - beta) * E)
        + sum_l gamma_l * mean_all(R_l)

Gradients of the reconstruction term treat ``A[x]`` as the explicit product
of the frozen per-layer slopes, so they are exact inside each region. They
are computed without forming ``A[x]``: a frozen backward sweep gives
``A^T f``, a tangent pass gives ``A r``, and two more backward sweeps give
the parameter gradients.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .inversion import layer_reconstruction_error, reconstruction_error
from .layers import log_softmax
from .tensor import as_array

UNIT_TOL = 1e-6


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.5
    gamma: dict = field(default_factory=dict)  # layer index -> weight

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        self.gamma = {int(k): float(v) for k, v in self.gamma.items()}
        for k, v in self.gamma.items():
            if v < 0:
                raise ConfigError(f"gamma for layer {k} must be >= 0, got {v}")


@dataclass
class Batch:
    """Unit-norm inputs with labels; label -1 marks an unlabeled sample."""

    inputs: np.ndarray
    labels: np.ndarray = None

    def __post_init__(self):
        self.inputs = as_array(self.inputs)
        n = self.inputs.shape[0]
        if self.labels is None:
            self.labels = np.full(n, -1, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (n,):
            raise ShapeError(f"{n} inputs but labels of shape {self.labels.shape}")
        if n:
            norms = np.linalg.norm(self.inputs.reshape(n, -1), axis=1)
            bad = np.abs(norms - 1.0) > UNIT_TOL
            if bad.any():
                raise DomainError(f"input {int(np.argmax(bad))} has norm {norms[bad][0]}, expected 1")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def labeled_mask(self):
        return self.labels >= 0

    def take(self, idx):
        return Batch(self.inputs[idx], self.labels[idx])

    def unlabeled(self):
        return Batch(self.inputs, None)

    @staticmethod
    def concat(*batches):
        batches = [b for b in batches if b is not None and len(b)]
        return Batch(np.concatenate([b.inputs for b in batches]), np.concatenate([b.labels for b in batches]))


def labeled_batch(inputs, labels):
    labels = np.asarray(labels)
    if np.any(labels < 0):
        raise DomainError("labeled batch has negative labels")
    return Batch(inputs, labels)


def unlabeled_batch(inputs):
    return Batch(inputs, None)


# ---------------------------------------------------------------- scalar losses


def cross_entropy(logits, y):
    z = as_array(logits).reshape(-1)
    if not 0 <= y < z.size:
        raise IndexError(f"label {y} out of range for {z.size} classes")
    return float(-log_softmax(z)[y])


def entropy_loss(probs):
    p = as_array(probs).reshape(-1)
    if np.any(p < 0):
        raise DomainError("probabilities must be nonnegative")
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def reconstruction_loss(net, x):
    return reconstruction_error(net, x)


def per_layer_reconstruction_loss(net, x, layer_index):
    return layer_reconstruction_error(net, x, layer_index)


# ---------------------------------------------------------------- batched objective


def _recon_pass(net, recs, ins, f, ell, coef, grads):
    """Per-sample ``||A_l^T f - z_l||^2`` and, optionally, its gradient pieces.

    ``A_l`` is the frozen slope from the input of layer ``ell`` to the logits.
    Returns ``(values, logit_cotangent, injected_cotangent, tangent_param_grads)``.
    """
    n = f.shape[0]
    z = ins[ell].reshape(n, -1)
    atf, _ = net.backward(ins[ell:], recs, f, start=ell, need_params=False)
    r = atf - z
    values = np.sum(r * r, axis=1)
    if not grads:
        return values, None, None, None
    # A r through the tangent (bias-free) map, keeping its per-layer inputs
    ar, _, tins = net.run(r.reshape(ins[ell].shape), recs, linear=True, start=ell)
    # dependence of A_l itself on the weights, seen from the f side
    _, tangent_grads = net.backward(tins, recs, 2.0 * coef * f, linear=True, start=ell)
    return values, 2.0 * coef * ar, -2.0 * coef * r, tangent_grads


def _evaluate(net, batch, weights, grads=False):
    n = len(batch)
    if n == 0:
        raise DomainError("empty batch")
    X = batch.inputs.reshape((n,) + net.input_shape)
    f, recs, ins = net.run(X)
    logp = log_softmax(f)
    p = np.exp(logp)
    lab = batch.labeled_mask
    y = batch.labels[lab]
    n_lab = int(lab.sum())

    ce = -logp[lab, y]
    ent = -np.sum(p * logp, axis=1)
    a, b = weights.alpha, weights.beta
    w_ce = a / n_lab if n_lab else 0.0
    w_u = (1.0 - a) / n
    c_r = w_u * b

    terms = {"ce": ce, "E": ent}
    loss = w_ce * ce.sum() + w_u * (1.0 - b) * ent.sum()
    gf = np.zeros_like(f) if grads else None
    if grads:
        onehot = np.zeros((n_lab, f.shape[1]))
        onehot[np.arange(n_lab), y] = 1.0
        gf[lab] += w_ce * (p[lab] - onehot)
        gf += w_u * (1.0 - b) * (-p * (logp + ent[:, None]))

    # reconstruction coefficients per layer; layer 0 is the input-level term
    coefs = {0: c_r}
    for ell, g in weights.gamma.items():
        if not 0 <= ell < len(net.layers):
            raise IndexError(f"reconstruction layer {ell} out of range for {len(net.layers)} layers")
        coefs[ell] = coefs.get(ell, 0.0) + g / n
    extra_grads, inject = [], {}
    for ell, c in sorted(coefs.items()):
        if c == 0 and (grads or ell != 0):
            continue
        vals, g_f, g_in, tg = _recon_pass(net, recs, ins, f, ell, c, grads)
        terms["R" if ell == 0 else f"R_{ell}"] = vals
        loss += c * vals.sum()
        if grads:
            gf += g_f
            if ell > 0:
                inject[ell] = g_in
            extra_grads.append(tg)

    if not grads:
        return float(loss), terms, None
    _, per_layer = net.backward(ins, recs, gf, inject=inject)
    total = net.flat_grads(per_layer)
    for tg in extra_grads:
        for i, g in enumerate(net.flat_grads(tg)):
            total[i] = total[i] + g
    return float(loss), terms, total


def combined_loss(net, batch, weights):
    return _evaluate(net, batch, weights)[0]


def loss_terms(net, batch, weights):
    """Per-sample component values: ``ce`` (labeled only), ``E``, ``R`` and ``R_l``."""
    return _evaluate(net, batch, weights)[1]


def loss_gradients(net, batch, weights):
    """Gradients of ``combined_loss`` for every array in ``net.params()``, regions frozen."""
    return _evaluate(net, batch, weights, grads=True)[2]


def finite_difference_check(net, batch, weights, rng, per_array=3, h=1e-5):
    """Worst relative gap between ``loss_gradients`` and central differences.

    Checks ``per_array`` random entries of every parameter array. Only
    meaningful when no input sits within about ``h`` of a region boundary.
    """
    grads = loss_gradients(net, batch, weights)
    worst = 0.0
    for p, g in zip(net.params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in rng.choice(flat.size, min(per_array, flat.size), replace=False):
            old = flat[k]
            flat[k] = old + h
            up = combined_loss(net, batch, weights)
            flat[k] = old - h
            down = combined_loss(net, batch, weights)
            flat[k] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - gflat[k]) / max(abs(fd), abs(gflat[k]), 1e-6))
    return float(worst)


# ---------------------------------------------------------------- optimizers


@dataclass
class OptimizerConfig:
    name: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.name not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.name!r}")
        if not self.lr >= 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be >= 0")


@dataclass
class AdamState:
    m: list = None
    v: list = None
    t: int = 0


def _check_shapes(params, grads):
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameter arrays but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"parameter {i} has shape {np.shape(p)}, gradient {np.shape(g)}")


def _decayed(params, grads, config):
    if config.weight_decay:
        return [g + config.weight_decay * p for p, g in zip(params, grads)]
    return grads


def sgd_step(params, grads, config):
    """In-place ``p -= lr * g``; returns ``params``."""
    _check_shapes(params, grads)
    for p, g in zip(params, _decayed(params, grads, config)):
        p -= config.lr * g
    return params


def adam_step(params, grads, config, state):
    """In-place Adam update with bias correction; ``state`` is advanced."""
    _check_shapes(params, grads)
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1 - b1**state.t, 1 - b2**state.t
    for p, g, m, v in zip(params, _decayed(params, grads, config), state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return params


# ---------------------------------------------------------------- evaluation


def predict_logits(net, X, chunk=512):
    X = as_array(X)
    n = X.shape[0]
    out = [net.run(X[i : i + chunk].reshape((-1,) + net.input_shape))[0] for i in range(0, n, chunk)]
    return np.concatenate(out) if out else np.zeros((0, net.n_classes))


def accuracy(net, data, labels=None):
    if isinstance(data, Batch):
        X, y = data.inputs, data.labels
    else:
        X, y = as_array(data), np.asarray(labels)
    if X.shape[0] == 0:
        raise DomainError("accuracy of an empty dataset is undefined")
    return float(np.mean(np.argmax(predict_logits(net, X), axis=1) == y))


def generalization_gap(train_acc, test_acc):
    return abs(train_acc - test_acc)


def mean_unsupervised_terms(net, X, chunk=256):
    """Mean reconstruction error and mean prediction entropy over ``X``."""
    X = as_array(X)
    r_sum = e_sum = 0.0
    w = LossWeights(alpha=0.0, beta=1.0)
    for i in range(0, X.shape[0], chunk):
        terms = loss_terms(net, Batch(X[i : i + chunk]), w)
        r_sum += terms["R"].sum()
        e_sum += terms["E"].sum()
    return float(r_sum / X.shape[0]), float(e_sum / X.shape[0])


# ---------------------------------------------------------------- training loop


HISTORY_COLUMNS = ["epoch", "loss", "train_acc", "test_acc", "mean_R", "mean_E"]


def train(
    net,
    labeled,
    unlabeled=None,
    weights=None,
    optimizer=None,
    epochs=10,
    seed=0,
    batch_size=32,
    labeled_batch_size=None,
    test=None,
    track_unsupervised=True,
):
    """Train ``net`` in place; returns ``(net, history)``.

    Each epoch walks a seeded shuffle of the full training pool (labeled plus
    unlabeled inputs) in chunks of ``batch_size``. Every step pairs one chunk,
    used without labels, with a labeled minibatch drawn from its own seeded
    stream. With ``alpha == 1`` the chunk carries no signal and is skipped,
    but the number of steps is unchanged, so supervised-only and
    semi-supervised runs with the same seed see identical labeled batches.
    """
    weights = weights or LossWeights()
    optimizer = optimizer or OptimizerConfig()
    n_lab = len(labeled) if labeled is not None else 0
    if n_lab == 0 and weights.alpha > 0:
        raise ConfigError("labeled set is empty but alpha > 0")
    if labeled is not None and n_lab and np.any(labeled.labels < 0):
        raise ConfigError("labeled set contains unlabeled samples")
    pool = Batch.concat(labeled.unlabeled() if n_lab else None, unlabeled.unlabeled() if unlabeled is not None else None)
    n_pool = len(pool)
    lab_bs = min(labeled_batch_size or batch_size, n_lab) if n_lab else 0

    pool_rng = np.random.default_rng([seed, 2])
    lab_rng = np.random.default_rng([seed, 1])
    lab_order, lab_pos = np.zeros(0, dtype=int), 0
    params = net.params()
    state = AdamState()
    history = []

    for epoch in range(1, epochs + 1):
        order = pool_rng.permutation(n_pool)
        losses = []
        for s in range(0, n_pool, batch_size):
            parts = []
            if lab_bs:
                if lab_pos + lab_bs > lab_order.size:
                    lab_order, lab_pos = lab_rng.permutation(n_lab), 0
                parts.append(labeled.take(lab_order[lab_pos : lab_pos + lab_bs]))
                lab_pos += lab_bs
            if weights.alpha < 1.0:
                parts.append(pool.take(order[s : s + batch_size]))
            loss, _, grads = _evaluate(net, Batch.concat(*parts), weights, grads=True)
            losses.append(loss)
            if optimizer.name == "sgd":
                sgd_step(params, grads, optimizer)
            else:
                adam_step(params, grads, optimizer, state)
        row = {
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "train_acc": accuracy(net, labeled) if n_lab else float("nan"),
            "test_acc": accuracy(net, test) if test is not None and len(test) else float("nan"),
            "mean_R": float("nan"),
            "mean_E": float("nan"),
        }
        if track_unsupervised:
            row["mean_R"], row["mean_E"] = mean_unsupervised_terms(net, pool.inputs)
        history.append(row)
    return net, history


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})

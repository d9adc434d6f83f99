import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import grad_check, guarded_inputs, unit_rows
from splinet.data import gen_two_gaussians
from splinet.errors import ConfigError, DomainError, ShapeError
from splinet.layers import Dense, Network, softmax
from splinet.trainer import (
    Batch,
    LossWeights,
    OptimizerConfig,
    AdamState,
    accuracy,
    adam_step,
    combined_loss,
    cross_entropy,
    entropy_loss,
    generalization_gap,
    labeled_batch,
    loss_gradients,
    loss_terms,
    per_layer_reconstruction_loss,
    reconstruction_loss,
    sgd_step,
    train,
    write_history,
)
from splinet.zoo import mlp, random_network


# ---------------------------------------------------------------- scalar losses


def test_ce_values():
    assert cross_entropy([0.0, 0.0], 0) == pytest.approx(math.log(2), abs=1e-15)
    # log1p(e^-10), evaluated independently
    assert cross_entropy([10.0, 0.0], 0) == pytest.approx(4.539889921686464e-05, rel=1e-12)
    with pytest.raises(IndexError):
        cross_entropy([0.0, 0.0], 2)


@given(arrays(np.float64, 4, elements=st.floats(-50, 50)), st.floats(-100, 100), st.integers(0, 3))
def test_ce_shift_invariant(z, c, y):
    assert cross_entropy(z + c, y) == pytest.approx(cross_entropy(z, y), rel=1e-9, abs=1e-9)


def test_entropy_values():
    assert entropy_loss([0.0, 1.0, 0.0]) == 0.0
    assert entropy_loss([0.25] * 4) == pytest.approx(math.log(4), abs=1e-15)
    assert entropy_loss([0.25, 0.75]) == pytest.approx(0.5623351446188083, rel=1e-14)
    with pytest.raises(DomainError):
        entropy_loss([-0.1, 1.1])


def test_reconstruction_loss_analytic(rng):
    x = unit_rows(rng, 1, 3)[0]
    assert reconstruction_loss(Network([Dense(np.eye(3), np.zeros(3))], (3,)), x) == 0.0
    assert reconstruction_loss(Network([Dense(2 * np.eye(3), np.zeros(3))], (3,)), x) == pytest.approx(9.0)


def test_per_layer_identity_head(rng):
    W1 = rng.standard_normal((3, 3))
    net = Network([Dense(W1, np.zeros(3)), Dense(np.eye(3), np.zeros(3))], (3,))
    x = rng.standard_normal(3)
    assert per_layer_reconstruction_loss(net, x, 1) == pytest.approx(0.0, abs=1e-28)
    with pytest.raises(IndexError):
        per_layer_reconstruction_loss(net, x, 2)


# ---------------------------------------------------------------- batches and weights


def test_weights_validated():
    with pytest.raises(ConfigError):
        LossWeights(alpha=1.5)
    with pytest.raises(ConfigError):
        LossWeights(beta=-0.1)
    with pytest.raises(ConfigError):
        LossWeights(gamma={1: -1.0})


def test_batch_rejects_non_unit():
    with pytest.raises(DomainError):
        Batch(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        Batch(np.eye(3), [0, 1])
    with pytest.raises(DomainError):
        labeled_batch(np.eye(3), [0, -1, 1])


# ---------------------------------------------------------------- combined loss


def _batch(rng, n=6, d=4, labels=None):
    return Batch(unit_rows(rng, n, d), labels)


def test_alpha_one_is_mean_ce(rng):
    net = mlp(4, [5], 3, seed=1)
    b = _batch(rng, labels=[0, 1, 2, -1, -1, 0])
    logits = net.run(b.inputs)[0]
    ce = np.mean([cross_entropy(logits[i], y) for i, y in enumerate(b.labels) if y >= 0])
    assert combined_loss(net, b, LossWeights(1.0)) == pytest.approx(ce, rel=1e-13)


def test_alpha_zero_beta_one_is_mean_r(rng):
    net = mlp(4, [5], 3, seed=1)
    b = _batch(rng)
    r = np.mean([reconstruction_loss(net, x) for x in b.inputs])
    assert combined_loss(net, b, LossWeights(0.0, 1.0)) == pytest.approx(r, rel=1e-12)


def test_hand_mixed(rng):
    net = mlp(4, [5], 3, seed=2)
    b = _batch(rng, n=4, labels=[1, -1, 2, -1])
    logits = net.run(b.inputs)[0]
    ce = [cross_entropy(logits[i], y) for i, y in enumerate(b.labels) if y >= 0]
    r = [reconstruction_loss(net, x) for x in b.inputs]
    e = [entropy_loss(softmax(z)) for z in logits]
    expect = 0.5 * np.mean(ce) + 0.5 * np.mean(0.5 * np.array(r) + 0.5 * np.array(e))
    assert combined_loss(net, b, LossWeights(0.5, 0.5)) == pytest.approx(expect, rel=1e-12)


def test_gamma_terms(rng):
    net = mlp(4, [5], 3, seed=2)
    b = _batch(rng, n=3)
    base = combined_loss(net, b, LossWeights(0.0, 1.0))
    assert combined_loss(net, b, LossWeights(0.0, 1.0, {1: 0.0})) == base
    r1 = np.mean([per_layer_reconstruction_loss(net, x, 1) for x in b.inputs])
    assert combined_loss(net, b, LossWeights(0.0, 1.0, {1: 0.3})) == pytest.approx(base + 0.3 * r1, rel=1e-12)


def test_linear_in_components(rng):
    net = mlp(4, [5], 3, seed=3)
    b = _batch(rng, n=5, labels=[0, 1, -1, -1, 2])
    t = loss_terms(net, b, LossWeights(0.5, 0.5))
    for a in (0.0, 0.3, 1.0):
        for be in (0.0, 0.6, 1.0):
            expect = a * t["ce"].mean() + (1 - a) * (be * t["R"].mean() + (1 - be) * t["E"].mean())
            assert combined_loss(net, b, LossWeights(a, be)) == pytest.approx(expect, rel=1e-12, abs=1e-15)


def test_unlabeled_do_not_touch_ce(rng):
    net = mlp(4, [5], 3, seed=3)
    X = unit_rows(rng, 4, 4)
    a = combined_loss(net, Batch(X[:2], [0, 1]), LossWeights(1.0))
    b = combined_loss(net, Batch(X, [0, 1, -1, -1]), LossWeights(1.0))
    assert a == b


def test_entropy_and_r_zeros():
    net = Network([Dense(np.eye(3), np.zeros(3))], (3,))
    x = np.eye(3)
    assert combined_loss(net, Batch(x), LossWeights(0.0, 1.0)) == 0.0
    sharp = Network([Dense(1e4 * np.eye(3), np.zeros(3))], (3,))
    assert combined_loss(sharp, Batch(x), LossWeights(0.0, 0.0)) == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------- gradients


def test_logistic_closed_form(rng):
    W, b = rng.standard_normal((3, 4)), rng.standard_normal(3)
    net = Network([Dense(W.copy(), b.copy())], (4,))
    X = unit_rows(rng, 5, 4)
    y = np.array([0, 2, 1, 1, 0])
    gW, gb = loss_gradients(net, Batch(X, y), LossWeights(1.0))
    P = np.exp(X @ W.T + b)
    P /= P.sum(axis=1, keepdims=True)
    P[np.arange(5), y] -= 1.0
    assert np.allclose(gW, P.T @ X / 5, rtol=0, atol=1e-15)
    assert np.allclose(gb, P.mean(axis=0), rtol=0, atol=1e-15)


def test_saturated_gradient_vanishes():
    net = Network([Dense(20 * np.eye(2), np.zeros(2))], (2,))
    grads = loss_gradients(net, Batch(np.eye(2), [0, 1]), LossWeights(1.0))
    assert max(np.abs(g).max() for g in grads) <= 1e-6


@pytest.mark.parametrize(
    "weights",
    [LossWeights(1.0), LossWeights(0.0, 1.0), LossWeights(0.0, 0.0), LossWeights(0.6, 0.3, {1: 0.5, 2: 0.2})],
    ids=["ce", "recon", "entropy", "mixed"],
)
@pytest.mark.parametrize("seed", range(4))
def test_gradients_match_differences(seed, weights):
    net = random_network(seed, (1, 5, 5), 3)
    rng = np.random.default_rng(seed)
    batch = Batch(guarded_inputs(net, rng, 3), [0, 2, -1])
    assert grad_check(net, batch, weights, rng) <= 1e-4


def test_mlp_gradients_match_differences(rng):
    net = mlp(3, [6, 5], 2, "abs", seed=5)
    batch = Batch(guarded_inputs(net, rng, 4), [0, 1, -1, -1])
    assert grad_check(net, batch, LossWeights(0.4, 0.7, {2: 0.3}), rng, per_array=8) <= 1e-4


# ---------------------------------------------------------------- optimizers


def test_sgd():
    p = [np.array([1.0, 2.0])]
    sgd_step(p, [np.zeros(2)], OptimizerConfig("sgd", lr=0.1))
    assert p[0].tolist() == [1.0, 2.0]
    sgd_step(p, [np.array([1.0, -1.0])], OptimizerConfig("sgd", lr=0.5))
    assert p[0].tolist() == [0.5, 2.5]
    with pytest.raises(ShapeError):
        sgd_step(p, [np.zeros(3)], OptimizerConfig("sgd"))


def test_adam_quadratic_bowl():
    target = np.array([3.0, -2.0, 0.5])
    p = [np.zeros(3)]
    cfg, state = OptimizerConfig("adam", lr=0.1), AdamState()
    for _ in range(200):
        adam_step(p, [2 * (p[0] - target)], cfg, state)
    assert np.max(np.abs(p[0] - target)) <= 1e-3


def test_adam_first_step_is_lr_sign():
    p = [np.zeros(2)]
    adam_step(p, [np.array([5.0, -0.1])], OptimizerConfig(lr=0.01), AdamState())
    assert np.allclose(p[0], [-0.01, 0.01], rtol=1e-6)


def test_optimizer_config_checks():
    with pytest.raises(ConfigError):
        OptimizerConfig("rmsprop")
    with pytest.raises(ConfigError):
        OptimizerConfig(lr=-1.0)


# ---------------------------------------------------------------- metrics


def test_accuracy_and_gap(rng):
    net = Network([Dense(np.eye(2), np.zeros(2))], (2,))
    X = np.eye(2)
    assert accuracy(net, X, [0, 1]) == 1.0
    assert generalization_gap(1.0, 1.0) == 0.0 and generalization_gap(0.5, 0.75) == 0.25
    const = Network([Dense(np.zeros((2, 2)), np.array([1.0, 0.0]))], (2,))
    assert accuracy(const, X, [0, 1]) == 0.5
    with pytest.raises(DomainError):
        accuracy(net, np.zeros((0, 2)), [])


def test_accuracy_matches_argmax_oracle(rng):
    net = random_network(6)
    X = rng.standard_normal((100, net.in_dim))
    y = rng.integers(0, net.n_classes, 100)
    from splinet.layers import network_forward

    oracle = np.mean([np.argmax(network_forward(net, x)[0]) == t for x, t in zip(X, y)])
    assert accuracy(net, X, y) == oracle


# ---------------------------------------------------------------- training loop


def test_supervised_toy_reaches_full_accuracy():
    data = gen_two_gaussians(40, 8.0, seed=0, noise=0.5)
    net = mlp(2, [8], 2, seed=0)
    _, hist = train(net, Batch(data.train_x, data.train_y), epochs=200, seed=0,
                    optimizer=OptimizerConfig(lr=0.01), track_unsupervised=False)
    assert max(row["train_acc"] for row in hist) == 1.0


def test_reconstruction_descends():
    rng = np.random.default_rng(0)
    X = unit_rows(rng, 64, 4)
    net = mlp(4, [], 4, seed=1)
    _, hist = train(net, None, Batch(X), LossWeights(0.0, 1.0), OptimizerConfig("sgd", lr=0.05), epochs=10, seed=0)
    r = [row["mean_R"] for row in hist]
    assert all(b < a for a, b in zip(r, r[1:]))


def test_training_deterministic(rng):
    data = gen_two_gaussians(20, 4.0, seed=1)
    hists = []
    for _ in range(2):
        net = mlp(2, [6], 2, seed=3)
        lab = Batch(data.train_x[::4], data.train_y[::4])
        _, h = train(net, lab, Batch(data.train_x), LossWeights(0.7, 0.5), epochs=3, seed=5, batch_size=8)
        hists.append(h)
    assert repr(hists[0]) == repr(hists[1])


def test_empty_labels_with_alpha():
    with pytest.raises(ConfigError):
        train(mlp(2, [], 2), None, Batch(np.eye(2)), LossWeights(0.5), epochs=1)


def test_history_csv(tmp_path):
    data = gen_two_gaussians(5, 4.0, seed=1)
    _, h = train(mlp(2, [], 2), Batch(data.train_x, data.train_y), epochs=2, seed=0)
    path = tmp_path / "h.csv"
    write_history(path, h)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,loss,train_acc,test_acc,mean_R,mean_E" and len(lines) == 3

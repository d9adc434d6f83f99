import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from splinet.analysis import (
    activation_graph,
    check_global_inference,
    lipschitz_upper,
    region_distance,
    separation,
    softmax_contraction_bound,
    softmax_empirical_ratio,
    template_potential,
)
from splinet.errors import ConfigError, DomainError
from splinet.layers import Dense, Elementwise, MaxPool, Network, network_forward, softmax
from splinet.zoo import build_network, mlp, random_network, small_cnn


def test_dense_bounds():
    net = Network([Dense(2 * np.eye(3), np.zeros(3))], (3,))
    rep = lipschitz_upper(net)
    assert rep.layers[0].spectral_bound == pytest.approx(2.0, abs=1e-10)
    assert rep.layers[0].frobenius_bound == pytest.approx(2 * np.sqrt(3), abs=1e-12)


def test_relu_bounds():
    net = Network([Elementwise("relu", (4,))], (4,))
    rep = lipschitz_upper(net)
    assert rep.layers[0].spectral_bound == 1.0 and rep.layers[0].frobenius_bound == 4.0


def test_maxpool_bounds():
    net = Network([MaxPool([[0, 1], [2, 3]], (4,))], (4,))
    b = lipschitz_upper(net).layers[0]
    assert b.spectral_bound == 1.0 and b.frobenius_bound == pytest.approx(np.sqrt(2))


def test_composed_is_product(rng):
    net = mlp(3, [5], 2, seed=1)
    rep = lipschitz_upper(net)
    assert rep.composed_spectral == pytest.approx(np.prod([b.spectral_bound for b in rep.layers]))
    assert rep.composed_spectral <= rep.composed_frobenius


def test_empirical_below_composed_two_layer():
    net = mlp(4, [6], 3, seed=5)
    rep = lipschitz_upper(net, n_pairs=10_000)
    assert rep.empirical_max_ratio <= rep.composed_spectral + 1e-9


@given(st.integers(0, 5000))
def test_spectral_certifies_random_nets(seed):
    net = random_network(seed)
    rep = lipschitz_upper(net, n_pairs=500, seed=seed)
    assert rep.empirical_max_ratio <= rep.composed_spectral + 1e-9
    assert rep.composed_spectral <= rep.composed_frobenius


def test_softmax_bound_values():
    assert softmax_contraction_bound(2) == 0.25
    assert softmax_contraction_bound(10) == pytest.approx(0.09, abs=1e-15)
    with pytest.raises(DomainError):
        softmax_contraction_bound(1)


@pytest.mark.parametrize("C", [2, 3, 10])
def test_softmax_sampled_below_bound(C):
    assert softmax_empirical_ratio(C, n_pairs=20_000) <= softmax_contraction_bound(C)


def test_softmax_two_class_bound_is_tight_locally():
    assert softmax_empirical_ratio(2, n_pairs=20_000, local=True) <= 0.25
    assert softmax_empirical_ratio(2, n_pairs=20_000, local=True) > 0.24


def test_softmax_bound_fails_locally_beyond_two_classes():
    # two classes splitting the mass give a Jacobian with squared norm 1/4
    x = np.array([0.0, 0.0, -50.0])
    h = np.array([1e-5, -1e-5, 0.0])
    num = np.sum((softmax(x + h) - softmax(x)) ** 2)
    assert num / np.sum(h**2) == pytest.approx(0.25, rel=1e-6)
    assert num / np.sum(h**2) > softmax_contraction_bound(3)


def _masked_net(D=3):
    return Network([Dense(np.eye(D), np.zeros(D)), Elementwise("relu", (D,)), Dense(np.ones((1, D)), np.zeros(1))], (D,))


def test_region_distance_same_input():
    net = _masked_net(4)
    x = np.ones(4)
    assert region_distance(net, x, x, 1) == pytest.approx(2.0)


def test_region_distance_disjoint_and_overlap():
    net = _masked_net(2)
    assert region_distance(net, [1, -1], [-1, 1], 1) == 0.0
    net = _masked_net(3)
    assert region_distance(net, [1, 1, -1], [-1, 1, 1], 1) == 1.0


def test_region_distance_errors():
    net = _masked_net(2)
    with pytest.raises(IndexError):
        region_distance(net, [1, 1], [1, 1], 7)
    with pytest.raises(ConfigError):
        region_distance(net, [1, 1], [1, 1], 0)


def test_region_distance_spectral_flag():
    net = _masked_net(3)
    assert region_distance(net, [1, 1, 1], [1, 1, -1], 1, norm="spectral") == pytest.approx(1.0)


@given(st.lists(st.booleans(), min_size=5, max_size=5), st.lists(st.booleans(), min_size=5, max_size=5))
def test_region_distance_monotone_in_shared_support(mx, my):
    net = _masked_net(5)
    x = np.where(mx, 1.0, -1.0)
    y = np.where(np.array(my) & np.array(mx), 1.0, -1.0)  # mask(y) inside mask(x)
    assert region_distance(net, x, y, 1) <= region_distance(net, x, x, 1)


def test_separation(rng):
    net = mlp(3, [4], 2, seed=1)
    x = rng.standard_normal(3)
    assert separation(net, x, x, 2) == 0.0
    W = net.layers[0].W
    y = rng.standard_normal(3)
    assert separation(net, x, y, 1) == pytest.approx(np.linalg.norm(W @ (x - y)))
    fx, fy = network_forward(net, x)[0], network_forward(net, y)[0]
    assert separation(net, x, y, 3) == pytest.approx(np.linalg.norm(fx - fy))
    with pytest.raises(IndexError):
        separation(net, x, y, 4)


def test_activation_graph_shape(rng):
    net = random_network(3)
    g = activation_graph(net, rng.standard_normal(net.in_dim))
    assert len(g.nodes) == len(net.layers) and len(g.edges) == len(net.layers) - 1
    assert g.is_bipartite()


def test_activation_graph_deterministic(rng):
    net = random_network(8)
    x = rng.standard_normal(net.in_dim)
    assert activation_graph(net, x) == activation_graph(net, x)


def test_activation_graph_differs_at_one_layer():
    # layer 3 is the second ReLU; identity weights let the inputs control it directly
    net = Network(
        [
            Dense(np.eye(2), np.full(2, 10.0)),
            Elementwise("relu", (2,)),
            Dense(np.eye(2), np.full(2, -10.0)),
            Elementwise("relu", (2,)),
            Dense(np.eye(2), np.zeros(2)),
        ],
        (2,),
    )
    g1 = activation_graph(net, [1.0, 1.0])
    g2 = activation_graph(net, [-1.0, 1.0])
    assert g1.differing_nodes(g2) == [3]
    changed = [i for i, (a, b) in enumerate(zip(g1.edges, g2.edges)) if a != b]
    assert changed == [2, 3]


def test_template_potential_orthonormal():
    Q = np.eye(4)[:3]
    net = Network([Dense(Q, np.zeros(3))], (4,))
    rep = template_potential(net, [np.ones(4), np.arange(4.0)])
    assert rep["gram_deviation"] == pytest.approx(0.0, abs=1e-15)


def test_template_potential_duplicates():
    W = np.tile(np.array([[1.0, 0.0, 0.0]]), (3, 1))
    net = Network([Dense(W, np.zeros(3))], (3,))
    rep = template_potential(net, [np.ones(3), np.arange(3.0)])
    assert rep["gram_deviation"] == pytest.approx(np.linalg.norm(np.ones((3, 3)) - np.eye(3)))
    assert rep["gram_offdiag_mean"] == 1.0


def test_template_potential_small_cnn_finite(rng):
    net = small_cnn((1, 28, 28), 10, seed=0)
    X = np.abs(rng.standard_normal((50, 784)))
    rep = template_potential(net, X)
    for v in rep.values():
        assert np.all(np.isfinite(v))


def test_template_potential_needs_two():
    with pytest.raises(DomainError):
        template_potential(mlp(2, [], 2), [np.ones(2)])


def _positive_net(first_negative=False, head_negative=False, nonlin="leaky_relu"):
    rng = np.random.default_rng(0)
    W1 = rng.standard_normal((3, 2)) if first_negative else np.abs(rng.standard_normal((3, 2)))
    W2 = np.abs(rng.standard_normal((2, 3)))
    if head_negative:
        W2[0, 1] = -0.5
    return Network([Dense(W1, np.ones(3)), Elementwise(nonlin, (3,)), Dense(W2, np.ones(2))], (2,))


def test_global_inference_satisfied():
    assert check_global_inference(_positive_net())["satisfied"]


def test_global_inference_first_layer_free():
    assert check_global_inference(_positive_net(first_negative=True))["satisfied"]


def test_global_inference_violations():
    res = check_global_inference(_positive_net(head_negative=True))
    assert not res["satisfied"] and res["violations"][0][0] == "2"
    res = check_global_inference(_positive_net(nonlin="relu"))
    assert [v[0] for v in res["violations"]] == ["1"]


def test_global_inference_needs_dense_head():
    net = build_network((4,), [{"kind": "dense", "out": 4}, {"kind": "maxpool", "regions": [[0, 1], [2, 3]]}])
    res = check_global_inference(net)
    assert any("dense" in reason for _, reason in res["violations"])

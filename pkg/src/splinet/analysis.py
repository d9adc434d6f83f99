"""Stability and geometry diagnostics built on the per-input affine pieces."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .layers import Conv2D, Dense, Elementwise, MaxPool, MeanPool, ResidualBlock, network_forward, softmax
from .splinex import _slope_matrix, extract_affine, layer_affine, layer_bits
from .tensor import as_array, frobenius_norm, spectral_norm


@dataclass
class LayerBound:
    index: int
    kind: str
    spectral_bound: float
    frobenius_bound: float


@dataclass
class LipschitzReport:
    layers: list
    composed_spectral: float
    composed_frobenius: float
    empirical_max_ratio: float = float("nan")

    def to_dict(self):
        return {
            "layers": [vars(b) for b in self.layers],
            "composed_spectral": self.composed_spectral,
            "composed_frobenius": self.composed_frobenius,
            "empirical_max_ratio": self.empirical_max_ratio,
        }


def _layer_bounds(layer):
    if isinstance(layer, Dense):
        return spectral_norm(layer.W), frobenius_norm(layer.W)
    if isinstance(layer, Conv2D):
        C = layer_affine(layer).A
        return spectral_norm(C), frobenius_norm(C)
    if isinstance(layer, Elementwise):
        # largest admissible slope; the loose bound scales it by the output dimension
        s = max(abs(v) for v in layer.admissible())
        return s, s * layer.out_dim
    if isinstance(layer, MaxPool):
        # one-hot rows: the worst piece picks one index from every region containing it
        return float(np.sqrt(layer.multiplicity())), float(np.sqrt(layer.out_dim))
    if isinstance(layer, MeanPool):
        P = layer_affine(layer).A
        return spectral_norm(P), frobenius_norm(P)
    if isinstance(layer, ResidualBlock):
        inner = [_layer_bounds(sub) for sub in layer.inner]
        op = float(np.prod([s for s, _ in inner]))
        frob = float(np.prod([f for _, f in inner]))
        if layer.projection is None:
            op, frob = op + 1.0, frob + float(np.sqrt(layer.in_dim))
        else:
            op += spectral_norm(layer.projection.W)
            frob += frobenius_norm(layer.projection.W)
        return op, frob
    raise TypeError(f"no Lipschitz bound for {layer!r}")


def empirical_ratio(net, n_pairs=10_000, seed=0, scale=1.0, batch=2_000):
    """Largest ``||f(x) - f(y)|| / ||x - y||`` over random pairs.

    Half the pairs are independent Gaussian draws, half are close pairs that
    probe the local slope.
    """
    rng = np.random.default_rng(seed)
    best = 0.0
    done = 0
    while done < n_pairs:
        m = min(batch, n_pairs - done)
        X = rng.standard_normal((m, net.in_dim)) * scale
        Y = rng.standard_normal((m, net.in_dim)) * scale
        close = rng.random(m) < 0.5
        Y[close] = X[close] + 1e-3 * scale * rng.standard_normal((int(close.sum()), net.in_dim))
        fx = net.run(X.reshape((m,) + net.input_shape))[0]
        fy = net.run(Y.reshape((m,) + net.input_shape))[0]
        r = np.linalg.norm(fx - fy, axis=1) / np.linalg.norm(X - Y, axis=1)
        best = max(best, float(r.max()))
        done += m
    return best


def lipschitz_upper(net, n_pairs=0, seed=0, scale=1.0):
    bounds = []
    for i, layer in enumerate(net.layers):
        s, f = _layer_bounds(layer)
        bounds.append(LayerBound(i, layer.kind, float(s), float(f)))
    report = LipschitzReport(
        bounds,
        float(np.prod([b.spectral_bound for b in bounds])),
        float(np.prod([b.frobenius_bound for b in bounds])),
    )
    if n_pairs:
        report.empirical_max_ratio = empirical_ratio(net, n_pairs, seed, scale)
    return report


def softmax_contraction_bound(C):
    """Bound ``(C-1)/C^2`` on the squared Lipschitz ratio of a C-way softmax."""
    if C < 2:
        raise DomainError(f"softmax contraction needs C >= 2, got {C}")
    return (C - 1) / C**2


def softmax_empirical_ratio(C, n_pairs=100_000, seed=0, scale=1.0, local=False):
    """Largest ``||softmax(x) - softmax(y)||^2 / ||x - y||^2`` over sampled pairs.

    By default ``x`` and ``y`` are independent ``N(0, scale^2 I)`` draws.
    ``local=True`` instead perturbs ``x`` by a small random step, which
    probes the Jacobian. The Jacobian's largest squared singular value
    reaches 1/4 for any ``C`` when two classes share the mass, so local
    sampling can exceed ``(C-1)/C^2`` once ``C > 2``.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n_pairs, C)) * scale
    if local:
        Y = X + 1e-4 * rng.standard_normal((n_pairs, C))
    else:
        Y = rng.standard_normal((n_pairs, C)) * scale
    num = np.sum((softmax(X) - softmax(Y)) ** 2, axis=1)
    den = np.sum((X - Y) ** 2, axis=1)
    return float(np.max(num / den))


# ---------------------------------------------------------------- region geometry


def _nonlinear_record(net, x, layer_index):
    if not 0 <= layer_index < len(net.layers):
        raise IndexError(f"layer index {layer_index} out of range for a {len(net.layers)}-layer network")
    layer = net.layers[layer_index]
    if not isinstance(layer, (Elementwise, MaxPool)):
        raise ConfigError(f"layer {layer_index} ({layer.kind}) has no slope selection")
    return layer, network_forward(net, x)[1][layer_index]


def region_distance(net, x1, x2, layer_index, norm="fro"):
    """``||A1^T A2||`` between the slope matrices two inputs select at one layer."""
    layer, r1 = _nonlinear_record(net, x1, layer_index)
    _, r2 = _nonlinear_record(net, x2, layer_index)
    M = _slope_matrix(layer, r1).T @ _slope_matrix(layer, r2)
    if norm == "fro":
        return frobenius_norm(M)
    if norm == "spectral":
        return spectral_norm(M)
    raise ConfigError(f"unknown norm {norm!r}")


def representation(net, x, layer_index):
    """Flattened output of the first ``layer_index`` layers (0 is the input itself)."""
    if not 0 <= layer_index <= len(net.layers):
        raise IndexError(f"representation index {layer_index} out of range [0, {len(net.layers)}]")
    x = as_array(x).reshape((1,) + net.input_shape)
    out, _, _ = net.run(x, stop=layer_index) if layer_index else (x.reshape(1, -1), None, None)
    return out[0]


def separation(net, x1, x2, layer_index):
    return float(np.linalg.norm(representation(net, x1, layer_index) - representation(net, x2, layer_index)))


@dataclass
class ActivationGraph:
    """Active region per layer for one input, linked between consecutive layers."""

    nodes: list
    edges: list = field(default_factory=list)

    def __post_init__(self):
        if not self.edges:
            self.edges = [(self.nodes[i], self.nodes[i + 1]) for i in range(len(self.nodes) - 1)]
        assert self.is_bipartite()

    def is_bipartite(self):
        # color by layer parity; a consecutive-layer edge always crosses colors
        return all((a[0] - b[0]) % 2 == 1 for a, b in self.edges)

    def differing_nodes(self, other):
        return [i for i, (a, b) in enumerate(zip(self.nodes, other.nodes)) if a != b]


def activation_graph(net, x):
    trace = network_forward(net, x)[1]
    nodes = [(i, bytes(np.packbits(layer_bits(layer, rec), bitorder="little"))) for i, (layer, rec) in enumerate(zip(net.layers, trace.records))]
    return ActivationGraph(nodes)


# ---------------------------------------------------------------- template potential


def template_potential(net, inputs):
    """Moment statistics of the induced templates over a set of inputs.

    Lower isotropy ratio and lower Gram deviation mean higher potential. The
    isotropy ratio is taken over the non-null eigenvalues of the sample
    covariance, since with fewer templates than input dimensions the full
    covariance is singular.
    """
    inputs = [as_array(x).reshape(-1) for x in inputs]
    if len(inputs) < 2:
        raise DomainError("template potential needs at least 2 inputs")
    forms = [extract_affine(net, x)[0].A for x in inputs]
    T = np.stack(forms)  # (n, C, D)
    n, C, D = T.shape
    class_norm = np.linalg.norm(T, axis=2).mean(axis=0)
    flat = T.reshape(n * C, D)
    mean_vec = flat.mean(axis=0)
    centered = flat - mean_vec
    # eigenvalues of the D x D covariance via the (small) Gram of the samples
    eig = np.linalg.eigvalsh(centered @ centered.T / max(n * C - 1, 1))
    eig = eig[eig > eig.max() * 1e-10] if eig.max() > 0 else np.array([0.0])
    iso = float(eig.max() / eig.min()) if eig.min() > 0 else float("inf")
    grams = np.einsum("ncd,nkd->nck", T, T)
    dev = grams - np.eye(C)
    offdiag = ~np.eye(C, dtype=bool)
    return {
        "class_template_norm": class_norm.tolist(),
        "mean_vector_norm": float(np.linalg.norm(mean_vec)),
        "isotropy_ratio": iso,
        "covariance_rank": int(eig.size),
        "gram_deviation": float(np.mean(np.linalg.norm(dev, axis=(1, 2)))),
        "gram_offdiag_mean": float(np.mean(np.abs(grams[:, offdiag]))),
    }


# ---------------------------------------------------------------- global inference


def _walk_violations(layers, seen, prefix=""):
    """Check layers in order; ``seen`` is whether a weighted layer came earlier."""
    out = []
    for i, layer in enumerate(layers):
        where = f"{prefix}{i}"
        if isinstance(layer, ResidualBlock):
            inner, seen_after = _walk_violations(layer.inner, seen, f"{where}.inner")
            out += inner
            if layer.projection is not None:
                out += _walk_violations([layer.projection], seen, f"{where}.projection")[0]
            seen = seen_after
            continue
        if isinstance(layer, (Dense, Conv2D)):
            if seen:
                W, b = layer.params()
                if np.any(W < 0):
                    out.append((where, f"{layer.kind} has negative weights"))
                if np.any(b < 0):
                    out.append((where, f"{layer.kind} has negative biases"))
            seen = True
        elif isinstance(layer, Elementwise) and layer.kind != "leaky_relu":
            out.append((where, f"{layer.kind} is not strictly increasing"))
    return out, seen


def check_global_inference(net):
    """Sufficient conditions for the per-layer region choice to be globally optimal.

    The first weighted layer is unconstrained. Every later weight and bias
    must be nonnegative, nonlinearities strictly increasing, and the last
    layer dense. Meeting them is sufficient, not necessary.
    """
    violations, _ = _walk_violations(net.layers, False)
    if not isinstance(net.layers[-1], Dense):
        violations.append((str(len(net.layers) - 1), "last layer is not dense"))
    return {"satisfied": not violations, "violations": violations}

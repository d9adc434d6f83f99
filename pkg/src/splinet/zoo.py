"""Build networks from plain descriptors, plus the architectures used in experiments.

A descriptor is a dict with a ``kind`` key, e.g. ``{"kind": "conv2d",
"channels": 4, "kernel": [3, 3], "padding": "same"}``. The same format is
stored in model files.
"""

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import (
    DEFAULT_LEAK,
    Conv2D,
    Dense,
    Elementwise,
    MaxPool,
    MeanPool,
    Network,
    ResidualBlock,
    pool2d_regions,
)


def _init(rng, shape, fan_in, scale):
    return rng.standard_normal(shape) * (scale / np.sqrt(fan_in))


def build_layer(desc, in_shape, rng=None, params=None, scale=1.0):
    """Instantiate one layer. ``params`` is an iterator of arrays to use instead of random init."""
    kind = desc.get("kind")
    rng = rng if rng is not None else np.random.default_rng(0)
    take = (lambda shape, fan_in, bias: np.array(next(params), dtype=float).reshape(shape)) if params else None

    def draw(shape, fan_in, bias=False):
        if take is not None:
            return take(shape, fan_in, bias)
        if bias:
            return rng.standard_normal(shape) * 0.1 * scale
        return _init(rng, shape, fan_in, scale)

    if kind == "dense":
        d_in = int(np.prod(in_shape))
        out = int(desc["out"])
        return Dense(draw((out, d_in), d_in), draw((out,), d_in, True), in_shape=in_shape)
    if kind == "conv2d":
        if len(in_shape) != 3:
            raise ConfigError(f"conv2d needs a (C, I, J) input, got {in_shape}")
        co = int(desc["channels"])
        M, N = (int(k) for k in desc["kernel"])
        fan = in_shape[0] * M * N
        return Conv2D(draw((co, in_shape[0], M, N), fan), draw((co,), fan, True), in_shape, desc.get("padding", "valid"))
    if kind in ("relu", "abs"):
        return Elementwise(kind, in_shape)
    if kind == "leaky_relu":
        return Elementwise(kind, in_shape, desc.get("slope", DEFAULT_LEAK))
    if kind in ("maxpool", "meanpool"):
        cls = MaxPool if kind == "maxpool" else MeanPool
        if "size" in desc:
            if len(in_shape) != 3:
                raise ConfigError("windowed pooling needs a (C, I, J) input")
            regions, out_shape = pool2d_regions(in_shape, desc["size"])
        else:
            regions = desc["regions"]
            out_shape = tuple(desc.get("out_shape", (len(regions),)))
        return cls(regions, in_shape, out_shape)
    if kind == "residual":
        inner, shape = [], tuple(in_shape)
        for d in desc["inner"]:
            layer = build_layer(d, shape, rng, params, scale)
            inner.append(layer)
            shape = layer.out_shape
        proj = None
        if desc.get("projection"):
            d_in, d_out = int(np.prod(in_shape)), int(np.prod(shape))
            proj = Dense(draw((d_out, d_in), d_in), draw((d_out,), d_in, True), in_shape=in_shape)
        return ResidualBlock(inner, proj, in_shape)
    raise ConfigError(f"unknown layer kind {kind!r}")


def build_network(input_shape, descs, seed=0, params=None, scale=1.0):
    rng = np.random.default_rng(seed)
    it = iter(params) if params is not None else None
    layers, shape = [], tuple(input_shape)
    for i, d in enumerate(descs):
        try:
            layer = build_layer(d, shape, rng, it, scale)
        except ShapeError as exc:
            raise ShapeError(f"layer {i} ({d.get('kind')}): {exc}") from None
        layers.append(layer)
        shape = layer.out_shape
    return Network(layers, input_shape)


_NONLIN = ["relu", "leaky_relu", "abs"]


def random_architecture(rng, input_shape=(1, 6, 6), n_classes=3):
    """A random mix of conv/dense/nonlinearity/pooling/residual descriptors."""
    descs = []
    shape = tuple(input_shape)
    spatial = len(shape) == 3
    if spatial:
        for _ in range(rng.integers(1, 3)):
            k = int(rng.choice([1, 2, 3]))
            pad = str(rng.choice(["valid", "same"]))
            if pad == "valid" and (shape[1] - k + 1 < 2 or shape[2] - k + 1 < 2):
                pad = "same"
            descs.append({"kind": "conv2d", "channels": int(rng.integers(1, 4)), "kernel": [k, k], "padding": pad})
            c = descs[-1]["channels"]
            shape = (c, shape[1], shape[2]) if pad == "same" else (c, shape[1] - k + 1, shape[2] - k + 1)
            descs.append(_rand_nonlin(rng))
            if rng.random() < 0.5 and shape[1] >= 2 and shape[2] >= 2:
                descs.append({"kind": str(rng.choice(["maxpool", "meanpool"])), "size": [2, 2]})
                shape = (shape[0], max(shape[1] // 2, 1), max(shape[2] // 2, 1))
        if rng.random() < 0.6:
            c = shape[0]
            descs.append(
                {
                    "kind": "residual",
                    "inner": [
                        {"kind": "conv2d", "channels": c, "kernel": [3, 3], "padding": "same"},
                        _rand_nonlin(rng),
                    ],
                    "projection": False,
                }
            )
    width = int(rng.integers(3, 9))
    descs.append({"kind": "dense", "out": width})
    descs.append(_rand_nonlin(rng))
    if rng.random() < 0.5:
        regions = [list(range(i, min(i + 2, width))) for i in range(0, width, 2)]
        descs.append({"kind": str(rng.choice(["maxpool", "meanpool"])), "regions": regions})
        width = len(regions)
    if rng.random() < 0.5:
        descs.append(
            {
                "kind": "residual",
                "inner": [{"kind": "dense", "out": width + 1}, _rand_nonlin(rng), {"kind": "dense", "out": n_classes}],
                "projection": True,
            }
        )
    else:
        descs.append({"kind": "dense", "out": n_classes})
    return descs


def _rand_nonlin(rng):
    kind = str(rng.choice(_NONLIN))
    d = {"kind": kind}
    if kind == "leaky_relu":
        d["slope"] = float(rng.choice([0.01, 0.1, 0.3]))
    return d


def random_network(seed, input_shape=(1, 6, 6), n_classes=3):
    rng = np.random.default_rng(seed)
    return build_network(input_shape, random_architecture(rng, input_shape, n_classes), seed=seed + 1)


def mlp(input_dim, hidden, n_classes, nonlinearity="relu", seed=0, scale=1.0):
    descs = []
    for h in hidden:
        descs += [{"kind": "dense", "out": h}, {"kind": nonlinearity}]
    descs.append({"kind": "dense", "out": n_classes})
    return build_network((input_dim,), descs, seed=seed, scale=scale)


def small_cnn(input_shape=(1, 28, 28), n_classes=10, pooling="meanpool", seed=0, width=(8, 16)):
    """A reduced SmallCNN: two conv/leaky-ReLU/pool stages and a dense head."""
    c1, c2 = width
    descs = [
        {"kind": "conv2d", "channels": c1, "kernel": [5, 5], "padding": "valid"},
        {"kind": "leaky_relu", "slope": DEFAULT_LEAK},
        {"kind": pooling, "size": [2, 2]},
        {"kind": "conv2d", "channels": c2, "kernel": [3, 3], "padding": "valid"},
        {"kind": "leaky_relu", "slope": DEFAULT_LEAK},
        {"kind": pooling, "size": [2, 2]},
        {"kind": "dense", "out": n_classes},
    ]
    return build_network(input_shape, descs, seed=seed)

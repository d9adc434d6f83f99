"""JSON model files: architecture descriptors plus parameters as decimal floats.

Floats are written with Python's shortest round-trip repr, so loading a saved
model reproduces every parameter bit for bit.
"""

import json

import numpy as np

from .errors import FormatError, SchemaError
from .zoo import build_network

FORMAT_VERSION = 1


class VersionError(FormatError):
    pass


def _plain(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def to_dict(net, rng_seed=None):
    return {
        "format_version": FORMAT_VERSION,
        "architecture": net.describe(),
        "parameters": [[p.reshape(-1).tolist() for p in layer.params()] for layer in net.layers],
        "input_shape": list(net.input_shape),
        "class_count": net.n_classes,
        "rng_seed": rng_seed,
    }


def dumps(net, rng_seed=None):
    return json.dumps(to_dict(net, rng_seed), default=_plain)


def save_model(net, path, rng_seed=None):
    with open(path, "w") as fh:
        fh.write(dumps(net, rng_seed))


def _require(doc, key, kind):
    if key not in doc:
        raise SchemaError(f"model file is missing {key!r}")
    if not isinstance(doc[key], kind):
        raise SchemaError(f"{key!r} has type {type(doc[key]).__name__}")
    return doc[key]


def from_dict(doc):
    if not isinstance(doc, dict):
        raise SchemaError("model file must hold a JSON object")
    version = _require(doc, "format_version", int)
    if version != FORMAT_VERSION:
        raise VersionError(f"model format_version {version} is not supported (expected {FORMAT_VERSION})")
    arch = _require(doc, "architecture", list)
    params = _require(doc, "parameters", list)
    input_shape = tuple(_require(doc, "input_shape", list))
    if len(params) != len(arch):
        raise SchemaError(f"{len(arch)} layers in architecture but {len(params)} parameter entries")
    # a throwaway build gives the expected parameter shapes
    try:
        shell = build_network(input_shape, arch)
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"bad architecture descriptor: {exc}") from None
    flat = []
    for i, (layer, entry) in enumerate(zip(shell.layers, params)):
        expected = layer.params()
        if not isinstance(entry, list) or len(entry) != len(expected):
            got = len(entry) if isinstance(entry, list) else type(entry).__name__
            raise SchemaError(f"layer {i} ({layer.kind}) needs {len(expected)} parameter arrays, got {got}")
        for j, (p, arr) in enumerate(zip(expected, entry)):
            if not isinstance(arr, list) or len(arr) != p.size:
                got = len(arr) if isinstance(arr, list) else type(arr).__name__
                raise SchemaError(f"layer {i} ({layer.kind}) parameter {j} needs {p.size} values, got {got}")
            flat.append(np.array(arr, dtype=float))
    net = build_network(input_shape, arch, params=flat)
    count = doc.get("class_count")
    if count is not None and count != net.n_classes:
        raise SchemaError(f"class_count {count} disagrees with the architecture's {net.n_classes} outputs")
    return net, doc.get("rng_seed")


def loads(data):
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"model file is not UTF-8 (byte offset {exc.start})") from None
    else:
        text = data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise FormatError(f"model file is not valid JSON at byte offset {offset}: {exc.msg}") from None
    return from_dict(doc)


def load_model(path):
    """Returns ``(network, rng_seed)``."""
    with open(path, "rb") as fh:
        return loads(fh.read())

"""Exact affine form of a network at an input, and the tools built on it.

A network made of dense/conv layers, ReLU-type nonlinearities, pooling and
residual blocks is affine on each region of an input partition, so at any
``x`` it equals ``A[x] x + b[x]``. ``extract_affine`` recovers ``A`` row by
row with frozen-region backward sweeps and ``b`` as ``f(x) - A x``.
``compose_affine`` builds the same pair symbolically from per-layer pieces.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import ConsistencyError, DomainError, ShapeError
from .layers import (
    Conv2D,
    Dense,
    Elementwise,
    MaxPool,
    MeanPool,
    ResidualBlock,
    batch_records,
    conv_as_matrix,
    network_forward,
    repeat_record,
)
from .tensor import as_array

SIGNATURE_VERSION = 1

MAX_DENSE_IN = 4096
MAX_DENSE_OUT = 64


@dataclass(frozen=True)
class AffineForm:
    A: np.ndarray
    b: np.ndarray

    def __call__(self, x):
        return self.A @ as_array(x).reshape(-1) + self.b

    @property
    def shape(self):
        return self.A.shape


@dataclass(frozen=True)
class RegionSignature:
    """Canonical bytes for one activation trace: version byte + little-endian bit stream."""

    data: bytes

    def hex(self):
        return self.data.hex()

    def __repr__(self):
        return f"RegionSignature({self.data.hex()})"


@dataclass
class TemplateSet:
    rows: np.ndarray
    biases: np.ndarray
    x: np.ndarray

    def scores(self):
        return self.rows @ self.x + self.biases


# ---------------------------------------------------------------- signatures


def _record_bits(layer, rec):
    if isinstance(layer, Elementwise):
        return [(np.asarray(rec) == 1.0).astype(np.uint8)]
    if isinstance(layer, MaxPool):
        width = int(layer.sizes.max())
        nbits = int(np.ceil(np.log2(width))) if width > 1 else 0
        if nbits == 0:
            return []
        pos = layer.positions(np.asarray(rec)[None])[0]
        bits = (pos[:, None] >> np.arange(nbits)[None, :]) & 1
        return [bits.astype(np.uint8).ravel()]
    if isinstance(layer, ResidualBlock):
        out = []
        for sub, r in zip(layer.inner, rec):
            out += _record_bits(sub, r)
        return out
    return []


def layer_bits(layer, rec):
    parts = _record_bits(layer, rec)
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint8)


def encode_trace(net, trace):
    bits = np.concatenate([layer_bits(layer, rec) for layer, rec in zip(net.layers, trace.records)])
    packed = np.packbits(bits, bitorder="little") if bits.size else b""
    return RegionSignature(bytes([SIGNATURE_VERSION]) + bytes(packed))


# ---------------------------------------------------------------- per-layer forms


def _slope_matrix(layer, rec):
    """The frozen linear part of a nonlinear layer as an explicit matrix."""
    if isinstance(layer, Elementwise):
        return np.diag(np.asarray(rec, dtype=float))
    if isinstance(layer, MaxPool):
        S = np.zeros((len(layer.regions), layer.in_dim))
        S[np.arange(len(layer.regions)), np.asarray(rec)] = 1.0
        return S
    raise TypeError(f"{layer.kind} has no slope matrix")


def layer_affine(layer, rec=None):
    """``(A, b)`` of one layer on the region named by its record."""
    if isinstance(layer, Dense):
        layer.check_record(rec)
        return AffineForm(layer.W.copy(), layer.b.copy())
    if isinstance(layer, Conv2D):
        layer.check_record(rec)
        return AffineForm(*conv_as_matrix(layer.W, layer.xi, layer.in_shape, layer.padding))
    if isinstance(layer, Elementwise) or isinstance(layer, MaxPool):
        rec = np.asarray(rec) if rec is not None else None
        layer.check_record(None if rec is None else rec[None])
        S = _slope_matrix(layer, rec)
        return AffineForm(S, np.zeros(S.shape[0]))
    if isinstance(layer, MeanPool):
        layer.check_record(rec)
        P = np.zeros((len(layer.regions), layer.in_dim))
        for d, r in enumerate(layer.regions):
            P[d, r] += 1.0 / len(r)
        return AffineForm(P, np.zeros(P.shape[0]))
    if isinstance(layer, ResidualBlock):
        if not isinstance(rec, list) or len(rec) != len(layer.inner):
            raise ConsistencyError("residual record must hold one entry per inner layer")
        inner = compose_affine([layer_affine(sub, r) for sub, r in zip(layer.inner, rec)])
        if layer.projection is None:
            skip = AffineForm(np.eye(layer.in_dim), np.zeros(layer.in_dim))
        else:
            skip = AffineForm(layer.projection.W.copy(), layer.projection.b.copy())
        return AffineForm(inner.A + skip.A, inner.b + skip.b)
    raise TypeError(f"unsupported layer {layer!r}")


def compose_affine(forms):
    """Unroll ``f_L o ... o f_1``: slope product and each bias pushed through the later slopes."""
    if not forms:
        raise ShapeError("compose_affine needs at least one form")
    A, b = forms[0].A.copy(), forms[0].b.copy()
    for i, form in enumerate(forms[1:], start=1):
        if form.A.shape[1] != A.shape[0]:
            raise ShapeError(f"form {i} expects {form.A.shape[1]} inputs but previous form gives {A.shape[0]}")
        A = form.A @ A
        b = form.A @ b + form.b
    return AffineForm(A, b)


def per_layer_forms(net, trace):
    return [layer_affine(layer, rec) for layer, rec in zip(net.layers, trace.records)]


# ---------------------------------------------------------------- extraction


def slope_rows(net, trace, cotangents):
    """``cotangents @ A[x]`` via frozen backward sweeps, one per cotangent row."""
    G = np.atleast_2d(as_array(cotangents))
    recs = [repeat_record(r, G.shape[0]) for r in batch_records(trace)]
    gx, _ = net.backward(None, recs, G, need_params=False)
    return gx


def extract_affine(net, x):
    """Return ``(AffineForm, RegionSignature)`` of ``net`` at ``x``."""
    x = as_array(x).reshape(-1)
    if net.in_dim > MAX_DENSE_IN or net.n_classes > MAX_DENSE_OUT:
        raise ShapeError(f"dense extraction is capped at {MAX_DENSE_IN} inputs and {MAX_DENSE_OUT} outputs")
    logits, trace = network_forward(net, x)
    A = slope_rows(net, trace, np.eye(net.n_classes))
    b = logits - A @ x
    return AffineForm(A, b), encode_trace(net, trace)


def templates(net, x):
    form, _ = extract_affine(net, x)
    return TemplateSet(form.A, form.b, as_array(x).reshape(-1).copy())


def gram(ts):
    rows = ts.rows if isinstance(ts, TemplateSet) else as_array(ts)
    return rows @ rows.T


def encode_input(net, x):
    """Amplitude ``A[x] x`` and phase (region signature) of an input."""
    form, sig = extract_affine(net, x)
    return form.A @ as_array(x).reshape(-1), sig


def signature(net, x):
    return encode_trace(net, network_forward(net, x)[1])


# ---------------------------------------------------------------- brute-force oracle


MAX_ORACLE_DIM = 3
MAX_ORACLE_UNITS = 12


def region_bound(net):
    """``2^(#elementwise units) * prod |R_d|`` over max-pool regions."""
    bound = 1
    for layer in _flat_layers(net.layers):
        if isinstance(layer, Elementwise):
            bound *= 2 ** layer.in_dim
        elif isinstance(layer, MaxPool):
            for s in layer.sizes:
                bound *= int(s)
    return bound


def _flat_layers(layers):
    for layer in layers:
        if isinstance(layer, ResidualBlock):
            yield from _flat_layers(layer.inner)
        else:
            yield layer


@dataclass
class RegionGroup:
    signature: RegionSignature
    points: np.ndarray
    form: AffineForm


def enumerate_regions_bruteforce(net, low, high, density=21, atol=1e-9):
    """Grid-sample the box ``[low, high]``, group points by signature, check each group is one affine piece.

    Raises ``DomainError`` for inputs above 3 dimensions or more than 12
    nonlinear units, and ``ConsistencyError`` if a group is not affine-consistent.
    """
    if net.in_dim > MAX_ORACLE_DIM or net.n_units() > MAX_ORACLE_UNITS:
        raise DomainError(
            f"brute-force enumeration needs input dim <= {MAX_ORACLE_DIM} and <= {MAX_ORACLE_UNITS} units, "
            f"got {net.in_dim} and {net.n_units()}"
        )
    low = np.broadcast_to(as_array(low), (net.in_dim,))
    high = np.broadcast_to(as_array(high), (net.in_dim,))
    axes = [np.linspace(lo, hi, density) for lo, hi in zip(low, high)]
    groups = {}
    for pt in product(*axes):
        pt = np.array(pt)
        form, sig = extract_affine(net, pt)
        g = groups.get(sig)
        if g is None:
            groups[sig] = RegionGroup(sig, [pt], form)
            continue
        if not (np.allclose(g.form.A, form.A, rtol=0, atol=atol) and np.allclose(g.form.b, form.b, rtol=0, atol=atol)):
            raise ConsistencyError(f"signature {sig.hex()} maps to two different affine pieces")
        g.points.append(pt)
    for g in groups.values():
        g.points = np.array(g.points)
    return groups


# ---------------------------------------------------------------- boundary distance


def _layer_margin(layer, x, rec):
    if isinstance(layer, Elementwise):
        return float(np.min(np.abs(x))) if x.size else np.inf
    if isinstance(layer, MaxPool):
        vals = x.reshape(x.shape[0], -1)[:, layer.idx]
        vals = np.where(layer.mask[None], vals, -np.inf)
        top2 = -np.sort(-vals, axis=2)[:, :, :2]
        gap = top2[:, :, 0] - top2[:, :, 1]
        # an exact tie at zero comes from units clamped upstream; it survives small moves
        stable = (top2[:, :, 0] == 0) & (gap == 0)
        keep = (layer.sizes > 1)[None] & ~stable
        return float(np.min(gap[keep])) if keep.any() else np.inf
    if isinstance(layer, ResidualBlock):
        ins, _ = layer._inner_inputs(x, rec, False)
        return min((_layer_margin(sub, xi, r) for sub, xi, r in zip(layer.inner, ins, rec)), default=np.inf)
    return np.inf


def boundary_margin(net, x):
    """Smallest gap at ``x`` between a nonlinear decision and its flip.

    For elementwise layers this is the smallest ``|pre-activation|``; for
    max-pooling the gap between the winner and the runner-up of a region.
    Finite-difference checks are only meaningful when it is comfortably
    larger than the step.
    """
    X = as_array(x).reshape((1,) + net.input_shape)
    _, recs, ins = net.run(X)
    return min(_layer_margin(layer, xi, r) for layer, xi, r in zip(net.layers, ins, recs))

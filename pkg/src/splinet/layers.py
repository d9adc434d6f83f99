"""Layers, forward evaluation and capture of the active spline region.

All layers work on batches: inputs have shape ``(N, *in_shape)``. Every
layer supports three passes that share one region record:

* ``forward(x, record=None)`` evaluates the layer. Without a record the
  layer picks its region from ``x`` (sign of the pre-activation, pooling
  winner) and returns it; with a record the region is frozen.
* ``tangent(v, record)`` applies the frozen linear part only (no bias).
  Chained through a network this is ``v -> A[x] v``.
* ``backward(x, record, g, linear=False, need_params=True)`` is the
  vector-Jacobian product with the region frozen. ``x`` is the layer input
  of whichever pass (forward or tangent) produced it; ``linear=True`` marks
  a tangent pass, whose bias gradients are zero.

Records are ``None`` for linear layers, an ``(N, D)`` slope array for
elementwise nonlinearities, an ``(N, R)`` array of winning input indices for
max-pooling and a list of inner records for residual blocks.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ConsistencyError, ShapeError
from .tensor import DTYPE, as_array

DEFAULT_LEAK = 0.01

# slope assigned to negative pre-activations
_INACTIVE_SLOPE = {"relu": 0.0, "abs": -1.0}


def _batch(x, shape):
    x = as_array(x)
    n = x.shape[0]
    try:
        return x.reshape((n,) + tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot view input of shape {x.shape[1:]} as {tuple(shape)}") from None


class Layer:
    kind = "layer"

    def __init__(self, in_shape, out_shape):
        self.in_shape = tuple(int(s) for s in in_shape)
        self.out_shape = tuple(int(s) for s in out_shape)

    @property
    def in_dim(self):
        return int(np.prod(self.in_shape))

    @property
    def out_dim(self):
        return int(np.prod(self.out_shape))

    def params(self):
        return []

    def bias_flags(self):
        return []

    def is_linear(self):
        return True

    def n_units(self):
        """Number of independent nonlinear decisions this layer makes."""
        return 0

    def forward(self, x, record=None):
        raise NotImplementedError

    def tangent(self, v, record):
        raise NotImplementedError

    def backward(self, x, record, g, linear=False, need_params=True):
        raise NotImplementedError

    def describe(self):
        return {"kind": self.kind}

    def check_record(self, record, n=None):
        if record is not None:
            raise ConsistencyError(f"{self.kind} layer takes no region record")


# ---------------------------------------------------------------- linear layers


class Dense(Layer):
    kind = "dense"

    def __init__(self, W, b, in_shape=None):
        W, b = as_array(W), as_array(b)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ShapeError(f"dense weights {W.shape} and bias {b.shape} disagree")
        in_shape = in_shape if in_shape is not None else (W.shape[1],)
        if int(np.prod(in_shape)) != W.shape[1]:
            raise ShapeError(f"dense layer expects {W.shape[1]} inputs, in_shape is {in_shape}")
        super().__init__(in_shape, (W.shape[0],))
        self.W, self.b = W, b

    def params(self):
        return [self.W, self.b]

    def bias_flags(self):
        return [False, True]

    def forward(self, x, record=None):
        self.check_record(record)
        x2 = _batch(x, (self.in_dim,))
        return x2 @ self.W.T + self.b, None

    def tangent(self, v, record):
        return _batch(v, (self.in_dim,)) @ self.W.T

    def backward(self, x, record, g, linear=False, need_params=True):
        gx = (g @ self.W).reshape((g.shape[0],) + self.in_shape)
        if not need_params:
            return gx, None
        x2 = _batch(x, (self.in_dim,))
        gb = np.zeros_like(self.b) if linear else g.sum(axis=0)
        return gx, [g.T @ x2, gb]

    def describe(self):
        return {"kind": self.kind, "out": self.out_dim}


def _pad_amounts(M, N, padding):
    if padding == "valid":
        return (0, 0), (0, 0)
    if padding == "same":
        return ((M - 1) // 2, M - 1 - (M - 1) // 2), ((N - 1) // 2, N - 1 - (N - 1) // 2)
    raise ConfigError(f"unknown padding {padding!r}; use 'valid' or 'same'")


def conv_output_shape(filters_shape, in_shape, padding):
    Co, Ci, M, N = filters_shape
    C, I, J = in_shape
    if C != Ci:
        raise ShapeError(f"filters expect {Ci} input channels, input has {C}")
    (pt, pb), (pl, pr) = _pad_amounts(M, N, padding)
    Io, Jo = I + pt + pb - M + 1, J + pl + pr - N + 1
    if Io < 1 or Jo < 1:
        raise ShapeError(f"filter {M}x{N} larger than padded input {I + pt + pb}x{J + pl + pr}")
    return (Co, Io, Jo)


class Conv2D(Layer):
    """Stride-1 multi-channel correlation, ``out_c = sum_k W[c,k] * x_k + xi_c``."""

    kind = "conv2d"

    def __init__(self, W, xi, in_shape, padding="valid"):
        W, xi = as_array(W), as_array(xi)
        if W.ndim != 4 or xi.shape != (W.shape[0],):
            raise ShapeError(f"filter bank {W.shape} and bias {xi.shape} disagree")
        in_shape = tuple(in_shape)
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d needs a (C, I, J) input, got {in_shape}")
        out_shape = conv_output_shape(W.shape, in_shape, padding)
        super().__init__(in_shape, out_shape)
        self.W, self.xi, self.padding = W, xi, padding
        self._pads = _pad_amounts(W.shape[2], W.shape[3], padding)

    def params(self):
        return [self.W, self.xi]

    def bias_flags(self):
        return [False, True]

    def _windows(self, x):
        x = _batch(x, self.in_shape)
        (pt, pb), (pl, pr) = self._pads
        if pt or pb or pl or pr:
            x = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        M, N = self.W.shape[2:]
        # (n, Ci, Io, Jo, M, N)
        return sliding_window_view(x, (M, N), axis=(2, 3))

    def _apply(self, x):
        return np.einsum("nkijmq,ckmq->ncij", self._windows(x), self.W, optimize=True)

    def forward(self, x, record=None):
        self.check_record(record)
        return self._apply(x) + self.xi[None, :, None, None], None

    def tangent(self, v, record):
        return self._apply(v)

    def backward(self, x, record, g, linear=False, need_params=True):
        g = g.reshape((g.shape[0],) + self.out_shape)
        n = g.shape[0]
        _, Ci, M, N = self.W.shape
        _, Io, Jo = self.out_shape
        (pt, pb), (pl, pr) = self._pads
        C, I, J = self.in_shape
        gpad = np.zeros((n, Ci, I + pt + pb, J + pl + pr), dtype=DTYPE)
        for m in range(M):
            for q in range(N):
                gpad[:, :, m:m + Io, q:q + Jo] += np.einsum("ncij,ck->nkij", g, self.W[:, :, m, q], optimize=True)
        gx = gpad[:, :, pt:pt + I, pl:pl + J]
        if not need_params:
            return gx, None
        gW = np.einsum("nkijmq,ncij->ckmq", self._windows(x), g, optimize=True)
        gxi = np.zeros_like(self.xi) if linear else g.sum(axis=(0, 2, 3))
        return gx, [gW, gxi]

    def describe(self):
        Co, _, M, N = self.W.shape
        return {"kind": self.kind, "channels": Co, "kernel": [M, N], "padding": self.padding}


def conv2d_forward(filters, xi, x, padding="valid"):
    """Single-input convolution; ``x`` has shape ``(C_in, I, J)``."""
    x = as_array(x)
    if x.ndim != 3:
        raise ShapeError(f"conv2d_forward expects a (C, I, J) input, got {x.shape}")
    layer = Conv2D(filters, xi, x.shape, padding)
    return layer.forward(x[None])[0][0]


def conv_as_matrix(filters, xi, in_shape, padding="valid"):
    """Explicit matrix ``C`` and bias ``b`` with ``C @ flatten(x) + b == flatten(conv(x))``.

    Built by index bookkeeping, independent of the sliding-window path.
    """
    filters, xi = as_array(filters), as_array(xi)
    Co, Ci, M, N = filters.shape
    C, I, J = in_shape
    _, Io, Jo = conv_output_shape(filters.shape, in_shape, padding)
    (pt, _), (pl, _) = _pad_amounts(M, N, padding)
    mat = np.zeros((Co * Io * Jo, C * I * J), dtype=DTYPE)
    oc, oi, oj, k, m, q = np.meshgrid(
        np.arange(Co), np.arange(Io), np.arange(Jo), np.arange(Ci), np.arange(M), np.arange(N), indexing="ij"
    )
    ii, jj = oi + m - pt, oj + q - pl
    ok = (ii >= 0) & (ii < I) & (jj >= 0) & (jj < J)
    rows = (oc * Io + oi) * Jo + oj
    cols = (k * I + ii) * J + jj
    np.add.at(mat, (rows[ok], cols[ok]), filters[oc[ok], k[ok], m[ok], q[ok]])
    b = np.repeat(xi, Io * Jo)
    return mat, b


# ---------------------------------------------------------------- nonlinearities


class Elementwise(Layer):
    """ReLU, leaky ReLU or absolute value: ``y_d = s_d x_d`` with ``s_d`` from a two-slope set."""

    def __init__(self, kind, shape, slope=DEFAULT_LEAK):
        if kind not in ("relu", "leaky_relu", "abs"):
            raise ConfigError(f"unknown nonlinearity {kind!r}")
        if kind == "leaky_relu" and not slope > 0:
            raise ConfigError(f"leaky ReLU slope must be > 0, got {slope}")
        super().__init__(shape, shape)
        self.kind = kind
        self.slope = float(slope)
        self.inactive = self.slope if kind == "leaky_relu" else _INACTIVE_SLOPE[kind]

    def admissible(self):
        return (self.inactive, 1.0)

    def is_linear(self):
        return False

    def n_units(self):
        return self.in_dim

    def check_record(self, record, n=None):
        if record is None or record.shape[1:] != (self.in_dim,):
            raise ConsistencyError(f"{self.kind} record must have {self.in_dim} slopes")
        if not np.all((record == 1.0) | (record == self.inactive)):
            raise ConsistencyError(f"{self.kind} record holds slopes outside {self.admissible()}")

    def forward(self, x, record=None):
        x = as_array(x)
        flat = x.reshape(x.shape[0], -1)
        if record is None:
            # an exact zero takes slope 0 (relu) or the leak (leaky_relu); for abs it takes +1
            active = flat >= 0 if self.kind == "abs" else flat > 0
            record = np.where(active, 1.0, self.inactive)
        else:
            self.check_record(record)
        return (record * flat).reshape(x.shape), record

    def tangent(self, v, record):
        v = as_array(v)
        return (record * v.reshape(v.shape[0], -1)).reshape(v.shape)

    def backward(self, x, record, g, linear=False, need_params=True):
        gx = (record * g.reshape(g.shape[0], -1)).reshape((g.shape[0],) + self.in_shape)
        return gx, ([] if need_params else None)

    def describe(self):
        d = {"kind": self.kind}
        if self.kind == "leaky_relu":
            d["slope"] = self.slope
        return d


def nonlinearity_forward(kind, x, slope=DEFAULT_LEAK):
    """Single-vector elementwise nonlinearity; returns ``(output, slope_record)``."""
    x = as_array(x).reshape(-1)
    layer = Elementwise(kind, x.shape, slope)
    y, rec = layer.forward(x[None])
    return y[0], rec[0]


# ---------------------------------------------------------------- pooling


def _region_table(regions, in_dim):
    regions = [sorted(int(i) for i in r) for r in regions]
    if not regions:
        raise ConfigError("pooling needs at least one region")
    for d, r in enumerate(regions):
        if not r:
            raise ConfigError(f"pooling region {d} is empty")
        if r[0] < 0 or r[-1] >= in_dim:
            raise ConfigError(f"pooling region {d} has indices outside [0, {in_dim})")
    covered = np.zeros(in_dim, dtype=bool)
    for r in regions:
        covered[r] = True
    if not covered.all():
        raise ConfigError(f"pooling regions leave input indices uncovered: {np.flatnonzero(~covered)[:10].tolist()}")
    width = max(len(r) for r in regions)
    # ragged regions are padded with their own lowest index: harmless for max, masked for mean
    idx = np.array([r + [r[0]] * (width - len(r)) for r in regions], dtype=np.int64)
    sizes = np.array([len(r) for r in regions], dtype=np.int64)
    mask = np.arange(width)[None, :] < sizes[:, None]
    return idx, sizes, mask


def pool2d_regions(in_shape, size):
    """Non-overlapping ``(p, q)`` windows per channel, in channel-major output order.

    Trailing rows/columns that do not fill a window are folded into the last window
    so that every input index stays covered.
    """
    C, I, J = in_shape
    p, q = size
    Io, Jo = max(I // p, 1), max(J // q, 1)
    regions = []
    for c in range(C):
        for oi in range(Io):
            rows = range(oi * p, I if oi == Io - 1 else (oi + 1) * p)
            for oj in range(Jo):
                cols = range(oj * q, J if oj == Jo - 1 else (oj + 1) * q)
                regions.append([(c * I + i) * J + j for i in rows for j in cols])
    return regions, (C, Io, Jo)


class Pool(Layer):
    def __init__(self, regions, in_shape, out_shape=None):
        in_shape = tuple(in_shape)
        in_dim = int(np.prod(in_shape))
        self.regions = [list(r) for r in regions]
        self.idx, self.sizes, self.mask = _region_table(self.regions, in_dim)
        out_shape = out_shape if out_shape is not None else (len(self.regions),)
        if int(np.prod(out_shape)) != len(self.regions):
            raise ShapeError(f"{len(self.regions)} regions cannot fill output shape {out_shape}")
        super().__init__(in_shape, out_shape)

    def multiplicity(self):
        counts = np.zeros(self.in_dim, dtype=np.int64)
        for r in self.regions:
            counts[sorted(set(r))] += 1
        return int(counts.max())

    def describe(self):
        return {"kind": self.kind, "regions": [sorted(r) for r in self.regions], "out_shape": list(self.out_shape)}


class MaxPool(Pool):
    kind = "maxpool"

    def is_linear(self):
        return False

    def n_units(self):
        return len(self.regions)

    def check_record(self, record, n=None):
        if record is None or record.shape[1:] != (len(self.regions),):
            raise ConsistencyError(f"maxpool record must hold {len(self.regions)} winners")
        if not np.all((self.idx[None] == record[:, :, None]).any(axis=2)):
            raise ConsistencyError("maxpool record names a winner outside its region")

    def forward(self, x, record=None):
        x = as_array(x)
        n = x.shape[0]
        flat = x.reshape(n, -1)
        if record is None:
            vals = flat[:, self.idx]
            # regions are sorted ascending, so the first maximal position is the lowest index
            pos = np.argmax(vals, axis=2)
            record = self.idx[np.arange(len(self.regions))[None, :], pos]
        else:
            self.check_record(record)
        y = np.take_along_axis(flat, record, axis=1)
        return y.reshape((n,) + self.out_shape), record

    def tangent(self, v, record):
        v = as_array(v)
        n = v.shape[0]
        return np.take_along_axis(v.reshape(n, -1), record, axis=1).reshape((n,) + self.out_shape)

    def backward(self, x, record, g, linear=False, need_params=True):
        n = g.shape[0]
        g2 = g.reshape(n, -1)
        flat_idx = (np.arange(n)[:, None] * self.in_dim + record).ravel()
        gx = np.bincount(flat_idx, weights=g2.ravel(), minlength=n * self.in_dim)
        return gx.reshape((n,) + self.in_shape), ([] if need_params else None)

    def positions(self, record):
        """Position of each winner inside its (sorted) region."""
        return np.argmax(self.idx[None] == record[:, :, None], axis=2)


class MeanPool(Pool):
    kind = "meanpool"

    def _apply(self, v):
        v = as_array(v)
        n = v.shape[0]
        flat = v.reshape(n, -1)
        y = (flat[:, self.idx] * self.mask).sum(axis=2) / self.sizes
        return y.reshape((n,) + self.out_shape)

    def forward(self, x, record=None):
        self.check_record(record)
        return self._apply(x), None

    def tangent(self, v, record):
        return self._apply(v)

    def backward(self, x, record, g, linear=False, need_params=True):
        n = g.shape[0]
        g2 = g.reshape(n, -1) / self.sizes
        R, K = self.idx.shape
        contrib = np.broadcast_to(g2[:, :, None], (n, R, K)) * self.mask
        flat_idx = (np.arange(n)[:, None, None] * self.in_dim + self.idx[None]).ravel()
        gx = np.bincount(flat_idx, weights=contrib.ravel(), minlength=n * self.in_dim)
        return gx.reshape((n,) + self.in_shape), ([] if need_params else None)


def maxpool_forward(regions, x):
    """Single-vector max-pooling; returns ``(pooled, winners)``."""
    x = as_array(x).reshape(-1)
    layer = MaxPool(regions, x.shape)
    y, rec = layer.forward(x[None])
    return y[0], rec[0]


def meanpool_forward(regions, x):
    x = as_array(x).reshape(-1)
    layer = MeanPool(regions, x.shape)
    return layer.forward(x[None])[0][0]


# ---------------------------------------------------------------- residual block


class ResidualBlock(Layer):
    """``out = inner(x) + skip(x)``; the skip is the identity or a dense projection."""

    kind = "residual"

    def __init__(self, inner, projection=None, in_shape=None):
        if not inner:
            raise ConfigError("residual block needs a non-empty inner path")
        in_shape = tuple(in_shape) if in_shape is not None else inner[0].in_shape
        _check_chain(inner, in_shape)
        out_shape = inner[-1].out_shape
        if projection is None:
            if int(np.prod(in_shape)) != int(np.prod(out_shape)):
                raise ShapeError(
                    f"identity skip needs matching sizes, inner maps {in_shape} -> {out_shape}; add a projection"
                )
        elif projection.in_dim != int(np.prod(in_shape)) or projection.out_dim != int(np.prod(out_shape)):
            raise ShapeError("projection does not map the block input onto the inner output")
        super().__init__(in_shape, out_shape)
        self.inner = list(inner)
        self.projection = projection

    def params(self):
        ps = [p for layer in self.inner for p in layer.params()]
        return ps + (self.projection.params() if self.projection else [])

    def bias_flags(self):
        fs = [f for layer in self.inner for f in layer.bias_flags()]
        return fs + (self.projection.bias_flags() if self.projection else [])

    def is_linear(self):
        return all(layer.is_linear() for layer in self.inner)

    def n_units(self):
        return sum(layer.n_units() for layer in self.inner)

    def check_record(self, record, n=None):
        if not isinstance(record, list) or len(record) != len(self.inner):
            raise ConsistencyError("residual record must hold one entry per inner layer")

    def _skip(self, x, linear):
        n = x.shape[0]
        if self.projection is None:
            return x.reshape((n,) + self.out_shape)
        y = self.projection.tangent(x, None) if linear else self.projection.forward(x)[0]
        return y.reshape((n,) + self.out_shape)

    def _inner_inputs(self, x, record, linear):
        h, ins = x, []
        for layer, rec in zip(self.inner, record):
            ins.append(h)
            h = layer.tangent(h, rec) if linear else layer.forward(h, rec)[0]
        return ins, h

    def forward(self, x, record=None):
        x = as_array(x)
        if record is not None:
            self.check_record(record)
        h, recs = x, []
        for i, layer in enumerate(self.inner):
            h, rec = layer.forward(h, None if record is None else record[i])
            recs.append(rec)
        return h.reshape((x.shape[0],) + self.out_shape) + self._skip(x, False), recs

    def tangent(self, v, record):
        v = as_array(v)
        _, h = self._inner_inputs(v, record, True)
        return h.reshape((v.shape[0],) + self.out_shape) + self._skip(v, True)

    def backward(self, x, record, g, linear=False, need_params=True):
        n = g.shape[0]
        ins = self._inner_inputs(x, record, linear)[0] if need_params else [None] * len(self.inner)
        grads = []
        h = g
        for layer, rec, xin in zip(reversed(self.inner), reversed(record), reversed(ins)):
            h, gp = layer.backward(xin, rec, h.reshape((n,) + layer.out_shape), linear, need_params)
            grads.append(gp)
        gx = h.reshape((n,) + self.in_shape)
        if self.projection is None:
            gx = gx + g.reshape((n,) + self.in_shape)
            pgrads = []
        else:
            gs, pgrads = self.projection.backward(x, None, g.reshape(n, -1), linear, need_params)
            gx = gx + gs.reshape((n,) + self.in_shape)
        if not need_params:
            return gx, None
        flat = [p for gp in reversed(grads) for p in gp]
        return gx, flat + pgrads

    def describe(self):
        return {
            "kind": self.kind,
            "inner": [layer.describe() for layer in self.inner],
            "projection": self.projection is not None,
        }


def residual_forward(block, x):
    """Single-input residual block; returns ``(output, inner records)``."""
    x = as_array(x)
    y, rec = block.forward(x.reshape((1,) + block.in_shape))
    return y[0].reshape(-1), _index_record(rec, 0)


# ---------------------------------------------------------------- network


def _check_chain(layers, in_shape):
    d = int(np.prod(in_shape))
    for i, layer in enumerate(layers):
        if layer.in_dim != d:
            raise ShapeError(f"layer {i} ({layer.kind}) expects {layer.in_dim} inputs but receives {d}")
        d = layer.out_dim


def _index_record(rec, i):
    if rec is None:
        return None
    if isinstance(rec, list):
        return [_index_record(r, i) for r in rec]
    return rec[i]


def stack_records(recs):
    """Batch a list of single-sample records (inverse of indexing)."""
    first = recs[0]
    if first is None:
        return None
    if isinstance(first, list):
        return [stack_records([r[k] for r in recs]) for k in range(len(first))]
    return np.stack(recs)


def repeat_record(rec, n):
    if rec is None:
        return None
    if isinstance(rec, list):
        return [repeat_record(r, n) for r in rec]
    return np.repeat(rec, n, axis=0)


@dataclass
class ActivationTrace:
    """Per-layer region evidence for one input, in layer order."""

    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


class Network:
    """An ordered list of layers mapping ``input_shape`` to logits (pre-softmax)."""

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        if not self.layers:
            raise ConfigError("a network needs at least one layer")
        _check_chain(self.layers, self.input_shape)

    @property
    def in_dim(self):
        return int(np.prod(self.input_shape))

    @property
    def n_classes(self):
        return self.layers[-1].out_dim

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def bias_flags(self):
        return [f for layer in self.layers for f in layer.bias_flags()]

    def n_units(self):
        return sum(layer.n_units() for layer in self.layers)

    def run(self, X, records=None, linear=False, start=0, stop=None):
        """Batched pass through layers ``start:stop``.

        Returns ``(out, records, inputs)`` where ``inputs[i]`` is what layer
        ``start + i`` received. With ``linear=True`` the frozen tangent map is
        applied and ``records`` must be given.
        """
        stop = len(self.layers) if stop is None else stop
        h = as_array(X)
        if h.ndim == 1:
            raise ShapeError("run expects a batch; use network_forward for single inputs")
        recs, ins = [], []
        for i in range(start, stop):
            layer = self.layers[i]
            ins.append(h)
            rec = None if records is None else records[i]
            try:
                if linear:
                    h = layer.tangent(h, rec)
                else:
                    h, rec = layer.forward(h, rec)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
            recs.append(rec)
        n = h.shape[0]
        return h.reshape(n, -1), recs, ins

    def backward(self, inputs, records, g, linear=False, start=0, stop=None, need_params=True, inject=None):
        """VJP through layers ``start:stop`` with regions frozen.

        ``inputs`` are the per-layer inputs of the pass being differentiated
        (indexed from ``start``), ``records`` the full-network records.
        ``inject`` maps a layer index to an extra cotangent added at that
        layer's input. Returns ``(g_input, per-layer param grads)``.
        """
        stop = len(self.layers) if stop is None else stop
        inject = inject or {}
        h = as_array(g)
        per_layer = [None] * len(self.layers)
        for i in range(stop - 1, start - 1, -1):
            layer = self.layers[i]
            xin = inputs[i - start] if inputs is not None else None
            h, gp = layer.backward(xin, records[i], h.reshape((h.shape[0],) + layer.out_shape), linear, need_params)
            if i in inject:
                h = h + inject[i].reshape(h.shape)
            per_layer[i] = gp
        return h.reshape(h.shape[0], -1), per_layer

    def flat_grads(self, per_layer):
        out = []
        for layer, gp in zip(self.layers, per_layer):
            if gp is None:
                out.extend(np.zeros_like(p) for p in layer.params())
            else:
                out.extend(gp)
        return out

    def describe(self):
        return [layer.describe() for layer in self.layers]


def dense_forward(W, b, x):
    W, b, x = as_array(W), as_array(b), as_array(x)
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0] or b.shape != (W.shape[0],):
        raise ShapeError(f"dense_forward dimension mismatch: W{W.shape} b{b.shape} x{x.shape}")
    return W @ x + b


def softmax(z, axis=-1):
    z = as_array(z)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = as_array(z)
    s = z - z.max(axis=axis, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def network_forward(net, x):
    """Logits and activation trace for a single input."""
    x = as_array(x)
    if x.size != net.in_dim:
        raise ShapeError(f"input has {x.size} values, network expects {net.in_dim}")
    out, recs, _ = net.run(x.reshape((1,) + net.input_shape))
    return out[0], ActivationTrace([_index_record(r, 0) for r in recs])


def batch_records(trace):
    """Lift a single-input trace to batch-of-one records."""
    return [None if r is None else stack_records([r]) for r in trace.records]

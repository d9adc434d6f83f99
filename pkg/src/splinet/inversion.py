"""Map logits back to input space through the transposed templates: ``x_hat = A[x]^T f(x)``."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .layers import network_forward
from .splinex import extract_affine, slope_rows
from .tensor import as_array


def invert(net, x):
    """``A[x]^T f(x)`` from one frozen backward sweep seeded with the logits."""
    logits, trace = network_forward(net, x)
    return slope_rows(net, trace, logits[None])[0]


def _layer_inversion(net, x, layer_index):
    if not 0 <= layer_index < len(net.layers):
        raise IndexError(f"layer index {layer_index} out of range for a {len(net.layers)}-layer network")
    x = as_array(x).reshape((1,) + net.input_shape)
    logits, recs, ins = net.run(x)
    z = ins[layer_index].reshape(-1)
    # backward from the logits down to the input of layer_index only
    z_hat, _ = net.backward(ins[layer_index:], recs, logits, start=layer_index, need_params=False)
    return z, z_hat[0]


def reconstruction_error(net, x):
    """Squared error ``||A[x]^T f(x) - x||^2``."""
    r = invert(net, x) - as_array(x).reshape(-1)
    return float(r @ r)


def layer_reconstruction_error(net, x, layer_index):
    """Same error with the input of ``layer_index`` as both start point and target (0 is the input)."""
    z, z_hat = _layer_inversion(net, x, layer_index)
    r = z_hat - z
    return float(r @ r)


def bias_leak(net, x):
    """``||A[x]^T b[x]||``: how far the bias alone pushes the reconstruction."""
    form, _ = extract_affine(net, x)
    return float(np.linalg.norm(form.A.T @ form.b))


@dataclass
class ReconstructionReport:
    x: np.ndarray
    x_hat: np.ndarray
    sq_error: float
    layer_errors: dict = field(default_factory=dict)
    bias_leak: float = float("nan")


def reconstruction_report(net, inputs, layers=(), with_bias_leak=False):
    reports = []
    for x in inputs:
        x = as_array(x).reshape(-1)
        x_hat = invert(net, x)
        r = x_hat - x
        rep = ReconstructionReport(x.copy(), x_hat, float(r @ r))
        for ell in layers:
            rep.layer_errors[int(ell)] = layer_reconstruction_error(net, x, int(ell))
        if with_bias_leak:
            rep.bias_leak = bias_leak(net, x)
        reports.append(rep)
    return reports


def write_reconstruction_csv(path, reports):
    layers = sorted({ell for rep in reports for ell in rep.layer_errors})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "sq_error"] + [f"layer_{ell}" for ell in layers])
        for i, rep in enumerate(reports):
            w.writerow([i, repr(rep.sq_error)] + [repr(rep.layer_errors.get(ell, float("nan"))) for ell in layers])

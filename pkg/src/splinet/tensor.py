"""Flattening conventions and small linear-algebra helpers.

Every tensor of shape ``(C, I, J)`` is flattened channel-major and then
row-major over space, i.e. element ``(c, i, j)`` lands at ``c*I*J + i*J + j``.
This is numpy's C order, and every matrix built elsewhere in the package
(conv-as-matrix, extracted slopes) indexes inputs the same way.
"""

import numpy as np

from .errors import ShapeError

DTYPE = np.float64


def as_array(x):
    return np.asarray(x, dtype=DTYPE)


def flatten(t):
    t = as_array(t)
    if t.ndim != 3:
        raise ShapeError(f"flatten expects a (C, I, J) tensor, got shape {t.shape}")
    return t.reshape(-1).copy()


def unflatten(v, shape):
    v = as_array(v)
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    if v.size != int(np.prod(shape)):
        raise ShapeError(f"cannot reshape {v.size} values into {shape}")
    return v.reshape(shape).copy()


def matvec(M, v):
    M, v = as_array(M), as_array(v)
    if M.ndim != 2 or v.ndim != 1 or M.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec dimension mismatch: {M.shape} x {v.shape}")
    return M @ v


def frobenius_norm(M):
    M = as_array(M)
    return float(np.sqrt(np.sum(M * M)))


def spectral_norm(M, iters=100, tol=1e-10, seed=0):
    """Largest singular value of ``M`` by power iteration on ``M^T M``.

    Stops after ``iters`` iterations or once the estimate changes by less
    than ``tol`` relative. The start vector is drawn from a fixed seed so
    repeated calls agree bit-for-bit.
    """
    M = as_array(M)
    if M.ndim != 2:
        raise ShapeError(f"spectral_norm expects a matrix, got shape {M.shape}")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not np.any(M):
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        w = M.T @ (M @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector landed in the null space; restart on a fresh direction
            v = rng.standard_normal(M.shape[1])
            v /= np.linalg.norm(v)
            continue
        v = w / nw
        new_sigma = float(np.linalg.norm(M @ v))
        if sigma > 0 and abs(new_sigma - sigma) <= tol * new_sigma:
            sigma = new_sigma
            break
        sigma = new_sigma
    return sigma

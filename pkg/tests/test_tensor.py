import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from splinet.errors import ShapeError
from splinet.tensor import flatten, frobenius_norm, matvec, spectral_norm, unflatten


def test_flatten_27():
    assert flatten(np.zeros((3, 3, 3))).shape == (27,)


def test_flatten_singleton():
    assert flatten(np.full((1, 1, 1), 5.0)).tolist() == [5.0]


def test_flatten_channel_major():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    t = np.array([[[a, b]], [[c, d]]])
    assert flatten(t).tolist() == [a, b, c, d]


def test_flatten_index_formula(rng):
    t = rng.standard_normal((3, 4, 5))
    v = flatten(t)
    for c in range(3):
        for i in range(4):
            for j in range(5):
                assert v[c * 20 + i * 5 + j] == t[c, i, j]


def test_flatten_rejects_non_3d():
    with pytest.raises(ShapeError):
        flatten(np.zeros((2, 2)))


@given(st.tuples(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6)).flatmap(
    lambda s: arrays(np.float64, s, elements=st.floats(-1e6, 1e6))))
def test_flatten_roundtrip(t):
    assert np.array_equal(unflatten(flatten(t), t.shape), t)


def test_spectral_identity():
    assert spectral_norm(np.eye(3)) == pytest.approx(1.0, abs=1e-12)


def test_spectral_diag():
    assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, abs=1e-10)


def _jacobi_singular_max(M, sweeps=50):
    """Largest singular value from cyclic Jacobi diagonalization of the Gram matrix."""
    G = M.T @ M
    n = G.shape[0]
    for _ in range(sweeps):
        off = np.abs(G - np.diag(np.diag(G))).max()
        if off < 1e-15 * np.abs(G).max():
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(G[p, q]) < 1e-18 * np.abs(G).max():
                    continue
                theta = (G[q, q] - G[p, p]) / (2 * G[p, q])
                t = np.sign(theta) / (abs(theta) * (1 + np.sqrt(1 + theta**-2))) if theta != 0 else 1.0
                c = 1 / np.sqrt(t**2 + 1)
                s = t * c
                R = np.eye(n)
                R[p, p] = R[q, q] = c
                R[p, q], R[q, p] = s, -s
                G = R.T @ G @ R
    return float(np.sqrt(np.max(np.diag(G))))


def test_spectral_random_matches_jacobi_oracle(rng):
    for _ in range(5):
        M = rng.standard_normal((5, 4))
        assert spectral_norm(M) == pytest.approx(_jacobi_singular_max(M), abs=1e-8)


def test_spectral_zero():
    assert spectral_norm(np.zeros((3, 2))) == 0.0


def test_spectral_deterministic(rng):
    M = rng.standard_normal((6, 6))
    assert spectral_norm(M) == spectral_norm(M)


def test_spectral_below_frobenius(rng):
    for _ in range(200):
        r, c = rng.integers(1, 8, size=2)
        M = rng.standard_normal((r, c))
        assert spectral_norm(M) <= frobenius_norm(M) + 1e-12


def test_frobenius_values():
    assert frobenius_norm(np.eye(2)) == pytest.approx(np.sqrt(2))
    assert frobenius_norm(np.zeros((2, 3))) == 0.0
    assert frobenius_norm([[1, 2], [2, 4]]) == 5.0


@given(arrays(np.float64, (3, 4), elements=st.floats(-10, 10)),
       arrays(np.float64, (4, 2), elements=st.floats(-10, 10)),
       arrays(np.float64, (2,), elements=st.floats(-10, 10)))
def test_matvec_associative(M1, M2, v):
    lhs = matvec(M1 @ M2, v)
    rhs = matvec(M1, matvec(M2, v))
    scale = np.abs(M1).sum() * np.abs(M2).max() * np.abs(v).max() + 1e-300
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * scale


def test_matvec_shape_error():
    with pytest.raises(ShapeError):
        matvec(np.zeros((2, 3)), np.zeros(2))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projunn.errors import InvalidArgumentError, SingularMatrixError
from projunn.manifold import haar_matrix
from projunn.numerics import (
    expm_dense,
    gram_schmidt,
    herm_eig_small,
    polar_project_dense,
    unitarity_error,
)

from conftest import random_matrix, random_skew


def test_gram_schmidt_drops_duplicates():
    e1, e2 = np.eye(3)[0], np.eye(3)[1]
    basis, rank = gram_schmidt([e1, e1, e2])
    assert rank == 2
    np.testing.assert_allclose(np.abs(basis), np.eye(3)[:, :2], atol=1e-15)


def test_gram_schmidt_normalizes():
    basis, rank = gram_schmidt([2 * np.eye(3)[0]])
    assert rank == 1
    np.testing.assert_allclose(basis[:, 0], [1, 0, 0])


def test_gram_schmidt_empty_input():
    basis, rank = gram_schmidt([])
    assert rank == 0 and basis.size == 0


def test_gram_schmidt_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        gram_schmidt([np.ones(3), np.ones(4)])


def test_gram_schmidt_matches_qr_span(rng):
    vecs = random_matrix(rng, (16, 6), "complex")
    basis, rank = gram_schmidt(vecs)
    assert rank == 6
    assert np.linalg.norm(basis.conj().T @ basis - np.eye(6)) < 1e-10
    q, _ = np.linalg.qr(vecs)
    # same span as the QR oracle, and every input is reproduced
    assert np.linalg.norm(q @ (q.conj().T @ basis) - basis) < 1e-10
    for j in range(6):
        v = vecs[:, j]
        assert np.linalg.norm(v - basis @ (basis.conj().T @ v)) < 1e-10


@settings(max_examples=1000, deadline=None)
@given(
    n=st.integers(1, 64),
    p=st.integers(1, 20),
    complex_=st.booleans(),
    seed=st.integers(0, 2**32 - 1),
    dup=st.booleans(),
)
def test_gram_schmidt_orthonormal_property(n, p, complex_, seed, dup):
    rng = np.random.default_rng(seed)
    vecs = random_matrix(rng, (n, p), "complex" if complex_ else "real")
    if dup and p > 1:
        vecs[:, -1] = vecs[:, 0] * 3 - 0.5 * vecs[:, -2] * (p > 2)
    basis, rank = gram_schmidt(vecs)
    assert rank <= min(n, p)
    assert np.linalg.norm(basis.conj().T @ basis - np.eye(rank)) < 1e-10


def test_herm_eig_small_trivial():
    eig = herm_eig_small(np.diag([1.0, 3.0]))
    np.testing.assert_allclose(eig.values, [3, 1])
    np.testing.assert_allclose(np.abs(eig.vectors), [[0, 1], [1, 0]])
    pauli_y = np.array([[0, 1j], [-1j, 0]])
    np.testing.assert_allclose(herm_eig_small(pauli_y).values, [1, -1], atol=1e-15)


def test_herm_eig_small_reconstruction(rng):
    a = random_matrix(rng, (8, 8), "complex")
    h = a + a.conj().T
    eig = herm_eig_small(h)
    rec = (eig.vectors * eig.values) @ eig.vectors.conj().T
    assert np.linalg.norm(h - rec) < 1e-9 * np.linalg.norm(h)
    assert np.all(np.diff(eig.values) <= 0)
    assert np.linalg.norm(eig.vectors.conj().T @ eig.vectors - np.eye(8)) < 1e-10


def test_herm_eig_small_rejects_non_hermitian(rng):
    with pytest.raises(InvalidArgumentError):
        herm_eig_small(random_matrix(rng, (4, 4)))


def test_polar_trivial_cases():
    np.testing.assert_allclose(polar_project_dense(np.diag([2.0, 0.5])), np.eye(2), atol=1e-15)
    t = 0.7
    rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    np.testing.assert_allclose(polar_project_dense(3 * rot), rot, atol=1e-15)


def test_polar_is_minimal_against_random_unitaries(rng):
    a = random_matrix(rng, (16, 16), "complex")
    u = polar_project_dense(a)
    assert unitarity_error(u) < 1e-10
    best = np.linalg.norm(a - u)
    for _ in range(100):
        v = haar_matrix(16, "complex", rng)
        assert best <= np.linalg.norm(a - v)


def test_polar_rejects_singular():
    with pytest.raises(SingularMatrixError):
        polar_project_dense(np.diag([1.0, 0.0]))


def test_polar_idempotent_and_scale_invariant(rng, field):
    u = haar_matrix(12, field, rng)
    assert np.linalg.norm(polar_project_dense(u) - u) < 1e-10
    a = random_matrix(rng, (12, 12), field)
    for c in (1e-3, 0.5, 7.0, 1e4):
        assert np.linalg.norm(polar_project_dense(c * a) - polar_project_dense(a)) < 1e-10


def test_expm_trivial():
    np.testing.assert_allclose(expm_dense(np.zeros((3, 3))), np.eye(3))
    t = np.pi / 2
    out = expm_dense(np.array([[0, t], [-t, 0]]))
    np.testing.assert_allclose(out, [[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]], atol=1e-15)
    assert out.dtype == np.float64


def test_expm_inverse_identity(rng, field):
    s = random_skew(rng, 8, field)
    prod = expm_dense(s) @ expm_dense(-s)
    assert np.linalg.norm(prod - np.eye(8)) < 1e-9
    eigs = np.linalg.eigvals(expm_dense(s))
    np.testing.assert_allclose(np.abs(eigs), 1.0, atol=1e-10)
    assert unitarity_error(expm_dense(s)) < 1e-10


def test_expm_general_fallback():
    a = np.array([[1.0, 2.0], [0.0, 1.0]])
    np.testing.assert_allclose(expm_dense(a), np.e * np.array([[1, 2], [0, 1]]))


def test_unitarity_error_values(rng):
    assert unitarity_error(np.eye(4)) == 0
    assert unitarity_error(2 * np.eye(3)) == pytest.approx(3 * np.sqrt(3))
    assert unitarity_error(haar_matrix(64, "complex", rng)) < 1e-12

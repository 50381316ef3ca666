"""Dense linear algebra primitives and the exact oracles for the fast paths.

Matrices are plain numpy arrays. The field is carried by the dtype:
``float64`` for the real/orthogonal case and ``complex128`` for the
complex/unitary case. Everything here is a pure function.
"""
import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidArgumentError, SingularMatrixError

ABS_FLOOR = 1e-14


def worker_count():
    """Worker pool size: ``PROJUNN_THREADS`` if set, else the CPU count."""
    raw = os.environ.get("PROJUNN_THREADS")
    if raw:
        try:
            count = int(raw)
        except ValueError:
            count = 0
        if count < 1:
            raise InvalidArgumentError(f"PROJUNN_THREADS must be a positive integer, got {raw!r}")
        return count
    return os.cpu_count() or 1


def is_complex(a):
    return np.iscomplexobj(a)


def field_dtype(field):
    """Map ``"real"``/``"complex"`` to the numpy dtype used for that field."""
    if field in ("real", float, np.float64):
        return np.float64
    if field in ("complex", complex, np.complex128):
        return np.complex128
    raise InvalidArgumentError(f"unknown field {field!r}; expected 'real' or 'complex'")


def field_of(a):
    return "complex" if is_complex(a) else "real"


def as_matrix(a, name="matrix"):
    """Coerce to a 2-D float64/complex128 array."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {a.shape}")
    if is_complex(a):
        return a.astype(np.complex128, copy=False)
    return a.astype(np.float64, copy=False)


def adjoint(a):
    """Conjugate transpose; a view for real input."""
    return a.conj().T if is_complex(a) else a.T


def frob(a):
    return float(np.linalg.norm(a))


@dataclass(frozen=True)
class EigPair:
    """Eigendecomposition ``H = vectors @ diag(values) @ vectors^H``.

    ``values`` are sorted in descending order.
    """

    values: np.ndarray
    vectors: np.ndarray


def gram_schmidt(vectors, tol=1e-10):
    """Orthonormal basis of the span of ``vectors``.

    Modified Gram-Schmidt followed by one full re-orthogonalization pass.
    A vector is dropped when its residual after projection falls below
    ``tol`` times its original norm.

    Args:
        vectors: either a sequence of 1-D arrays of equal length or a 2-D
            array whose columns are the vectors.
        tol: relative drop tolerance.

    Returns:
        ``(basis, rank)`` where ``basis`` has shape ``(n, rank)``.
    """
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    if isinstance(vectors, np.ndarray) and vectors.ndim == 2:
        cols = vectors
    else:
        vectors = list(vectors)
        if not vectors:
            return np.zeros((0, 0)), 0
        lengths = {np.shape(v) for v in vectors}
        if len(lengths) != 1 or len(next(iter(lengths))) != 1:
            raise InvalidArgumentError(f"vectors must be 1-D of equal length, got shapes {sorted(lengths)}")
        cols = np.stack([np.asarray(v) for v in vectors], axis=1)
    dtype = np.complex128 if is_complex(cols) else np.float64
    cols = cols.astype(dtype, copy=False)
    n, p = cols.shape
    basis = np.empty((n, min(n, p)), dtype=dtype)
    rank = 0
    for j in range(p):
        v = cols[:, j].copy()
        norm0 = np.linalg.norm(v)
        if norm0 <= ABS_FLOOR or rank == n:
            continue
        for _ in range(2):  # second sweep is the re-orthogonalization pass
            for i in range(rank):
                q = basis[:, i]
                v -= q * np.vdot(q, v)
        res = np.linalg.norm(v)
        if res < tol * norm0:
            continue
        basis[:, rank] = v / res
        rank += 1
    return basis[:, :rank], rank


def herm_eig_small(h, tol=1e-8):
    """Eigendecomposition of a small Hermitian matrix, eigenvalues descending."""
    h = as_matrix(h, "H")
    m = h.shape[0]
    if h.shape != (m, m):
        raise InvalidArgumentError(f"H must be square, got {h.shape}")
    if m == 0:
        return EigPair(np.zeros(0), np.zeros((0, 0), dtype=h.dtype))
    scale = max(frob(h), ABS_FLOOR)
    if frob(h - adjoint(h)) > tol * scale:
        raise InvalidArgumentError("matrix is not Hermitian within tolerance")
    sym = 0.5 * (h + adjoint(h))
    values, vectors = np.linalg.eigh(sym)
    return EigPair(values[::-1].copy(), vectors[:, ::-1].copy())


def polar_project_dense(a):
    """Frobenius-nearest unitary (orthogonal for real input) via a full SVD.

    Raises:
        SingularMatrixError: if ``a`` is numerically rank deficient.
    """
    a = as_matrix(a, "A")
    if a.shape[0] != a.shape[1]:
        raise InvalidArgumentError(f"A must be square, got {a.shape}")
    w, s, vh = np.linalg.svd(a)
    if a.size and s[-1] <= 1e-12 * s[0]:
        raise SingularMatrixError(
            f"matrix is rank deficient (sigma_min/sigma_max = {s[-1] / s[0]:.3e}); polar factor not unique"
        )
    return w @ vh


def is_skew_hermitian(a, tol=1e-12):
    return frob(a + adjoint(a)) <= tol * max(frob(a), ABS_FLOOR)


def expm_dense(a):
    """Dense matrix exponential.

    Skew-Hermitian input goes through the Hermitian eigendecomposition of
    ``i*A``; anything else falls back to scaling-and-squaring.
    """
    a = as_matrix(a, "A")
    if a.shape[0] != a.shape[1]:
        raise InvalidArgumentError(f"A must be square, got {a.shape}")
    if not is_skew_hermitian(a):
        return scipy.linalg.expm(a)
    eig = herm_eig_small(1j * a)
    # A = V diag(-i*lam) V^H
    phases = np.exp(-1j * eig.values)
    out = (eig.vectors * phases) @ eig.vectors.conj().T
    if not is_complex(a):
        return out.real.copy()
    return out


def unitarity_error(u):
    """``||U^H U - I||_F``."""
    u = as_matrix(u, "U")
    if u.shape[0] != u.shape[1]:
        raise InvalidArgumentError(f"U must be square, got {u.shape}")
    gram = adjoint(u) @ u
    gram[np.diag_indices_from(gram)] -= 1.0
    return frob(gram)

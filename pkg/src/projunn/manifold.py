"""Rank-k updates that keep a square parameter exactly unitary/orthogonal.

Two update rules are provided:

* ``update_direct`` (projUNN-D): step in the ambient space, then snap back
  to the nearest unitary with a polar projection restricted to the <= 2k
  dimensional subspace touched by the update.
* ``update_tangent`` (projUNN-T): project the gradient onto the tangent
  space and move along the geodesic, again working in the <= 2k dimensional
  subspace.

Both cost O(k n^2): a handful of panel products against ``U`` plus
O(k^2 n + k^3) subspace work.
"""
import enum
import math
import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import blas

from .errors import (
    CorruptFileError,
    InvalidArgumentError,
    InvalidStateError,
    StepTooLargeError,
)
from .lowrank import LowRankFactor
from .numerics import (
    ABS_FLOOR,
    adjoint,
    as_matrix,
    expm_dense,
    field_dtype,
    field_of,
    frob,
    gram_schmidt,
    herm_eig_small,
    polar_project_dense,
    unitarity_error,
)

UNITARY_TOL = 1e-6
SINGULAR_MARGIN = 1e-10


class UpdateMode(str, enum.Enum):
    DIRECT = "direct"
    TANGENT = "tangent"


class InitScheme(str, enum.Enum):
    IDENTITY = "identity"
    HENAFF = "henaff"
    CAYLEY = "cayley"
    HAAR = "haar"


@dataclass(frozen=True)
class UnitaryParameter:
    """A unitary (complex) or orthogonal (real) matrix plus drift bookkeeping.

    ``reprojection_interval=None`` disables periodic re-projection. The
    drift guard still re-projects if the cheap drift probe ever exceeds
    ``drift_tolerance``; ``reprojections`` counts every re-projection.
    """

    matrix: np.ndarray
    steps_since_reprojection: int = 0
    reprojection_interval: int | None = -1
    drift_tolerance: float = UNITARY_TOL
    reprojections: int = 0
    mode: UpdateMode = UpdateMode.TANGENT

    def __post_init__(self):
        m = as_matrix(self.matrix, "matrix")
        if m.shape[0] != m.shape[1]:
            raise InvalidArgumentError(f"unitary parameter must be square, got {m.shape}")
        object.__setattr__(self, "matrix", m)
        if self.reprojection_interval == -1:
            object.__setattr__(self, "reprojection_interval", m.shape[0])
        if self.reprojection_interval is not None and self.reprojection_interval < 1:
            raise InvalidArgumentError("reprojection_interval must be >= 1 or None")
        object.__setattr__(self, "mode", UpdateMode(self.mode))

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def field(self):
        return field_of(self.matrix)

    def unitarity_error(self):
        return unitarity_error(self.matrix)


def _check_unitary(u, tol=UNITARY_TOL):
    err = unitarity_error(u)
    if err >= tol:
        raise InvalidStateError(f"matrix is not unitary (||U^H U - I||_F = {err:.3e} >= {tol:g})")


def tangent_project(u, x):
    """Orthogonal projection of ``X`` onto the tangent space at ``U``.

    ``P = (X - U X^H U) / 2``; ``U^H P`` is skew-Hermitian and ``P`` is the
    Frobenius-closest tangent vector to ``X``.
    """
    u = as_matrix(u, "U")
    x = as_matrix(x, "X")
    if u.shape != x.shape or u.shape[0] != u.shape[1]:
        raise InvalidArgumentError(f"shape mismatch: U {u.shape}, X {x.shape}")
    _check_unitary(u)
    return 0.5 * (x - u @ adjoint(x) @ u)


def _adj_times(panel, u):
    """``U^H @ panel`` without materializing ``U^H`` (keeps it O(k n^2))."""
    return adjoint(adjoint(panel) @ u)


def _as_factor(g, n):
    if isinstance(g, LowRankFactor):
        if g.shape != (n, n):
            raise InvalidArgumentError(f"gradient factor shape {g.shape} does not match parameter ({n}, {n})")
        return g
    g = as_matrix(g, "G")
    if g.shape != (n, n):
        raise InvalidArgumentError(f"gradient shape {g.shape} does not match parameter ({n}, {n})")
    return LowRankFactor.from_dense(g)


def _working_dtype(u, g):
    if np.iscomplexobj(u) or np.iscomplexobj(g.left):
        if not np.iscomplexobj(u):
            raise InvalidArgumentError("complex gradient for a real (orthogonal) parameter")
        return np.complex128
    return np.float64


def _add_outer(u, x, y):
    """``U + X Y^H`` with a single in-place GEMM on a copy of ``U``."""
    dtype = np.result_type(u, x, y)
    out = np.array(u, dtype=dtype, order="C")
    gemm = blas.zgemm if dtype == np.complex128 else blas.dgemm
    # out^T is Fortran-ordered; out^T += conj(Y) X^T
    gemm(1.0, np.conj(y) if dtype == np.complex128 else y, x, beta=1.0, c=out.T, trans_b=1, overwrite_c=1)
    return out


def _drift_probe(u, step):
    """Cheap O(n^2) estimate of ``||U^H U - I||_F`` from two random probes."""
    n = u.shape[0]
    z = np.random.default_rng(step).standard_normal((n, 2))
    r = _adj_times(u @ z, u) - z
    return math.sqrt(n) * frob(r) / frob(z)


def _finish(param, new_matrix):
    steps = param.steps_since_reprojection + 1
    reprojections = param.reprojections
    interval = param.reprojection_interval
    if (interval is not None and steps >= interval) or _drift_probe(new_matrix, steps) >= 0.5 * param.drift_tolerance:
        new_matrix = polar_project_dense(new_matrix)
        steps = 0
        reprojections += 1
    return replace(param, matrix=new_matrix, steps_since_reprojection=steps, reprojections=reprojections)


def direct_matrix(u, g, eta):
    """Matrix part of ``update_direct``; ``g`` is a ``LowRankFactor``."""
    n = u.shape[0]
    dtype = _working_dtype(u, g)
    a = (-eta) * g.left.astype(dtype, copy=False)  # M~ = U + a b^H
    b = g.right.astype(dtype, copy=False)
    if eta == 0 or frob(a) <= ABS_FLOOR or frob(b) <= ABS_FLOOR:
        return u
    # a_hat = M~^H a = U^H a + b (a^H a)
    aha = adjoint(a) @ a
    a_hat = _adj_times(a, u) + b @ aha
    q, r = gram_schmidt(np.concatenate([b, a_hat], axis=1))
    if r == 0:
        return u
    bq = adjoint(q) @ b
    aq = adjoint(q) @ a_hat
    # Q^H (M~^H M~ - I) Q = Aq Bq^H + Bq Aq^H - Bq (a^H a) Bq^H
    h = aq @ adjoint(bq) + bq @ adjoint(aq) - bq @ aha @ adjoint(bq)
    eig = herm_eig_small(0.5 * (h + adjoint(h)))
    s_min = eig.values.min()
    if s_min <= -1 + SINGULAR_MARGIN:
        raise StepTooLargeError(
            f"perturbed matrix is singular (subspace eigenvalue {s_min:.3e} <= -1); reduce eta",
            min_eigenvalue=float(s_min),
        )
    uvecs = q @ eig.vectors  # n x r, orthonormal
    coef = 1.0 / np.sqrt(eig.values + 1.0) - 1.0
    m_u = u @ uvecs + a @ (adjoint(b) @ uvecs)  # M~ u_j
    # output = M~ + sum_j coef_j (M~ u_j) u_j^H, with M~ = U + a b^H
    left = np.concatenate([a, m_u * coef], axis=1)
    right = np.concatenate([b, uvecs], axis=1)
    return _add_outer(u, left, right)


def tangent_matrix(u, g, eta):
    """Matrix part of ``update_tangent``; ``g`` is a ``LowRankFactor``."""
    dtype = _working_dtype(u, g)
    a = g.left.astype(dtype, copy=False)
    b = g.right.astype(dtype, copy=False)
    if eta == 0 or frob(a) <= ABS_FLOOR or frob(b) <= ABS_FLOOR:
        return u
    a_hat = _adj_times(a, u)  # U^H a
    q, r = gram_schmidt(np.concatenate([b, a_hat], axis=1))
    if r == 0:
        return u
    bq = adjoint(q) @ b
    aq = adjoint(q) @ a_hat
    skew = 0.5 * (aq @ adjoint(bq) - bq @ adjoint(aq))  # Q^H (U^H Pi(G)) Q
    # i*skew is Hermitian; skew = V diag(-i*lam) V^H
    eig = herm_eig_small(1j * skew)
    factor = np.exp(1j * eta * eig.values) - 1.0  # exp(-eta s_j) - 1 with s_j = -i lam_j
    # exp(-eta * skew) - I = C diag(factor) C^H, an r x r matrix
    kernel = (eig.vectors * factor) @ adjoint(eig.vectors)
    if not np.iscomplexobj(u):
        # q is real here, so the update is real iff the kernel is
        resid = frob(kernel.imag)
        if resid > 1e-10:
            raise InvalidStateError(f"orthogonal tangent update has imaginary residue {resid:.3e}")
        kernel = kernel.real
    return _add_outer(u, u @ q, q @ adjoint(kernel))


def update_direct(param, g, eta):
    """projUNN-D: nearest unitary to ``U - eta * G`` for a rank-k ``G``.

    Raises:
        StepTooLargeError: if ``U - eta * G`` is (numerically) singular.
    """
    g = _as_factor(g, param.n)
    new = direct_matrix(param.matrix, g, eta)
    if new is param.matrix:
        return param
    return _finish(param, new)


def update_tangent(param, g, eta):
    """projUNN-T: ``U exp(-eta U^H Pi_U(G))`` for a rank-k ``G``."""
    g = _as_factor(g, param.n)
    new = tangent_matrix(param.matrix, g, eta)
    if new is param.matrix:
        return param
    return _finish(param, new)


def update(param, g, eta, mode=None):
    mode = UpdateMode(mode or param.mode)
    if mode is UpdateMode.DIRECT:
        return update_direct(param, g, eta)
    return update_tangent(param, g, eta)


def direct_oracle(u, g_dense, eta):
    """Dense reference for ``update_direct``: full-SVD polar projection."""
    return polar_project_dense(u - eta * g_dense)


def tangent_oracle(u, g_dense, eta):
    """Dense reference for ``update_tangent`` via a dense matrix exponential."""
    return u @ expm_dense(-eta * adjoint(u) @ tangent_project(u, g_dense))


def reproject(param):
    return replace(
        param,
        matrix=polar_project_dense(param.matrix),
        steps_since_reprojection=0,
        reprojections=param.reprojections + 1,
    )


def _rotation_blocks(angles, dtype):
    n = 2 * len(angles)
    u = np.zeros((n, n), dtype=dtype)
    c, s = np.cos(angles), np.sin(angles)
    idx = np.arange(0, n, 2)
    u[idx, idx] = c
    u[idx, idx + 1] = s
    u[idx + 1, idx] = -s
    u[idx + 1, idx + 1] = c
    return u


def haar_matrix(n, field="complex", rng=None):
    """Haar-distributed unitary/orthogonal matrix (QR with phase correction)."""
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if field_dtype(field) is np.complex128:
        z = (gen.standard_normal((n, n)) + 1j * gen.standard_normal((n, n))) / math.sqrt(2)
    else:
        z = gen.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    phase = d / np.abs(d)
    return q * phase


def init_parameter(n, scheme=InitScheme.IDENTITY, field="real", rng=None, **kwargs):
    """Initial unitary/orthogonal parameter.

    ``henaff`` and ``cayley`` build block-diagonal 2x2 rotations and need
    even ``n``; ``haar`` samples from the Haar measure. Extra keyword
    arguments go to ``UnitaryParameter``.
    """
    scheme = InitScheme(scheme)
    dtype = field_dtype(field)
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if scheme is InitScheme.IDENTITY:
        u = np.eye(n, dtype=dtype)
    elif scheme in (InitScheme.HENAFF, InitScheme.CAYLEY):
        if n % 2:
            raise InvalidArgumentError(f"{scheme.value} initialization needs even n, got {n}")
        if scheme is InitScheme.HENAFF:
            angles = gen.uniform(-np.pi, np.pi, n // 2)
        else:
            t = gen.uniform(0.0, np.pi / 2, n // 2)
            angles = np.sqrt((1 - np.cos(t)) / (1 + np.cos(t)))
        u = _rotation_blocks(angles, dtype)
    else:
        u = haar_matrix(n, field, gen).astype(dtype, copy=False)
    return UnitaryParameter(u, **kwargs)


def first_order_gap(param, g, eta):
    """``||update_direct - update_tangent||_F``; scales like ``eta**2``."""
    if eta < 0:
        raise InvalidArgumentError("eta must be non-negative")
    g = _as_factor(g, param.n)
    return frob(direct_matrix(param.matrix, g, eta) - tangent_matrix(param.matrix, g, eta))


# -- binary save/load ---------------------------------------------------------

_PARAM_MAGIC = b"PUNN"
_PARAM_VERSION = 1
_PARAM_HEADER = struct.Struct("<4sIIBB")
_MODE_CODES = {UpdateMode.DIRECT: 0, UpdateMode.TANGENT: 1}


def dump_parameter(param):
    """Serialize to bytes: header then row-major little-endian f64 entries."""
    complex_flag = 1 if param.field == "complex" else 0
    header = _PARAM_HEADER.pack(_PARAM_MAGIC, _PARAM_VERSION, param.n, complex_flag, _MODE_CODES[param.mode])
    data = param.matrix
    if complex_flag:
        data = np.stack([data.real, data.imag], axis=-1)
    return header + np.ascontiguousarray(data, dtype="<f8").tobytes()


def parse_parameter(blob, tol=UNITARY_TOL):
    if len(blob) < _PARAM_HEADER.size:
        raise CorruptFileError("file too short for PUNN header")
    magic, version, n, complex_flag, mode = _PARAM_HEADER.unpack_from(blob)
    if magic != _PARAM_MAGIC:
        raise CorruptFileError(f"bad magic {magic!r}")
    if version != _PARAM_VERSION:
        raise CorruptFileError(f"unsupported version {version}")
    if complex_flag not in (0, 1) or mode not in (0, 1):
        raise CorruptFileError("bad field/mode byte")
    width = 2 if complex_flag else 1
    expected = _PARAM_HEADER.size + 8 * n * n * width
    if len(blob) != expected:
        raise CorruptFileError(f"expected {expected} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f8", offset=_PARAM_HEADER.size).astype(np.float64)
    if complex_flag:
        data = data.reshape(n, n, 2)
        matrix = data[..., 0] + 1j * data[..., 1]
    else:
        matrix = data.reshape(n, n).copy()
    if not np.all(np.isfinite(matrix)):
        raise CorruptFileError("non-finite entries")
    err = unitarity_error(matrix)
    if err >= tol:
        raise CorruptFileError(f"stored matrix is not unitary (error {err:.3e})")
    return UnitaryParameter(matrix, mode=UpdateMode.DIRECT if mode == 0 else UpdateMode.TANGENT)


def save_parameter(param, path):
    with open(path, "wb") as fh:
        fh.write(dump_parameter(param))


def load_parameter(path, tol=UNITARY_TOL):
    with open(path, "rb") as fh:
        return parse_parameter(fh.read(), tol)

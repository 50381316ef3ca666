"""Factored low-rank matrices and randomized rank-k gradient samplers."""
import io
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .numerics import ABS_FLOOR, adjoint, as_matrix, frob, herm_eig_small

SAMPLERS = ("column", "lsi", "exact")


@dataclass(frozen=True)
class LowRankFactor:
    """``G = left @ right^H`` with ``left`` n x k and ``right`` m x k."""

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left, right = np.asarray(self.left), np.asarray(self.right)
        if left.ndim != 2 or right.ndim != 2:
            raise InvalidArgumentError("factor panels must be 2-D")
        if left.shape[1] != right.shape[1] or left.shape[1] < 1:
            raise InvalidArgumentError(
                f"panels need a shared column count >= 1, got {left.shape} and {right.shape}"
            )
        if np.iscomplexobj(left) != np.iscomplexobj(right):
            dtype = np.complex128
            left, right = left.astype(dtype), right.astype(dtype)
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def shape(self):
        return self.left.shape[0], self.right.shape[0]

    @property
    def k(self):
        return self.left.shape[1]

    @property
    def dtype(self):
        return self.left.dtype

    def dense(self):
        return self.left @ adjoint(self.right)

    def scaled(self, c):
        """Factor for ``c * G`` (the scale is folded into the left panel)."""
        return LowRankFactor(c * self.left, self.right)

    @classmethod
    def zeros(cls, n, m, k=1, dtype=np.float64):
        return cls(np.zeros((n, k), dtype=dtype), np.zeros((m, k), dtype=dtype))

    @classmethod
    def from_dense(cls, a):
        """Exact full-rank factor ``A = A @ I^H`` (useful for oracles)."""
        a = as_matrix(a)
        return cls(a.copy(), np.eye(a.shape[1], dtype=a.dtype))


def rel_error(a, approx):
    """Relative Frobenius error ``||A - A_k||_F / ||A||_F`` (0 for A = 0)."""
    a = as_matrix(a)
    if isinstance(approx, LowRankFactor):
        approx = approx.dense()
    na = frob(a)
    if na <= ABS_FLOOR:
        return 0.0 if frob(approx) <= ABS_FLOOR else float("inf")
    return frob(a - approx) / na


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def column_sample(a, k, c=None, rng=None):
    """Linear-time SVD: rank-k factor built from ``c`` norm-weighted columns.

    Columns are drawn i.i.d. with probability proportional to their squared
    norm and rescaled by ``1/sqrt(c p_j)``. The left panel holds approximate
    top-k left singular vectors ``H``; the right panel is ``A^H H`` so the
    factor equals ``H H^H A``.
    """
    a = as_matrix(a, "A")
    n, m = a.shape
    if c is None:
        c = min(4 * k, m)
    if not 1 <= k <= c <= m:
        raise InvalidArgumentError(f"need 1 <= k <= c <= m, got k={k}, c={c}, m={m}")
    gen = _rng(rng)
    col_sq = np.einsum("ij,ij->j", a.conj(), a).real if np.iscomplexobj(a) else np.einsum("ij,ij->j", a, a)
    total = col_sq.sum()
    if total <= ABS_FLOOR**2:
        return LowRankFactor.zeros(n, m, k, a.dtype)
    p = col_sq / total
    idx = gen.choice(m, size=c, replace=True, p=p)
    panel = a[:, idx] / np.sqrt(c * p[idx])
    eig = herm_eig_small(adjoint(panel) @ panel)
    sig2 = eig.values[:k]
    keep = sig2 > 1e-12 * max(eig.values[0], ABS_FLOOR)
    h = np.zeros((n, k), dtype=a.dtype)
    if keep.any():
        h[:, keep] = (panel @ eig.vectors[:, :k][:, keep]) / np.sqrt(sig2[keep])
    return LowRankFactor(h, adjoint(a) @ h)


def lsi_sample(a, k, oversample=5, rng=None):
    """Randomized range finder followed by a truncated SVD of the projection.

    No power iterations. The Gaussian test matrix is real even for complex
    ``A``.
    """
    a = as_matrix(a, "A")
    n, m = a.shape
    if k < 1 or oversample < 0 or k + oversample > min(n, m):
        raise InvalidArgumentError(
            f"need k >= 1 and k + oversample <= min(n, m); got k={k}, oversample={oversample}, shape={a.shape}"
        )
    gen = _rng(rng)
    if frob(a) <= ABS_FLOOR:
        return LowRankFactor.zeros(n, m, k, a.dtype)
    omega = gen.standard_normal((m, k + oversample))
    q, _ = np.linalg.qr(a @ omega)
    b = adjoint(q) @ a
    ub, sb, vbh = np.linalg.svd(b, full_matrices=False)
    left = (q @ ub[:, :k]) * sb[:k]
    return LowRankFactor(left, adjoint(vbh[:k]))


def truncated_svd_oracle(a, k):
    """Best rank-k approximation (Eckart-Young) via a full SVD."""
    a = as_matrix(a, "A")
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    r = min(k, s.size)
    left = np.zeros((a.shape[0], k), dtype=a.dtype)
    right = np.zeros((a.shape[1], k), dtype=a.dtype)
    left[:, :r] = u[:, :r] * s[:r]
    right[:, :r] = adjoint(vh[:r])
    return LowRankFactor(left, right)


def sample_gradient(g, k, sampler="column", rng=None):
    """Dispatch to one of the samplers by name.

    ``column`` uses ``c = min(4k, m)``; ``lsi`` clamps the oversampling so
    ``k + oversample <= min(n, m)``.
    """
    g = as_matrix(g, "G")
    n, m = g.shape
    k = min(k, n, m)
    if sampler == "column":
        return column_sample(g, k, min(4 * k, m), rng)
    if sampler == "lsi":
        return lsi_sample(g, k, min(5, min(n, m) - k), rng)
    if sampler == "exact":
        return truncated_svd_oracle(g, k)
    raise InvalidArgumentError(f"unknown sampler {sampler!r}; expected one of {SAMPLERS}")


@dataclass(frozen=True)
class RankProfile:
    singular_values: np.ndarray
    rel_error_curve: np.ndarray
    stable_rank: float

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# stable_rank={float(self.stable_rank)!r}\n")
        buf.write("k,rel_error\n")
        for k, e in enumerate(self.rel_error_curve, start=1):
            buf.write(f"{k},{float(e)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = [ln for ln in text.strip().splitlines() if ln]
        if not lines[0].startswith("# stable_rank="):
            raise InvalidArgumentError("missing stable_rank header")
        stable_rank = float(lines[0].split("=", 1)[1])
        if lines[1] != "k,rel_error":
            raise InvalidArgumentError("missing column header")
        curve = np.array([float(ln.split(",")[1]) for ln in lines[2:]])
        return cls(np.zeros(0), curve, stable_rank)


def rank_profile(a, K):
    """Relative error of the optimal rank-k approximation for k = 1..K."""
    a = as_matrix(a, "A")
    s = np.linalg.svd(a, compute_uv=False)
    total = float(np.sum(s**2))
    if total <= ABS_FLOOR**2:
        return RankProfile(s, np.zeros(K), 0.0)
    # tail[k] = sum_{i >= k} s_i^2, accumulated from the small end
    tail = np.concatenate([np.cumsum((s**2)[::-1])[::-1], [0.0]])
    ks = np.minimum(np.arange(1, K + 1), s.size)
    curve = np.sqrt(np.maximum(tail[ks], 0.0) / total)
    curve = np.minimum.accumulate(curve)
    return RankProfile(s, curve, total / float(s[0] ** 2))

"""Unitary/orthogonal cyclic convolution parameterized by per-frequency blocks.

A filter stores, for each 2-D frequency ``f = (r, s)``, the C x C unitary
matrix ``V_f`` applied to the FFT of the input::

    Y = ifft2( V_f @ fft2(X)_f )

which is a cyclic cross-correlation with the spatial filter
``W = fft2(V) / (M N)`` (FFT over the two frequency axes).

Real (orthogonal) filters need ``V_{-f} = conj(V_f)``. Only a canonical
half-grid of blocks is stored and the rest are derived by conjugation, so the
symmetry holds by construction. Frequency ``(r, s)`` is canonical when
``(s, r) <= (s', r')`` lexicographically, where ``(r', s') = (-r mod M,
-s mod N)`` is its mirror. Self-paired frequencies (mirror equals itself)
hold real orthogonal blocks.
"""
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import CorruptFileError, CorruptSymmetryError, InvalidArgumentError
from .lowrank import sample_gradient
from .manifold import UNITARY_TOL, InitScheme, UnitaryParameter, init_parameter, update
from .numerics import unitarity_error, worker_count

IMAG_TOL = 1e-8


def mirror(freq, M, N):
    r, s = freq
    return (-r) % M, (-s) % N


def canonical_freqs(M, N, realness):
    """Stored frequencies in canonical order (row-major over the grid)."""
    freqs = []
    for r in range(M):
        for s in range(N):
            mr, ms = mirror((r, s), M, N)
            if not realness or (s, r) <= (ms, mr):
                freqs.append((r, s))
    return tuple(freqs)


def self_paired(M, N):
    return tuple((r, s) for r in range(M) for s in range(N) if mirror((r, s), M, N) == (r, s))


@dataclass(frozen=True)
class UConvFilter:
    """Per-frequency unitary blocks on the canonical grid.

    ``blocks[i]`` is the ``UnitaryParameter`` for ``freqs[i]``; for real
    filters the self-paired blocks are real and all others complex.
    """

    blocks: tuple
    shape: tuple
    channels: int
    realness: bool

    def __post_init__(self):
        M, N = self.shape
        freqs = canonical_freqs(M, N, self.realness)
        if len(self.blocks) != len(freqs):
            raise InvalidArgumentError(f"expected {len(freqs)} blocks, got {len(self.blocks)}")
        paired = set(self_paired(M, N)) if self.realness else set()
        for f, blk in zip(freqs, self.blocks):
            if blk.n != self.channels:
                raise InvalidArgumentError(f"block at {f} is {blk.n}x{blk.n}, expected {self.channels}")
            if f in paired and np.iscomplexobj(blk.matrix):
                raise InvalidArgumentError(f"self-paired block at {f} must be real")
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def freqs(self):
        return canonical_freqs(*self.shape, self.realness)

    def grid(self):
        """All ``M x N`` applied blocks as an ``(M, N, C, C)`` complex array."""
        M, N = self.shape
        C = self.channels
        out = np.empty((M, N, C, C), dtype=np.complex128)
        for (r, s), blk in zip(self.freqs, self.blocks):
            out[r, s] = blk.matrix
            if self.realness:
                out[mirror((r, s), M, N)] = blk.matrix.conj()
        return out

    def unitarity_error(self):
        return max(unitarity_error(b.matrix) for b in self.blocks)


def init_uconv(M, N, C, scheme=InitScheme.HAAR, realness=True, rng=None):
    """Independent per-block initialization on the canonical grid."""
    scheme = InitScheme(scheme)
    if scheme is InitScheme.CAYLEY:
        raise InvalidArgumentError("convolution filters support identity, haar and henaff initialization")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    paired = set(self_paired(M, N)) if realness else set()
    blocks = [
        init_parameter(C, scheme, "real" if f in paired else "complex", gen)
        for f in canonical_freqs(M, N, realness)
    ]
    return UConvFilter(tuple(blocks), (M, N), C, realness)


def _check_input(flt, X):
    X = np.asarray(X)
    if X.ndim != 4 or X.shape[1:] != (*flt.shape, flt.channels):
        raise InvalidArgumentError(f"input must be (b, {flt.shape[0]}, {flt.shape[1]}, {flt.channels}), got {X.shape}")
    if not flt.realness and not np.iscomplexobj(X):
        raise InvalidArgumentError("real input given to a complex-only filter")
    return X


def _apply(grid, xh):
    return np.einsum("rsij,brsj->brsi", grid, xh)


def _maybe_real(y, want_real):
    if not want_real:
        return y
    resid = np.abs(y.imag).max(initial=0.0)
    if resid > IMAG_TOL * max(1.0, np.abs(y.real).max(initial=0.0)):
        raise CorruptSymmetryError(f"imaginary residue {resid:.3g} on a real filter output")
    return y.real.copy()


def uconv_forward(flt, X):
    """Apply the filter: per-frequency block multiply between 2-D FFTs."""
    X = _check_input(flt, X)
    y = np.fft.ifft2(_apply(flt.grid(), np.fft.fft2(X, axes=(1, 2))), axes=(1, 2))
    return _maybe_real(y, flt.realness and not np.iscomplexobj(X))


def _fold(flt, grid_grads):
    """Collapse full-grid gradients onto the stored blocks."""
    M, N = flt.shape
    out = []
    for f in flt.freqs:
        g = grid_grads[f]
        if flt.realness:
            m = mirror(f, M, N)
            g = g.real.copy() if m == f else g + grid_grads[m].conj()
        out.append(g)
    return out


def uconv_backward(flt, X, dY):
    """Gradients for the stored blocks and the input.

    Returns ``(block_grads, dX)`` where ``block_grads[i]`` is the C x C
    gradient for ``flt.blocks[i]`` (real for self-paired real blocks).
    """
    X = _check_input(flt, X)
    dY = np.asarray(dY)
    if dY.shape != X.shape:
        raise InvalidArgumentError(f"dY shape {dY.shape} does not match input {X.shape}")
    M, N = flt.shape
    grid = flt.grid()
    xh = np.fft.fft2(X, axes=(1, 2))
    gh = np.fft.fft2(dY, axes=(1, 2)) / (M * N)
    grid_grads = np.einsum("brsi,brsj->rsij", gh, xh.conj())
    dX = np.fft.ifft2(np.einsum("rsji,brsj->brsi", grid.conj(), np.fft.fft2(dY, axes=(1, 2))), axes=(1, 2))
    if not np.iscomplexobj(X):
        dX = dX.real.copy()
    return _fold(flt, grid_grads), dX


def _update_block(args):
    blk, grad, k, eta, mode, sampler, rng = args
    if not np.iscomplexobj(blk.matrix):
        grad = np.real(grad)
    if eta == 0 or not np.any(grad):
        return blk
    factor = sample_gradient(grad, min(k, blk.n), sampler, rng=rng)
    return update(blk, factor, eta, mode)


def uconv_update(flt, block_grads, k, eta, mode="tangent", sampler="column", rng=None, workers=None):
    """Rank-``k`` projUNN update of every stored block.

    Blocks are updated independently, possibly on several threads. A
    failure in any block (e.g. a too-large Direct step) propagates and no
    partially updated filter is returned.
    """
    if k > flt.channels:
        raise InvalidArgumentError(f"rank {k} exceeds the channel count {flt.channels}")
    if len(block_grads) != len(flt.blocks):
        raise InvalidArgumentError("one gradient per stored block is required")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    seeds = gen.integers(0, 2**63, len(flt.blocks))
    jobs = [
        (blk, g, k, eta, mode, sampler, np.random.default_rng(s))
        for blk, g, s in zip(flt.blocks, block_grads, seeds)
    ]
    workers = workers or worker_count()
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            new = list(pool.map(_update_block, jobs))
    else:
        new = [_update_block(j) for j in jobs]
    return UConvFilter(tuple(new), flt.shape, flt.channels, flt.realness)


def filter_to_spatial(flt):
    """Spatial filter ``W[m, n, d, c]`` of the cross-correlation the blocks apply."""
    M, N = flt.shape
    w = np.fft.fft2(flt.grid(), axes=(0, 1)) / (M * N)
    if not flt.realness:
        return w
    resid = np.abs(w.imag).max(initial=0.0)
    if resid > IMAG_TOL:
        raise CorruptSymmetryError(f"spatial filter has imaginary residue {resid:.3g}")
    return w.real.copy()


def spatial_to_blocks(w):
    """Inverse of ``filter_to_spatial`` on the full grid (no unitarity check)."""
    M, N = w.shape[:2]
    return np.fft.ifft2(w, axes=(0, 1)) * (M * N)


def cyclic_conv_oracle(w, X):
    """Brute-force cyclic cross-correlation, ``Y[p,q,d] = sum W[m,n,d,c] X[p+m, q+n, c]``."""
    M, N, D, C = w.shape
    if M * N * C * C > 10**6:
        raise InvalidArgumentError("oracle is meant for small filters only")
    X = np.asarray(X)
    b = X.shape[0]
    Y = np.zeros((b, M, N, D), dtype=np.result_type(w, X))
    for p in range(M):
        for q in range(N):
            for m in range(M):
                for n in range(N):
                    Y[:, p, q, :] += X[:, (p + m) % M, (q + n) % N, :] @ w[m, n].T
    return Y


def locality_penalty(flt, window, weight=1.0):
    """Squared spatial mass outside a centered ``window x window`` support.

    Returns ``(value, block_grads)``; the support is the cyclic neighbourhood
    ``|m| <= window // 2``, ``|n| <= window // 2`` of offset zero.
    """
    M, N = flt.shape
    h = window // 2
    dm = np.minimum(np.arange(M), M - np.arange(M))
    dn = np.minimum(np.arange(N), N - np.arange(N))
    outside = ~((dm[:, None] <= h) & (dn[None, :] <= h))
    w = np.fft.fft2(flt.grid(), axes=(0, 1)) / (M * N)
    value = weight * float(np.sum(np.abs(w[outside]) ** 2))
    gw = 2 * weight * w * outside[:, :, None, None]
    # adjoint of V -> fft2(V) / MN
    return value, _fold(flt, np.fft.ifft2(gw, axes=(0, 1)))


# -- binary save/load ---------------------------------------------------------

_UCONV_MAGIC = b"PUCV"
_UCONV_VERSION = 1
_UCONV_HEADER = struct.Struct("<4sIIIIB")


def dump_uconv(flt):
    M, N = flt.shape
    head = _UCONV_HEADER.pack(_UCONV_MAGIC, _UCONV_VERSION, M, N, flt.channels, int(flt.realness))
    body = b"".join(np.ascontiguousarray(b.matrix, dtype="<c16").tobytes() for b in flt.blocks)
    return head + body


def parse_uconv(blob, tol=UNITARY_TOL):
    if len(blob) < _UCONV_HEADER.size:
        raise CorruptFileError("file too short for a filter header")
    magic, version, M, N, C, realness = _UCONV_HEADER.unpack_from(blob)
    if magic != _UCONV_MAGIC:
        raise CorruptFileError("bad magic, not a filter file")
    if version != _UCONV_VERSION:
        raise CorruptFileError(f"unsupported filter version {version}")
    realness = bool(realness)
    freqs = canonical_freqs(M, N, realness)
    expected = _UCONV_HEADER.size + 16 * C * C * len(freqs)
    if len(blob) != expected:
        raise CorruptFileError(f"expected {expected} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<c16", offset=_UCONV_HEADER.size).reshape(len(freqs), C, C)
    paired = set(self_paired(M, N)) if realness else set()
    blocks = []
    for f, mat in zip(freqs, data):
        mat = mat.astype(np.complex128)
        if f in paired:
            if np.abs(mat.imag).max(initial=0.0) > 0:
                raise CorruptFileError(f"self-paired block {f} is not real")
            mat = mat.real.copy()
        if unitarity_error(mat) > tol:
            raise CorruptFileError(f"block {f} is not unitary")
        blocks.append(UnitaryParameter(mat))
    return UConvFilter(tuple(blocks), (M, N), C, realness)


def save_uconv(flt, path):
    with open(path, "wb") as fh:
        fh.write(dump_uconv(flt))


def load_uconv(path, tol=UNITARY_TOL):
    with open(path, "rb") as fh:
        return parse_uconv(fh.read(), tol)


def num_blocks(M, N, realness):
    """Number of stored blocks: about half the grid for real filters."""
    if not realness:
        return M * N
    return (M * N + len(self_paired(M, N))) // 2


"""Central finite-difference checks for the hand-written backward passes.

Complex parameters are probed along both the real and imaginary axes and
compared against the real and imaginary parts of the analytic gradient. The
error reported per tensor is ``||fd - analytic|| / ||analytic||`` over the
probed coordinates.
"""
from dataclasses import replace

import numpy as np

from .rnn import init_cell, rnn_backward, rnn_forward, with_params
from .tasks import TaskId, gen_adding, gen_copy, gen_random_unitary_task
from .uconv import UConvFilter, init_uconv, uconv_backward, uconv_forward

SMOOTH_MARGIN = 1e-3


def _rel(fd, an):
    fd, an = np.asarray(fd), np.asarray(an)
    scale = np.linalg.norm(an)
    if scale == 0:
        return float(np.linalg.norm(fd))
    return float(np.linalg.norm(fd - an) / scale)


def _probe(loss_of, arr, grad, n_coords, step, rng):
    fd, an = [], []
    for _ in range(n_coords):
        idx = tuple(int(rng.integers(0, s)) for s in arr.shape)
        dirs = (1.0, 1j) if np.iscomplexobj(arr) else (1.0,)
        for d in dirs:
            vals = []
            for sign in (1, -1):
                a = arr.copy()
                a[idx] += sign * step * d
                vals.append(loss_of(a))
            fd.append((vals[0] - vals[1]) / (2 * step))
            an.append(grad[idx].real if d == 1.0 else grad[idx].imag)
    return _rel(fd, an)


def rnn_gradcheck(cell, batch, n_coords=20, step=1e-5, rng=None):
    """Relative finite-difference error for every parameter tensor of the cell."""
    gen = np.random.default_rng(rng)
    trace, outputs, _ = rnn_forward(cell, batch)
    grads = rnn_backward(cell, batch, trace, outputs).as_dict()
    names = ["W"] if batch.task_id is TaskId.RANDOM_UNITARY else list(grads)
    out = {}
    for name in names:
        arr = cell.W.matrix if name == "W" else getattr(cell, name)

        def loss_of(a, name=name):
            return rnn_forward(with_params(cell, **{name: a}), batch)[2]

        out[name] = _probe(loss_of, arr, grads[name], n_coords, step, gen)
    return out


def is_smooth(cell, batch, margin=SMOOTH_MARGIN):
    """True if no pre-activation lies within ``margin`` of a modReLU kink.

    The activation is not differentiable at ``z = 0`` or on the edge of its
    dead zone; a finite difference straddling either point is meaningless.
    """
    if batch.task_id is TaskId.RANDOM_UNITARY or cell.activation == "linear":
        return True
    trace, _, _ = rnn_forward(cell, batch)
    z = batch.inputs @ cell.M.T + trace[:, :-1] @ cell.W.matrix.T
    r = np.abs(z)
    return bool(r.min() > margin and np.abs(r + cell.bias).min() > margin)


def random_rnn_case(task, field, rng, n=16, T=20, b=3, bias_scale=0.5):
    """Random cell and batch for a gradient check, redrawn until smooth."""
    task = TaskId(task)
    while True:
        if task is TaskId.ADDING:
            batch = gen_adding(T, b, rng)
            cell = init_cell(n, 2, 1, "haar", field, rng)
        elif task is TaskId.COPY:
            K = 5
            batch = gen_copy(max(T - 2 * K, 1), K, 8, b, rng)
            cell = init_cell(n, 10, 10, "haar", field, rng)
        else:
            data, _ = gen_random_unitary_task(n, b, rng, field)
            return init_cell(n, n, 1, "haar", field, rng), data.batch(np.arange(b))
        cell = with_params(
            cell,
            bias=rng.uniform(-bias_scale, bias_scale, n),
            out_bias=rng.standard_normal(cell.output_size),
        )
        if is_smooth(cell, batch):
            return cell, batch


def uconv_gradcheck(flt, X, n_coords=10, step=1e-5, rng=None):
    """Finite differences of a fixed quadratic loss through ``uconv_forward``.

    Returns ``{"blocks": err, "input": err}``; block coordinates are drawn
    from the stored (half-grid) parameters.
    """
    gen = np.random.default_rng(rng)
    A = gen.standard_normal(X.shape)
    B = gen.standard_normal(X.shape)

    def loss(f, x):
        y = uconv_forward(f, x)
        return float(np.sum(A * y.real) + 0.5 * np.sum(B * np.abs(y) ** 2))

    y = uconv_forward(flt, X)
    block_grads, dX = uconv_backward(flt, X, A + B * y)

    fd, an = [], []
    for _ in range(n_coords):
        i = int(gen.integers(len(flt.blocks)))
        blk = flt.blocks[i]
        idx = tuple(int(v) for v in gen.integers(0, flt.channels, 2))
        dirs = (1.0, 1j) if np.iscomplexobj(blk.matrix) else (1.0,)
        for d in dirs:
            vals = []
            for sign in (1, -1):
                m = blk.matrix.copy()
                m[idx] += sign * step * d
                blocks = list(flt.blocks)
                blocks[i] = replace(blk, matrix=m)
                vals.append(loss(UConvFilter(tuple(blocks), flt.shape, flt.channels, flt.realness), X))
            fd.append((vals[0] - vals[1]) / (2 * step))
            g = block_grads[i][idx]
            an.append(np.real(g) if d == 1.0 else np.imag(g))
    err_blocks = _rel(fd, an)
    err_input = _probe(lambda x: loss(flt, x), X, dX, n_coords, step, gen)
    return {"blocks": err_blocks, "input": err_input}


def random_uconv_case(realness, rng, M=4, N=4, C=2, b=2):
    flt = init_uconv(M, N, C, "haar", realness, rng)
    X = rng.standard_normal((b, M, N, C))
    if not realness:
        X = X + 1j * rng.standard_normal(X.shape)
    return flt, X

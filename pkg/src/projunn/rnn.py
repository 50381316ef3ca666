"""A minimal unitary RNN with hand-derived backpropagation through time.

The cell is ``h_t = act(M x_t + W h_{t-1})`` with ``h_0 = 0`` and a real
readout ``Re(V h) + c``. ``W`` is a ``UnitaryParameter``; everything else is
Euclidean.

Gradients of a real loss with respect to a complex array ``A`` follow the
convention ``dL/dRe(A) + i dL/dIm(A)``, so plain gradient descent is
``A - lr * grad`` in both fields.
"""
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError
from .manifold import InitScheme, UnitaryParameter, init_parameter
from .numerics import field_dtype
from .tasks import TaskId

MODRELU_EPS = 1e-8
ACTIVATIONS = ("modrelu", "linear")


def modrelu(z, bias, eps=MODRELU_EPS):
    """``(|z| + b) z / (|z| + eps)`` where ``|z| + b > 0``, else 0."""
    z = np.asarray(z)
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape and bias.shape[-1] != z.shape[-1]:
        raise InvalidArgumentError(f"bias length {bias.shape[-1]} does not match {z.shape[-1]}")
    r = np.abs(z)
    return np.where(r + bias > 0, (r + bias) / (r + eps), 0.0) * z


def modrelu_backward(z, bias, grad_out, eps=MODRELU_EPS):
    """Return ``(grad_z, grad_bias)`` for ``modrelu`` (bias grad not reduced)."""
    r = np.abs(z)
    active = r + bias > 0
    scale = np.where(active, (r + bias) / (r + eps), 0.0)
    # d/dr of the radial factor, divided by r; vanishes on the dead zone
    dscale = np.where(active & (r > 0), (eps - bias) / ((r + eps) ** 2 * np.where(r > 0, r, 1.0)), 0.0)
    proj = np.real(np.conj(grad_out) * z)
    grad_z = scale * grad_out + dscale * proj * z
    grad_bias = np.where(active, proj / (r + eps), 0.0)
    return grad_z, grad_bias


@dataclass(frozen=True)
class RnnCell:
    W: UnitaryParameter
    M: np.ndarray
    V: np.ndarray
    bias: np.ndarray
    out_bias: np.ndarray
    activation: str = "modrelu"

    def __post_init__(self):
        n = self.W.n
        if self.M.shape[0] != n or self.V.shape[1:] != (n,) or self.bias.shape != (n,):
            raise InvalidArgumentError("cell shapes disagree with the hidden size")
        if self.out_bias.shape != (self.V.shape[0],):
            raise InvalidArgumentError("output bias must match the output size")
        if not np.all(np.isfinite(self.bias)):
            raise InvalidArgumentError("modReLU bias must be finite")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")

    @property
    def hidden_size(self):
        return self.W.n

    @property
    def input_size(self):
        return self.M.shape[1]

    @property
    def output_size(self):
        return self.V.shape[0]

    @property
    def field(self):
        return self.W.field


@dataclass(frozen=True)
class Gradients:
    dW: np.ndarray
    dM: np.ndarray
    dV: np.ndarray
    dbias: np.ndarray
    dout_bias: np.ndarray

    def as_dict(self):
        return {"W": self.dW, "M": self.dM, "V": self.dV, "bias": self.dbias, "out_bias": self.dout_bias}


def init_cell(n, d, o, scheme=InitScheme.IDENTITY, field="real", rng=None, activation="modrelu", **param_kwargs):
    """Random cell: Glorot-normal ``M`` and ``V``, zero biases."""
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    dtype = field_dtype(field)
    W = init_parameter(n, scheme, field, gen, **param_kwargs)

    def glorot(shape):
        a = gen.standard_normal(shape)
        if dtype is np.complex128:
            a = (a + 1j * gen.standard_normal(shape)) / np.sqrt(2)
        return a * np.sqrt(2.0 / sum(shape))

    return RnnCell(W, glorot((n, d)), glorot((o, n)), np.zeros(n), np.zeros(o), activation)


def _activate(cell, z):
    if cell.activation == "linear":
        return z
    return modrelu(z, cell.bias)


def _check_batch(cell, batch):
    if batch.task_id is TaskId.RANDOM_UNITARY:
        if batch.inputs.shape[2] != cell.hidden_size or batch.targets.shape[1:] != (cell.hidden_size,):
            raise InvalidArgumentError("regression data must have the hidden size as feature dimension")
    elif batch.inputs.shape[2] != cell.input_size:
        raise InvalidArgumentError(f"input features {batch.inputs.shape[2]} != cell input size {cell.input_size}")
    if batch.task_id is TaskId.COPY and batch.targets.shape != batch.inputs.shape[:2]:
        raise InvalidArgumentError("copy targets must be (batch, time)")


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, targets):
    """Mean cross-entropy in nats over every leading index."""
    logp = _log_softmax(logits)
    return -np.mean(np.take_along_axis(logp, targets[..., None], axis=-1))


def rnn_forward(cell, batch, h0=None):
    """Run the recursion; returns ``(hidden_trace, outputs, loss)``.

    ``hidden_trace`` is ``(b, T + 1, n)`` with ``h_0`` in slot 0. Outputs are
    ``(b,)`` for adding, ``(b, T, o)`` logits for copy and ``(b, n)``
    predictions ``W x`` for random-unitary regression.
    """
    _check_batch(cell, batch)
    W = cell.W.matrix
    if batch.task_id is TaskId.RANDOM_UNITARY:
        x = batch.inputs[:, 0, :]
        pred = x @ W.T
        loss = float(np.mean(np.sum(np.abs(pred - batch.targets) ** 2, axis=1)))
        trace = np.stack([np.zeros_like(pred), pred], axis=1)
        return trace, pred, loss

    b, T, _ = batch.inputs.shape
    dtype = np.result_type(W, cell.M, batch.inputs)
    trace = np.zeros((b, T + 1, cell.hidden_size), dtype=dtype)
    if h0 is not None:
        trace[:, 0] = h0
    drive = batch.inputs @ cell.M.T
    for t in range(T):
        with np.errstate(invalid="ignore", over="ignore"):
            h = _activate(cell, drive[:, t] + trace[:, t] @ W.T)
        if not np.all(np.isfinite(h)):
            raise NumericFailureError(f"non-finite hidden state at step {t}", step=t)
        trace[:, t + 1] = h

    if batch.task_id is TaskId.ADDING:
        outputs = np.real(trace[:, -1] @ cell.V.T)[:, 0] + cell.out_bias[0]
        loss = float(np.mean((outputs - batch.targets) ** 2))
    else:
        outputs = np.real(trace[:, 1:] @ cell.V.T) + cell.out_bias
        loss = float(cross_entropy(outputs, batch.targets))
    return trace, outputs, loss


def rnn_backward(cell, batch, hidden_trace, outputs):
    """Exact gradients of the loss from ``rnn_forward`` by BPTT.

    ``dW`` is the dense sum over (sample, step) of the rank-1 terms
    ``delta_t h_{t-1}^H``.
    """
    _check_batch(cell, batch)
    W, n = cell.W.matrix, cell.hidden_size
    b, T, _ = batch.inputs.shape
    if hidden_trace.shape[:2] != (b, T + 1):
        raise InvalidArgumentError("hidden trace does not match the batch")

    if batch.task_id is TaskId.RANDOM_UNITARY:
        x = batch.inputs[:, 0, :]
        resid = outputs - batch.targets
        dW = 2.0 / b * resid.T @ x.conj()
        return Gradients(dW.astype(W.dtype, copy=False), np.zeros_like(cell.M), np.zeros_like(cell.V),
                         np.zeros_like(cell.bias), np.zeros_like(cell.out_bias))

    # gradient of the loss with respect to the real readout
    if batch.task_id is TaskId.ADDING:
        g_out = 2.0 / b * (outputs - batch.targets)
        dV = g_out[None, :] @ hidden_trace[:, -1].conj()
        dout_bias = np.array([g_out.sum()])
        g_hidden = np.zeros_like(hidden_trace[:, 1:])
        g_hidden[:, -1] = g_out[:, None] * cell.V[0].conj()
    else:
        probs = np.exp(_log_softmax(outputs))
        probs[np.arange(b)[:, None], np.arange(T)[None, :], batch.targets] -= 1.0
        g_out = probs / (b * T)
        hs = hidden_trace[:, 1:].reshape(-1, n)
        dV = g_out.reshape(-1, cell.output_size).T @ hs.conj()
        dout_bias = g_out.sum(axis=(0, 1))
        g_hidden = g_out @ cell.V.conj()

    prev = hidden_trace[:, :-1]
    z = batch.inputs @ cell.M.T + prev @ W.T
    g_z = np.empty_like(z)
    dbias = np.zeros(n)
    carry = np.zeros_like(hidden_trace[:, 0])
    Wc = W.conj()
    for t in range(T - 1, -1, -1):
        g_h = g_hidden[:, t] + carry
        if cell.activation == "linear":
            gz = g_h
        else:
            gz, gb = modrelu_backward(z[:, t], cell.bias, g_h)
            dbias += gb.sum(axis=0)
        if not np.all(np.isfinite(gz)):
            raise NumericFailureError(f"non-finite gradient at step {t}", step=t)
        g_z[:, t] = gz
        carry = gz @ Wc

    gz_flat = g_z.reshape(-1, n)
    dW = gz_flat.T @ prev.reshape(-1, n).conj()
    dM = gz_flat.T @ batch.inputs.reshape(b * T, -1).conj()
    if np.isrealobj(cell.M):
        dM = dM.real
    return Gradients(dW.astype(W.dtype, copy=False), dM, dV.astype(cell.V.dtype, copy=False), dbias, dout_bias)


def with_params(cell, **arrays):
    """Copy of ``cell`` with some raw arrays replaced (``W`` as a matrix)."""
    if "W" in arrays:
        arrays["W"] = replace(cell.W, matrix=arrays["W"])
    return replace(cell, **arrays)

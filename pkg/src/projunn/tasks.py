"""Synthetic sequence benchmarks: adding, copy memory and random-unitary regression."""
import enum
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptFileError, InvalidArgumentError
from .manifold import InitScheme, init_parameter


class TaskId(str, enum.Enum):
    ADDING = "adding"
    COPY = "copy"
    RANDOM_UNITARY = "random_unitary"


@dataclass(frozen=True)
class TaskBatch:
    """One minibatch.

    ``inputs`` is always ``(b, T, features)``. ``targets`` depends on the task:
    ``(b,)`` sums for adding, ``(b, T + 2K)`` integer symbols for copy and
    ``(b, n)`` vectors for random-unitary regression (where ``T = 1``).
    """

    inputs: np.ndarray
    targets: np.ndarray
    task_id: TaskId

    def __post_init__(self):
        object.__setattr__(self, "task_id", TaskId(self.task_id))
        if self.inputs.ndim != 3:
            raise InvalidArgumentError(f"inputs must be (batch, time, features), got {self.inputs.shape}")
        if self.targets.shape[0] != self.inputs.shape[0]:
            raise InvalidArgumentError("inputs and targets disagree on batch size")

    @property
    def batch_size(self):
        return self.inputs.shape[0]

    @property
    def length(self):
        return self.inputs.shape[1]


def _gen(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


# -- adding ------------------------------------------------------------------------


def gen_adding(T, b, rng=None):
    """Adding problem: sum the two values flagged in the second channel.

    One marker lands in ``[1, ceil(T/2))`` and the other in ``[ceil(T/2), T)``.
    """
    if T < 4:
        raise InvalidArgumentError(f"adding task needs T >= 4, got {T}")
    gen = _gen(rng)
    half = math.ceil(T / 2)
    values = gen.uniform(0.0, 1.0, (b, T))
    p1 = gen.integers(1, half, b)
    p2 = gen.integers(half, T, b)
    markers = np.zeros((b, T))
    rows = np.arange(b)
    markers[rows, p1] = 1.0
    markers[rows, p2] = 1.0
    targets = values[rows, p1] + values[rows, p2]
    return TaskBatch(np.stack([values, markers], axis=-1), targets, TaskId.ADDING)


ADDING_BASELINE_MSE = 1.0 / 6.0


# -- copy memory -------------------------------------------------------------------


def copy_symbols(n_sym):
    """(void, recall) symbol ids; data symbols are ``0 .. n_sym - 1``."""
    return n_sym, n_sym + 1


def copy_batch_from_tokens(tokens, T, n_sym):
    """Lay out copy-task sequences for given ``(b, K)`` data tokens.

    Input: K data tokens, T-1 voids, the recall marker, K voids.
    Target: void everywhere except the last K steps, which repeat the data.
    """
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    b, K = tokens.shape
    if T < 1:
        raise InvalidArgumentError(f"copy task needs T >= 1, got {T}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= n_sym):
        raise InvalidArgumentError("data tokens must lie in [0, n_sym)")
    void, recall = copy_symbols(n_sym)
    L = T + 2 * K
    seq = np.full((b, L), void, dtype=np.int64)
    seq[:, :K] = tokens
    seq[:, K + T - 1] = recall
    targets = np.full((b, L), void, dtype=np.int64)
    targets[:, L - K :] = tokens
    inputs = np.eye(n_sym + 2)[seq]
    return TaskBatch(inputs, targets, TaskId.COPY)


def gen_copy(T, K=10, n_sym=8, b=1, rng=None):
    tokens = _gen(rng).integers(0, n_sym, (b, K))
    return copy_batch_from_tokens(tokens, T, n_sym)


def baseline_loss_copy(T, K, n_sym):
    """Cross-entropy (nats) of predicting void, then uniform guesses for the last K steps."""
    if T <= 0 or K < 0 or n_sym <= 0:
        raise InvalidArgumentError("T and n_sym must be positive, K non-negative")
    return K * math.log(n_sym) / (T + 2 * K)


def naive_copy_logits(T, K, n_sym, b=1, margin=50.0):
    """Logits of the memoryless predictor that ``baseline_loss_copy`` describes."""
    void, _ = copy_symbols(n_sym)
    L = T + 2 * K
    logits = np.full((b, L, n_sym + 2), -margin)
    logits[:, : L - K, void] = 0.0
    logits[:, L - K :, :n_sym] = 0.0
    return logits


# -- random unitary regression -----------------------------------------------------


@dataclass(frozen=True)
class RegressionDataset:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.x.shape[0]

    def batch(self, idx):
        idx = np.asarray(idx)
        return TaskBatch(self.x[idx][:, None, :], self.y[idx], TaskId.RANDOM_UNITARY)


def gen_random_unitary_task(n, size, rng=None, field="complex"):
    """Dataset ``y_i = U_tar x_i`` with standard normal ``x_i`` and Haar ``U_tar``."""
    gen = _gen(rng)
    target = init_parameter(n, InitScheme.HAAR, field, gen)
    if target.field == "complex":
        x = (gen.standard_normal((size, n)) + 1j * gen.standard_normal((size, n))) / math.sqrt(2)
    else:
        x = gen.standard_normal((size, n))
    return RegressionDataset(x, x @ target.matrix.T), target


# -- binary batch fixtures ---------------------------------------------------------

_BATCH_MAGIC = b"PBAT"
_BATCH_VERSION = 1
_TASK_CODES = {TaskId.ADDING: 0, TaskId.COPY: 1, TaskId.RANDOM_UNITARY: 2}


def _pack_tensor(a):
    a = np.asarray(a)
    cplx = np.iscomplexobj(a)
    head = struct.pack("<BI", int(cplx), a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    body = np.ascontiguousarray(a, dtype="<c16" if cplx else "<f8").tobytes()
    return head + body


def _unpack_tensor(blob, offset):
    try:
        cplx, ndim = struct.unpack_from("<BI", blob, offset)
        offset += 5
        shape = struct.unpack_from(f"<{ndim}Q", blob, offset)
        offset += 8 * ndim
    except struct.error as exc:
        raise CorruptFileError("truncated tensor header") from exc
    dtype = np.dtype("<c16" if cplx else "<f8")
    nbytes = dtype.itemsize * math.prod(shape)
    if offset + nbytes > len(blob):
        raise CorruptFileError("truncated tensor data")
    data = np.frombuffer(blob, dtype=dtype, count=math.prod(shape), offset=offset).reshape(shape)
    return data.copy(), offset + nbytes


def dump_batch(batch):
    head = _BATCH_MAGIC + struct.pack("<IB", _BATCH_VERSION, _TASK_CODES[batch.task_id])
    return head + _pack_tensor(batch.inputs) + _pack_tensor(batch.targets)


def parse_batch(blob):
    if blob[:4] != _BATCH_MAGIC or len(blob) < 9:
        raise CorruptFileError("not a batch file")
    version, code = struct.unpack_from("<IB", blob, 4)
    if version != _BATCH_VERSION:
        raise CorruptFileError(f"unsupported batch version {version}")
    task = {v: k for k, v in _TASK_CODES.items()}.get(code)
    if task is None:
        raise CorruptFileError(f"unknown task code {code}")
    inputs, offset = _unpack_tensor(blob, 9)
    targets, offset = _unpack_tensor(blob, offset)
    if offset != len(blob):
        raise CorruptFileError("trailing bytes after batch")
    if task is TaskId.COPY:
        targets = targets.real.astype(np.int64)
    return TaskBatch(inputs, targets, task)


def save_batch(batch, path):
    with open(path, "wb") as fh:
        fh.write(dump_batch(batch))


def load_batch(path):
    with open(path, "rb") as fh:
        return parse_batch(fh.read())

"""RMSprop for Euclidean weights, projUNN steps for unitary ones, and the training loop."""
import csv
import dataclasses
import io
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidArgumentError, StepFailureError, StepTooLargeError
from .lowrank import SAMPLERS, sample_gradient
from .manifold import InitScheme, UpdateMode, update
from .numerics import frob, unitarity_error
from .rnn import ACTIVATIONS, init_cell, rnn_backward, rnn_forward
from .tasks import (
    ADDING_BASELINE_MSE,
    TaskId,
    baseline_loss_copy,
    gen_adding,
    gen_copy,
    gen_random_unitary_task,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class TrainConfig:
    """Flat training configuration; every field can be set from a TOML file.

    ``steps = 0`` means ``epochs * steps_per_epoch``. ``reprojection_interval``
    of 0 disables periodic re-projection and -1 means "every n steps".
    ``unitary_preconditioner = "rmsprop"`` rescales the unitary gradient by the
    RMSprop accumulator before sampling; the default "none" feeds the raw
    gradient to the sampler.
    """

    task: str = "adding"
    hidden_size: int = 116
    T: int = 100
    K: int = 10
    n_sym: int = 8
    batch_size: int = 128
    epochs: int = 30
    steps: int = 0
    train_size: int = 10000
    test_size: int = 1000
    lr: float = 1e-3
    unitary_lr_divisor: float = 32.0
    lr_decay_per_epoch: float = 0.96
    mode: str = "tangent"
    rank: int = 1
    sampler: str = "column"
    init: str = "identity"
    seed: int = 0
    field: str = "real"
    activation: str = "modrelu"
    rmsprop_decay: float = 0.99
    rmsprop_eps: float = 1e-8
    unitary_preconditioner: str = "none"
    reprojection_interval: int = -1
    max_retries: int = 5
    log_every: int = 1

    def __post_init__(self):
        problems = []
        try:
            object.__setattr__(self, "task", TaskId(self.task).value)
            object.__setattr__(self, "mode", UpdateMode(self.mode).value)
            object.__setattr__(self, "init", InitScheme(self.init).value)
        except ValueError as exc:
            problems.append(str(exc))
        if not self.lr > 0:
            problems.append("lr must be positive")
        if not self.unitary_lr_divisor >= 1:
            problems.append("unitary_lr_divisor must be >= 1")
        if not 0 < self.lr_decay_per_epoch <= 1:
            problems.append("lr_decay_per_epoch must lie in (0, 1]")
        if self.rank < 1:
            problems.append("rank must be >= 1")
        if self.sampler not in SAMPLERS:
            problems.append(f"sampler must be one of {SAMPLERS}")
        if self.field not in ("real", "complex"):
            problems.append("field must be 'real' or 'complex'")
        if self.activation not in ACTIVATIONS:
            problems.append(f"activation must be one of {ACTIVATIONS}")
        if self.unitary_preconditioner not in ("none", "rmsprop"):
            problems.append("unitary_preconditioner must be 'none' or 'rmsprop'")
        for name in ("hidden_size", "T", "batch_size", "epochs", "train_size", "test_size", "n_sym", "log_every"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.K < 0 or self.steps < 0 or self.max_retries < 0 or self.reprojection_interval < -1:
            problems.append("K, steps, max_retries must be >= 0 and reprojection_interval >= -1")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def steps_per_epoch(self):
        return max(1, self.train_size // self.batch_size)

    @property
    def total_steps(self):
        return self.steps or self.epochs * self.steps_per_epoch

    def lr_at_epoch(self, epoch):
        return self.lr * self.lr_decay_per_epoch**epoch

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        types = {f.name: type(f.default) for f in dataclasses.fields(cls)}
        clean = {}
        for key, value in data.items():
            want = types[key]
            if want is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if not isinstance(value, want) or isinstance(value, bool):
                raise ConfigError(f"{key} must be of type {want.__name__}, got {value!r}")
            clean[key] = value
        return cls(**clean)


def load_config(path, **overrides):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    data.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(data)


# -- optimizers --------------------------------------------------------------------


@dataclass
class RmspropState:
    decay: float = 0.99
    eps: float = 1e-8
    mean_square: dict = field(default_factory=dict)

    def accumulate(self, name, grad):
        sq = np.abs(grad) ** 2
        v = self.mean_square.get(name)
        v = (1 - self.decay) * sq if v is None else self.decay * v + (1 - self.decay) * sq
        self.mean_square[name] = v
        return v


def rmsprop_step(state, name, param, grad, lr):
    """``v <- d v + (1-d) |g|^2``; ``p <- p - lr g / (sqrt(v) + eps)``."""
    if np.shape(param) != np.shape(grad):
        raise InvalidArgumentError(f"{name}: parameter shape {np.shape(param)} != gradient {np.shape(grad)}")
    v = state.accumulate(name, grad)
    return param - lr * grad / (np.sqrt(v) + state.eps)


def _manifold_step(param, factor, eta, mode, max_retries):
    """Manifold update; Direct mode halves ``eta`` on a too-large step."""
    tried = []
    for _ in range(max_retries + 1):
        try:
            return update(param, factor, eta, mode), len(tried)
        except StepTooLargeError as exc:
            tried.append({"eta": eta, "min_eigenvalue": exc.min_eigenvalue})
            eta /= 2
    raise StepFailureError(f"unitary step failed after {max_retries} retries", diagnostics={"attempts": tried})


def unitary_step(model, grads, config, state, lr=None, rng=None):
    """One optimizer step on a ``RnnCell`` or ``UConvFilter``.

    Returns ``(model, retries)``. Euclidean parameters take an RMSprop step
    at ``lr``; unitary ones take a rank-``k`` projUNN step at
    ``lr / unitary_lr_divisor`` on the sampled raw gradient.
    """
    from .uconv import UConvFilter, uconv_update

    lr = config.lr if lr is None else lr
    eta = lr / config.unitary_lr_divisor
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if isinstance(model, UConvFilter):
        return uconv_update(model, grads, config.rank, eta, config.mode, config.sampler, rng=gen), 0

    g = grads.as_dict()
    dW = g.pop("W")
    if config.unitary_preconditioner == "rmsprop":
        dW = dW / (np.sqrt(state.accumulate("W", dW)) + state.eps)
    if np.any(dW):
        k = min(config.rank, model.hidden_size)
        factor = sample_gradient(dW, k, config.sampler, rng=gen)
        W, retries = _manifold_step(model.W, factor, eta, config.mode, config.max_retries)
    else:
        W, retries = model.W, 0
    updates = {"W": W}
    for name, grad in g.items():
        param = getattr(model, name)
        updates[name] = rmsprop_step(state, name, param, grad, lr) if np.any(grad) else param
    return replace(model, **updates), retries


# -- reporting ---------------------------------------------------------------------

CSV_COLUMNS = ("step", "epoch", "loss", "unitarity_error", "wall_ms", "target_error")


@dataclass
class RunReport:
    config: dict
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    model: object = field(default=None, repr=False)

    def to_csv(self, include_wall=True):
        cols = [c for c in CSV_COLUMNS if include_wall or c != "wall_ms"]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for rec in self.records:
            writer.writerow(["" if rec.get(c) is None else repr(rec[c]) for c in cols])
        return buf.getvalue()

    def to_json(self):
        return json.dumps({"config": self.config, "summary": self.summary}, indent=2, sort_keys=True)

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trajectory.csv").write_text(self.to_csv())
        (out / "summary.json").write_text(self.to_json() + "\n")


# -- training loop -----------------------------------------------------------------


class _Task:
    """Batches, held-out evaluation and model construction for one task."""

    def __init__(self, config, rng):
        self.config = config
        self.rng = rng
        self.task = TaskId(config.task)
        c = config
        if self.task is TaskId.ADDING:
            self.train = gen_adding(c.T, c.train_size, rng)
            self.test = gen_adding(c.T, c.test_size, rng)
            self.dims = (2, 1)
            self.baseline = ADDING_BASELINE_MSE
        elif self.task is TaskId.COPY:
            self.test = gen_copy(c.T, c.K, c.n_sym, c.test_size, rng)
            self.dims = (c.n_sym + 2, c.n_sym + 2)
            self.baseline = baseline_loss_copy(c.T, c.K, c.n_sym)
        else:
            self.data, self.target = gen_random_unitary_task(c.hidden_size, c.train_size, rng, c.field)
            self.dims = (c.hidden_size, 1)
            self.baseline = None
        self.order = None

    def batch(self, step):
        c = self.config
        if self.task is TaskId.COPY:
            return gen_copy(c.T, c.K, c.n_sym, c.batch_size, self.rng)
        size = c.train_size
        j = step % c.steps_per_epoch
        if j == 0:
            self.order = self.rng.permutation(size)
        idx = self.order[j * c.batch_size : (j + 1) * c.batch_size]
        if self.task is TaskId.ADDING:
            return type(self.train)(self.train.inputs[idx], self.train.targets[idx], self.task)
        return self.data.batch(idx)

    def target_error(self, model):
        if self.task is TaskId.RANDOM_UNITARY:
            return frob(model.W.matrix - self.target.matrix) ** 2
        return None

    def evaluate(self, model):
        if self.task is TaskId.RANDOM_UNITARY:
            return self.target_error(model)
        losses = []
        for start in range(0, self.test.batch_size, 500):
            sl = slice(start, start + 500)
            chunk = type(self.test)(self.test.inputs[sl], self.test.targets[sl], self.task)
            losses.append(rnn_forward(model, chunk)[2] * chunk.batch_size)
        return sum(losses) / self.test.batch_size


def train(config, out_dir=None, progress=None):
    """Run one training job; writes ``trajectory.csv``/``summary.json`` if ``out_dir``.

    Raises ``StepFailureError`` after flushing the partial report.
    """
    rng = np.random.default_rng(config.seed)
    task = _Task(config, rng)
    d, o = task.dims
    interval = {-1: -1, 0: None}.get(config.reprojection_interval, config.reprojection_interval)
    model = init_cell(
        config.hidden_size, d, o, config.init, config.field, rng, config.activation,
        mode=config.mode, reprojection_interval=interval,
    )
    state = RmspropState(config.rmsprop_decay, config.rmsprop_eps)
    report = RunReport(config.to_dict())
    report.summary = {"task": config.task, "baseline_loss": task.baseline, "status": "running",
                      "initial_test_loss": task.evaluate(model)}
    retries = 0
    epoch_losses = []
    start = time.perf_counter()
    try:
        for step in range(config.total_steps):
            epoch = step // config.steps_per_epoch
            lr = config.lr_at_epoch(epoch)
            t0 = time.perf_counter()
            batch = task.batch(step)
            trace, outputs, loss = rnn_forward(model, batch)
            grads = rnn_backward(model, batch, trace, outputs)
            model, r = unitary_step(model, grads, config, state, lr, rng)
            retries += r
            wall_ms = (time.perf_counter() - t0) * 1e3
            if step % config.log_every == 0 or step == config.total_steps - 1:
                report.records.append({
                    "step": step,
                    "epoch": epoch,
                    "loss": loss,
                    "unitarity_error": unitarity_error(model.W.matrix),
                    "wall_ms": round(wall_ms, 3),
                    "target_error": task.target_error(model),
                })
            if (step + 1) % config.steps_per_epoch == 0 or step == config.total_steps - 1:
                epoch_losses.append(task.evaluate(model))
                if progress:
                    progress(epoch, epoch_losses[-1])
    except StepFailureError as exc:
        report.summary.update(status="failed", error=str(exc), diagnostics=exc.diagnostics)
        if out_dir is not None:
            report.write(out_dir)
        raise
    report.summary.update(
        status="ok",
        steps=config.total_steps,
        epochs=len(epoch_losses),
        test_loss_per_epoch=epoch_losses,
        final_test_loss=epoch_losses[-1] if epoch_losses else None,
        final_unitarity_error=unitarity_error(model.W.matrix),
        reprojections=model.W.reprojections,
        step_retries=retries,
        wall_s=round(time.perf_counter() - start, 3),
    )
    report.model = model
    if out_dir is not None:
        report.write(out_dir)
    return report

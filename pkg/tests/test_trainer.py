import json

import numpy as np
import pytest

import projunn.trainer as trainer_mod
from projunn.errors import ConfigError, StepFailureError, StepTooLargeError
from projunn.manifold import tangent_oracle
from projunn.rnn import Gradients, init_cell, rnn_backward, rnn_forward
from projunn.tasks import gen_adding, gen_copy
from projunn.trainer import (
    RmspropState,
    TrainConfig,
    load_config,
    rmsprop_step,
    train,
    unitary_step,
)


def small_config(**kw):
    base = dict(task="adding", hidden_size=8, T=10, batch_size=4, train_size=16, test_size=8, epochs=2)
    base.update(kw)
    return TrainConfig(**base)


# -- RMSprop -------------------------------------------------------------------------


def test_rmsprop_zero_gradient_is_noop():
    state = RmspropState()
    p = np.arange(4.0)
    np.testing.assert_array_equal(rmsprop_step(state, "p", p, np.zeros(4), 0.1), p)


def test_rmsprop_first_step_is_sign_times_lr():
    # v = 0.01 g^2, so the first step is lr * g / (0.1 |g| + eps) ~ 10 lr sign(g)
    state = RmspropState(decay=0.99, eps=1e-8)
    out = rmsprop_step(state, "p", np.zeros(3), np.array([2.0, -0.5, 1e-3]), 0.1)
    np.testing.assert_allclose(out, -np.array([1.0, -1.0, 1.0]), rtol=1e-4)


def test_rmsprop_saturates_to_lr():
    state = RmspropState()
    p = np.zeros(1)
    for _ in range(3000):
        before = p
        p = rmsprop_step(state, "p", p, np.ones(1), 1e-3)
    np.testing.assert_allclose(before - p, 1e-3, rtol=1e-6)


def test_rmsprop_complex_uses_modulus():
    state = RmspropState(decay=0.0)
    g = np.array([3 + 4j])
    out = rmsprop_step(state, "p", np.zeros(1, complex), g, 1.0)
    np.testing.assert_allclose(out, -g / 5, rtol=1e-7)


# -- unitary step ------------------------------------------------------------------------


def _cell_and_grads(rng, n=6, field="real"):
    cell = init_cell(n, 2, 1, "haar", field, rng)
    batch = gen_adding(8, 3, rng)
    trace, out, _ = rnn_forward(cell, batch)
    return cell, rnn_backward(cell, batch, trace, out)


def test_zero_gradients_leave_model_unchanged(rng):
    cell, grads = _cell_and_grads(rng)
    zero = Gradients(*(np.zeros_like(g) for g in (grads.dW, grads.dM, grads.dV, grads.dbias, grads.dout_bias)))
    new, retries = unitary_step(cell, zero, small_config(hidden_size=6), RmspropState(), rng=rng)
    assert retries == 0
    for name in ("M", "V", "bias", "out_bias"):
        np.testing.assert_array_equal(getattr(new, name), getattr(cell, name))
    np.testing.assert_array_equal(new.W.matrix, cell.W.matrix)


@pytest.mark.parametrize("field", ["real", "complex"])
def test_full_rank_exact_sampler_matches_dense_oracle(rng, field):
    n = 6
    cell, grads = _cell_and_grads(rng, n, field)
    config = small_config(hidden_size=n, rank=n, sampler="exact", lr=0.32, unitary_lr_divisor=32.0)
    new, _ = unitary_step(cell, grads, config, RmspropState(), rng=rng)
    expect = tangent_oracle(cell.W.matrix, grads.dW, 0.01)
    np.testing.assert_allclose(new.W.matrix, expect, atol=1e-10)


def test_unitarity_holds_over_many_copy_steps(rng):
    n = 64
    config = TrainConfig(task="copy", hidden_size=n, T=8, K=3, batch_size=4, rank=2, init="henaff", lr=1e-2)
    cell = init_cell(n, 10, 10, "henaff", "real", rng)
    state = RmspropState()
    worst = 0.0
    for _ in range(1000):
        batch = gen_copy(config.T, config.K, config.n_sym, config.batch_size, rng)
        trace, out, _ = rnn_forward(cell, batch)
        cell, _ = unitary_step(cell, rnn_backward(cell, batch, trace, out), config, state, rng=rng)
        worst = max(worst, cell.W.unitarity_error())
    assert worst < 1e-6


def test_retry_exhaustion_raises_and_flushes(tmp_path, monkeypatch):
    calls = []

    def always_too_large(param, g, eta, mode=None):
        calls.append(eta)
        raise StepTooLargeError("singular", min_eigenvalue=-1.0)

    monkeypatch.setattr(trainer_mod, "update", always_too_large)
    config = small_config(mode="direct", max_retries=3)
    with pytest.raises(StepFailureError) as info:
        train(config, tmp_path)
    assert len(calls) == 4
    np.testing.assert_allclose(np.array(calls[1:]) / np.array(calls[:-1]), 0.5)
    assert len(info.value.diagnostics["attempts"]) == 4
    summary = json.loads((tmp_path / "summary.json").read_text())["summary"]
    assert summary["status"] == "failed"
    assert (tmp_path / "trajectory.csv").exists()


def test_retry_succeeds_after_halving(monkeypatch):
    real_update = trainer_mod.update
    seen = []

    def flaky(param, g, eta, mode=None):
        seen.append(eta)
        if len(seen) % 2 == 1:
            raise StepTooLargeError("singular", min_eigenvalue=-1.0)
        return real_update(param, g, eta, mode)

    monkeypatch.setattr(trainer_mod, "update", flaky)
    report = train(small_config(mode="direct", epochs=1))
    assert report.summary["step_retries"] == 4


# -- configuration -------------------------------------------------------------------


def test_config_rejects_bad_values():
    for kw in ({"lr": 0.0}, {"task": "nope"}, {"sampler": "x"}, {"unitary_lr_divisor": 0.5},
               {"lr_decay_per_epoch": 1.5}, {"hidden_size": 0}, {"unitary_preconditioner": "adam"}):
        with pytest.raises(ConfigError):
            small_config(**kw)


def test_from_dict_rejects_unknown_and_mistyped():
    with pytest.raises(ConfigError, match="unknown"):
        TrainConfig.from_dict({"learning_rate": 1e-3})
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"hidden_size": "big"})
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochs": True})
    assert TrainConfig.from_dict({"lr": 1}).lr == 1.0


def test_load_config_with_override(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('task = "copy"\nhidden_size = 16\nseed = 3\n')
    config = load_config(path, seed=9)
    assert (config.task, config.hidden_size, config.seed) == ("copy", 16, 9)
    path.write_text("task = [")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_learning_rate_schedule():
    config = small_config(lr=1e-3)
    for e in range(5):
        assert config.lr_at_epoch(e) == pytest.approx(1e-3 * 0.96**e)


# -- training loop --------------------------------------------------------------------


@pytest.mark.parametrize("task", ["adding", "copy", "random_unitary"])
def test_runs_are_deterministic(task):
    kw = dict(task=task, T=12, K=3)
    a = train(small_config(**kw))
    b = train(small_config(**kw))
    assert a.to_csv(include_wall=False) == b.to_csv(include_wall=False)
    assert a.summary["final_test_loss"] == b.summary["final_test_loss"]


def test_report_files(tmp_path):
    report = train(small_config(log_every=3), tmp_path)
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "step,epoch,loss,unitarity_error,wall_ms,target_error"
    assert [int(l.split(",")[0]) for l in lines[1:]] == [0, 3, 6, 7]
    data = json.loads((tmp_path / "summary.json").read_text())
    assert data["summary"]["epochs"] == 2
    assert data["config"]["hidden_size"] == 8
    assert report.summary["final_unitarity_error"] < 1e-10


def test_random_unitary_target_error_decreases():
    config = TrainConfig(task="random_unitary", hidden_size=16, batch_size=8, train_size=256,
                         steps=300, lr=0.05, unitary_lr_divisor=1.0, lr_decay_per_epoch=1.0,
                         field="complex", init="haar", log_every=50)
    report = train(config)
    errors = [r["target_error"] for r in report.records]
    assert errors[-1] < 0.1 * errors[0]

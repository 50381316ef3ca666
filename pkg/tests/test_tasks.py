import math

import numpy as np
import pytest

from projunn.errors import CorruptFileError, InvalidArgumentError
from projunn.rnn import cross_entropy
from projunn.tasks import (
    ADDING_BASELINE_MSE,
    TaskId,
    baseline_loss_copy,
    copy_batch_from_tokens,
    copy_symbols,
    dump_batch,
    gen_adding,
    gen_copy,
    gen_random_unitary_task,
    load_batch,
    naive_copy_logits,
    parse_batch,
    save_batch,
)


def test_adding_layout_invariants(rng):
    T = 51
    batch = gen_adding(T, 500, rng)
    assert batch.inputs.shape == (500, T, 2)
    markers = batch.inputs[..., 1]
    assert np.all(markers.sum(axis=1) == 2)
    first = markers.argmax(axis=1)
    second = T - 1 - markers[:, ::-1].argmax(axis=1)
    assert np.all((first >= 1) & (first < T / 2))
    assert np.all((second >= T / 2) & (second < T))
    values = batch.inputs[..., 0]
    np.testing.assert_allclose(batch.targets, (values * markers).sum(axis=1))


def test_adding_target_is_marked_sum():
    batch = gen_adding(10, 1, rng=3)
    values = batch.inputs[0, :, 0].copy()
    p1, p2 = np.nonzero(batch.inputs[0, :, 1])[0]
    values[p1], values[p2] = 0.2, 0.7
    assert values[p1] + values[p2] == pytest.approx(0.9)
    assert batch.targets[0] == pytest.approx(batch.inputs[0, p1, 0] + batch.inputs[0, p2, 0])


def test_adding_statistics():
    batch = gen_adding(20, 100_000, rng=0)
    assert batch.targets.mean() == pytest.approx(1.0, abs=0.01)
    # constant predictor 1.0: variance of a sum of two uniforms
    assert np.mean((batch.targets - 1.0) ** 2) == pytest.approx(0.167, abs=0.005)
    assert ADDING_BASELINE_MSE == pytest.approx(0.167, abs=5e-4)


def test_adding_needs_length_four():
    with pytest.raises(InvalidArgumentError):
        gen_adding(3, 1)


def test_copy_layout():
    A, B, C = 0, 1, 2
    batch = copy_batch_from_tokens([[A, B, C]], T=5, n_sym=4)
    void, recall = copy_symbols(4)
    seq = batch.inputs[0].argmax(axis=1)
    assert list(seq) == [A, B, C, void, void, void, void, recall, void, void, void]
    assert list(batch.targets[0]) == [void] * 8 + [A, B, C]


def test_copy_lengths_and_alphabet(rng):
    batch = gen_copy(T=30, K=10, n_sym=8, b=50, rng=rng)
    assert batch.inputs.shape == (50, 50, 10)
    assert batch.targets.shape == (50, 50)
    assert np.all(batch.inputs.sum(axis=2) == 1)
    np.testing.assert_array_equal(batch.targets[:, -10:], batch.inputs[:, :10].argmax(axis=2))
    assert batch.targets.max() < 10


def test_copy_baseline_values():
    assert baseline_loss_copy(1000, 10, 8) == pytest.approx(0.02039, abs=1e-5)
    assert baseline_loss_copy(2000, 10, 8) == pytest.approx(0.01029, abs=1e-5)
    assert baseline_loss_copy(100, 0, 8) == 0
    assert baseline_loss_copy(100, 10, 8) == pytest.approx(10 * math.log(8) / 120)


def test_copy_baseline_matches_naive_predictor():
    T, K, n = 100, 10, 8
    batch = gen_copy(T, K, n, 10_000, rng=1)
    loss = cross_entropy(naive_copy_logits(T, K, n, b=10_000), batch.targets)
    assert loss == pytest.approx(baseline_loss_copy(T, K, n), rel=0.01)


@pytest.mark.parametrize("field", ["real", "complex"])
def test_random_unitary_dataset(field):
    data, target = gen_random_unitary_task(16, 64, rng=2, field=field)
    assert len(data) == 64
    np.testing.assert_allclose(np.linalg.norm(data.y, axis=1), np.linalg.norm(data.x, axis=1), atol=1e-10)
    np.testing.assert_allclose(data.y, data.x @ target.matrix.T)
    batch = data.batch([0, 5, 9])
    assert batch.inputs.shape == (3, 1, 16) and batch.task_id is TaskId.RANDOM_UNITARY


def test_generators_are_seeded():
    a = gen_copy(20, 3, 8, 4, rng=11)
    b = gen_copy(20, 3, 8, 4, rng=11)
    assert np.array_equal(a.inputs, b.inputs)


@pytest.mark.parametrize("make", [
    lambda: gen_adding(12, 3, rng=0),
    lambda: gen_copy(7, 2, 4, 3, rng=0),
    lambda: gen_random_unitary_task(5, 4, rng=0)[0].batch([0, 1]),
])
def test_batch_roundtrip(tmp_path, make):
    batch = make()
    path = tmp_path / "batch.bin"
    save_batch(batch, path)
    back = load_batch(path)
    assert back.task_id is batch.task_id
    np.testing.assert_array_equal(back.inputs, batch.inputs)
    np.testing.assert_array_equal(back.targets, batch.targets)
    assert back.targets.dtype == batch.targets.dtype


def test_batch_loader_rejects_garbage():
    blob = dump_batch(gen_adding(6, 2, rng=0))
    with pytest.raises(CorruptFileError):
        parse_batch(b"NOPE" + blob[4:])
    with pytest.raises(CorruptFileError):
        parse_batch(blob[:-3])
    with pytest.raises(CorruptFileError):
        parse_batch(blob + b"\0")

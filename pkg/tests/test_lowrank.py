import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projunn.errors import InvalidArgumentError
from projunn.lowrank import (
    LowRankFactor,
    RankProfile,
    column_sample,
    lsi_sample,
    rank_profile,
    rel_error,
    sample_gradient,
    truncated_svd_oracle,
)

from conftest import random_matrix


def decaying_matrix(seed, n=64):
    """n x n matrix with singular values 2^-1, 2^-2, ..., 2^-n."""
    rng = np.random.default_rng(seed)
    u, _ = np.linalg.qr(rng.standard_normal((n, n)))
    v, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (u * 2.0 ** -np.arange(1, n + 1)) @ v.T


def test_factor_dense_and_scaling(rng):
    left, right = random_matrix(rng, (5, 2), "complex"), random_matrix(rng, (4, 2), "complex")
    f = LowRankFactor(left, right)
    assert f.shape == (5, 4) and f.k == 2
    np.testing.assert_allclose(f.dense(), left @ right.conj().T)
    np.testing.assert_allclose(f.scaled(-2.0).dense(), -2 * f.dense())


def test_factor_rejects_mismatched_panels():
    with pytest.raises(InvalidArgumentError):
        LowRankFactor(np.ones((3, 2)), np.ones((3, 1)))


@pytest.mark.parametrize("field", ["real", "complex"])
def test_column_sample_exact_on_rank_one(rng, field):
    a = np.outer(random_matrix(rng, 32, field), random_matrix(rng, 32, field).conj())
    f = column_sample(a, 1, 4, rng=1)
    assert rel_error(a, f) < 1e-10


def test_samplers_zero_matrix():
    z = np.zeros((8, 8))
    for f in (column_sample(z, 2, rng=0), lsi_sample(z, 2, rng=0)):
        assert f.k == 2
        assert np.all(f.dense() == 0)


def test_column_sample_argument_checks():
    a = np.ones((4, 4))
    with pytest.raises(InvalidArgumentError):
        column_sample(a, 3, 2)
    with pytest.raises(InvalidArgumentError):
        column_sample(a, 1, 5)
    with pytest.raises(InvalidArgumentError):
        lsi_sample(a, 2, 3)


def test_column_sample_trailing_zero_columns():
    # rank-1 input but k=3: the extra directions have zero weight
    a = np.outer(np.arange(1.0, 9.0), np.ones(8))
    f = column_sample(a, 3, 8, rng=0)
    assert f.k == 3
    assert rel_error(a, f) < 1e-10
    assert np.allclose(f.left[:, 1:], 0)


def test_lsi_exact_low_rank(rng, field):
    a = random_matrix(rng, (32, 3), field) @ random_matrix(rng, (3, 32), field)
    f = lsi_sample(a, 3, 5, rng=2)
    assert rel_error(a, f) < 1e-9


def test_lsi_identity_rank_one():
    f = lsi_sample(np.eye(16), 1, 5, rng=3)
    assert rel_error(np.eye(16), f) == pytest.approx(np.sqrt(15 / 16), abs=0.05)


@pytest.mark.parametrize("sampler,bound", [("column", 2.0), ("lsi", 1.5)])
def test_sampler_quality_decaying_spectrum(sampler, bound):
    errs = []
    for seed in range(50):
        a = decaying_matrix(seed)
        if sampler == "column":
            f = column_sample(a, 4, 16, rng=seed)
        else:
            f = lsi_sample(a, 4, 5, rng=seed)
        errs.append(rel_error(a, f))
    opt = rel_error(a, truncated_svd_oracle(a, 4))
    assert opt == pytest.approx(1 / 16)
    assert np.mean(errs) <= bound * opt


def test_truncated_svd_oracle_values(rng):
    a = np.outer(np.arange(1.0, 5.0), np.ones(6))
    assert rel_error(a, truncated_svd_oracle(a, 1)) < 1e-14
    assert rel_error(np.eye(4), truncated_svd_oracle(np.eye(4), 2)) == pytest.approx(np.sqrt(0.5))
    b = random_matrix(rng, (32, 32))
    s = np.linalg.svd(b, compute_uv=False)
    expected = np.sqrt(np.sum(s[8:] ** 2)) / np.sqrt(np.sum(s**2))
    assert rel_error(b, truncated_svd_oracle(b, 8)) == pytest.approx(expected, rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    n=st.integers(6, 24),
    k=st.integers(1, 3),
    sampler=st.sampled_from(["column", "lsi"]),
    complex_=st.booleans(),
)
def test_oracle_dominates_samplers(seed, n, k, sampler, complex_):
    rng = np.random.default_rng(seed)
    a = random_matrix(rng, (n, n), "complex" if complex_ else "real")
    f = sample_gradient(a, k, sampler, rng=seed)
    e = rel_error(a, f)
    assert 0 <= e <= 1 + 1e-12
    assert rel_error(a, truncated_svd_oracle(a, k)) <= e + 1e-10


@pytest.mark.parametrize("sampler", ["column", "lsi"])
def test_samplers_reproducible(sampler, rng):
    a = random_matrix(rng, (20, 20), "complex")
    f1 = sample_gradient(a, 2, sampler, rng=7)
    f2 = sample_gradient(a, 2, sampler, rng=7)
    assert np.array_equal(f1.left, f2.left) and np.array_equal(f1.right, f2.right)


def test_sample_gradient_unknown():
    with pytest.raises(InvalidArgumentError):
        sample_gradient(np.eye(3), 1, "fkv")


def test_rank_profile_projector(rng):
    q, _ = np.linalg.qr(rng.standard_normal((12, 3)))
    prof = rank_profile(q @ q.T, 5)
    assert prof.stable_rank == pytest.approx(3)
    assert prof.rel_error_curve[2] < 1e-12


def test_rank_profile_identity():
    prof = rank_profile(np.eye(10), 10)
    assert prof.stable_rank == pytest.approx(10)
    np.testing.assert_allclose(prof.rel_error_curve, np.sqrt((10 - np.arange(1, 11)) / 10), atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 20), m=st.integers(1, 20))
def test_rank_profile_monotone_and_bounded(seed, n, m):
    a = np.random.default_rng(seed).standard_normal((n, m))
    prof = rank_profile(a, 25)
    assert np.all(np.diff(prof.rel_error_curve) <= 0)
    assert prof.stable_rank <= np.linalg.matrix_rank(a) + 1e-9


def test_rank_profile_csv_roundtrip(rng):
    prof = rank_profile(rng.standard_normal((9, 9)), 5)
    text = prof.to_csv()
    assert text.splitlines()[1] == "k,rel_error"
    back = RankProfile.from_csv(text)
    np.testing.assert_array_equal(back.rel_error_curve, prof.rel_error_curve)
    assert back.stable_rank == prof.stable_rank

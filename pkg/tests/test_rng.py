import numpy as np
import pytest
from scipy import stats

from svcprobit import rng


def test_stream_key_depends_on_every_word():
    base = rng.stream_key(1, 0, 5, rng.KIND_LATENT)
    assert base != rng.stream_key(2, 0, 5, rng.KIND_LATENT)
    assert base != rng.stream_key(1, 1, 5, rng.KIND_LATENT)
    assert base != rng.stream_key(1, 0, 6, rng.KIND_LATENT)
    assert base != rng.stream_key(1, 0, 5, rng.KIND_COEF)
    assert base == rng.stream_key(1, 0, 5, rng.KIND_LATENT)


def test_vector_mix_matches_scalar():
    z = np.array([0, 1, 2**63, 2**64 - 1, 123456789], dtype=np.uint64)
    assert [int(v) for v in rng.mix64(z)] == [rng.mix64_int(int(v)) for v in z]


def test_element_streams_are_independent_of_neighbours():
    key = rng.stream_key(7, rng.KIND_TEST)
    a = rng.Streams(key, np.arange(10)).normal()
    b = rng.Streams(key, np.array([3]))
    assert b.normal()[0] == a[3]


def test_uniform_ranges():
    s = rng.Streams(rng.stream_key(1, rng.KIND_TEST), np.arange(100_000))
    u = s.uniform()
    o = s.open_uniform()
    assert u.min() >= 0 and u.max() < 1
    assert o.min() > 0 and o.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_ziggurat_normal_distribution():
    z = rng.Streams(rng.stream_key(2, rng.KIND_TEST), np.arange(200_000)).normal()
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1) < 0.015
    assert stats.kstest(z, "norm").pvalue > 1e-3
    # tails are reached
    assert np.abs(z).max() > 4.0


def test_tail_normal_support():
    s = rng.Streams(rng.stream_key(3, rng.KIND_TEST), np.arange(10_000))
    a = np.full(10_000, 5.0)
    x = s.tail_normal(a)
    assert np.all(x > 5.0)


def test_philox_generator_reproducible():
    a = rng.philox_generator(1, 2, 3).standard_normal(5)
    b = rng.philox_generator(1, 2, 3).standard_normal(5)
    c = rng.philox_generator(1, 2, 4).standard_normal(5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


@pytest.mark.parametrize("key", [0, 1, 2**64 - 1])
def test_extreme_keys(key):
    z = rng.Streams(key, np.arange(1000)).normal()
    assert np.all(np.isfinite(z))

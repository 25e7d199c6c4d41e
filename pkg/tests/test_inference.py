import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from svcprobit.dataset import Profile
from svcprobit.errors import DataError
from svcprobit.inference import (PosteriorSummary, Welford, probability_map,
                                 probability_map_from_draws, recover_alpha, standardize,
                                 standardized_map)
from svcprobit.sampler import McmcConfig, ModelState, Problem, gibbs_run

from conftest import make_dataset


def test_welford_two_values():
    w = Welford()
    w.update(1.0)
    w.update(3.0)
    assert w.mean == 2.0 and w.variance == 2.0


def test_welford_constant():
    w = Welford((3,))
    for _ in range(50):
        w.update(np.array([1.5, -2.0, 0.0]))
    assert np.all(w.variance == 0)


def test_welford_normal_stream():
    x = np.random.default_rng(0).standard_normal(10_000)
    w = Welford()
    for v in x:
        w.update(v)
    assert abs(w.mean) < 0.03 and abs(w.variance - 1) < 0.05


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=40), st.integers(1, 2))
def test_welford_merge_matches_two_pass(xs, cut_seed):
    x = np.array(xs)
    cuts = sorted({1, len(x) // 2, len(x) - 1} | {cut_seed})
    parts = np.split(x, cuts)
    accs = []
    for p in parts:
        w = Welford()
        for v in p:
            w.update(v)
        accs.append(w)
    left = accs[0]
    for a in accs[1:]:
        left = left.merge(a)
    right = accs[-1]
    for a in reversed(accs[:-1]):
        right = a.merge(right)
    scale = max(1.0, np.abs(x).max() ** 2)
    for m in (left, right):
        assert m.count == len(x)
        assert abs(m.mean - x.mean()) <= 1e-10 * max(1.0, np.abs(x).max())
        assert abs(m.variance - x.var(ddof=1)) <= 1e-10 * scale


def test_recover_alpha_examples():
    assert np.array_equal(recover_alpha(np.full((5, 2), 0.7)), [0.7, 0.7])
    assert recover_alpha(np.array([[-1.0], [1.0]]))[0] == 0.0
    b = np.random.default_rng(1).normal(size=(97, 4))
    brute = np.array([sum(b[j, p] for j in range(97)) / 97 for p in range(4)])
    assert np.allclose(recover_alpha(b), brute, rtol=0, atol=1e-12)


def test_standardize_examples():
    z = standardize(np.array([4.0, 1.9]), np.array([2.0, 1.0]), 2.0)
    assert z.values.tolist() == [2.0, 1.9]
    assert z.thresholded.tolist() == [2.0, 0.0]
    assert z.proportion() == 0.5


def test_standardize_zero_sd_flagged():
    z = standardize(np.array([1.0, 2.0]), np.array([0.0, 1.0]))
    assert z.values[0] == 0.0 and z.degenerate.tolist() == [True, False]


def _run(ds, iters=300, burn=100, **kw):
    s = PosteriorSummary(**kw)
    gibbs_run(ds, McmcConfig(iterations=iters, burn_in=burn, seed=2, wishart_df=1.0), [s])
    return s


def test_summary_streaming_matches_stored_draws():
    rng = np.random.default_rng(3)
    ds = make_dataset(np.ones((4, 4), dtype=bool), rng.random((10, 16)) < 0.4,
                      subtypes=[1, 2] * 5, spatial=rng.random(16))
    draws, gammas = [], []

    class Keep:
        def start(self, problem, config):
            pass

        def consume(self, problem, state, t):
            draws.append(state.beta_star.copy())
            gammas.append(state.gamma)

        def state_dict(self):
            return {}

        def load_state_dict(self, d):
            pass

    s = PosteriorSummary(contrasts={"d": [1.0, -1.0]})
    gibbs_run(ds, McmcConfig(iterations=200, burn_in=50, seed=1), [s, Keep()])
    B = np.array(draws)
    assert np.allclose(s.coef.mean, B.mean(axis=0), rtol=1e-10, atol=1e-12)
    assert np.allclose(s.coef.variance, B.var(axis=0, ddof=1), rtol=1e-10, atol=1e-12)
    assert np.allclose(s.contrast.mean[:, 0], (B[:, :, 0] - B[:, :, 1]).mean(axis=0))
    # alpha trace equals the grand mean of the field
    assert abs(np.mean(s.alpha_trace) - B.mean()) < 1e-10
    for k, prof in enumerate(s.profiles):
        ref = probability_map_from_draws(B, gammas, prof.x, ds.w)
        assert np.allclose(probability_map(s, k), ref, rtol=1e-10)
    z = standardized_map(s, "d", contrast=True)
    assert z.values.shape == (16,)


def test_probability_map_degenerate_chain():
    B = np.zeros((20, 7, 2))
    m = probability_map_from_draws(B, np.zeros(20), np.array([1.0, 0.0]), np.ones(7))
    assert np.all(m == 0.5)


def test_probability_map_single_draw_exact():
    rng = np.random.default_rng(4)
    B = rng.normal(size=(1, 6, 3))
    x = np.array([0.0, 1.0, 0.5])
    w = rng.random(6)
    m = probability_map_from_draws(B, [0.3], x, w)
    assert np.array_equal(m, special.ndtr(B[0] @ x + 0.3 * w))


def test_jensen_gap_direction():
    rng = np.random.default_rng(5)
    # low-probability region: Phi is convex there, so E[Phi] > Phi(E)
    eta = rng.normal(-2.0, 0.8, size=(5000, 1, 1))
    m = probability_map_from_draws(eta, np.zeros(5000), np.array([1.0]))
    assert m[0] > special.ndtr(eta.mean())
    eta = rng.normal(2.0, 0.8, size=(5000, 1, 1))
    m = probability_map_from_draws(eta, np.zeros(5000), np.array([1.0]))
    assert m[0] < special.ndtr(eta.mean())


def test_unknown_profile_and_too_few_draws():
    ds = make_dataset(np.ones(3, dtype=bool), np.zeros((2, 3)))
    s = _run(ds, 10, 9)
    with pytest.raises(DataError):
        probability_map(s, "nope")
    with pytest.raises(DataError):
        standardized_map(s, 0)


def test_summary_merge_pools_counts():
    ds = make_dataset(np.ones(4, dtype=bool), np.eye(4, dtype=bool))
    a, b = _run(ds, 60, 10), _run(ds, 50, 10)
    m = a.merge(b)
    assert m.count == a.count + b.count
    assert np.allclose(m.coef.mean, (a.coef.mean * a.count + b.coef.mean * b.count) / m.count)


def test_custom_profile():
    ds = make_dataset(np.ones(3, dtype=bool), np.zeros((4, 3)), covariates={"age": [1, 2, 3, 4]})
    s = _run(ds, 30, 10, profiles=[Profile("young", np.array([1.0, -1.0]))])
    assert probability_map(s, "young").shape == (3,)

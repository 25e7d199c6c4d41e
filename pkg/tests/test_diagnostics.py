import numpy as np
import pytest

from svcprobit.diagnostics import (MonitorSink, autocorrelation, default_monitor_sites,
                                   gelman_rubin, max_pairwise_difference, psrf_table,
                                   read_trace_csv, split_gelman_rubin, write_trace_csv)
from svcprobit.errors import DataError
from svcprobit.sampler import McmcConfig, gibbs_run

from conftest import make_dataset


def test_psrf_iid_chains_near_one():
    x = np.random.default_rng(0).normal(size=(4, 2000))
    assert abs(gelman_rubin(x).psrf - 1.0) < 0.01


def test_psrf_shifted_chains_large():
    x = np.random.default_rng(1).normal(size=(2, 500))
    x[1] += 5
    assert gelman_rubin(x).psrf > 2


def test_psrf_closed_form():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 50))
    n = 50
    W = np.mean([np.var(c, ddof=1) for c in x])
    B = n * np.var(x.mean(axis=1), ddof=1)
    ref = np.sqrt(((n - 1) / n * W + B / n) / W)
    assert gelman_rubin(x).psrf == pytest.approx(ref, rel=1e-12)


def test_psrf_degenerate_cases():
    r = gelman_rubin(np.ones((2, 20)))
    assert r.psrf == 1.0 and r.degenerate
    x = np.random.default_rng(3).normal(size=30)
    r = gelman_rubin(np.vstack([x, x]))
    assert r.psrf == 1.0 and r.degenerate


def test_psrf_input_errors():
    with pytest.raises(DataError):
        gelman_rubin(np.zeros((1, 20)))
    with pytest.raises(DataError):
        gelman_rubin(np.zeros((2, 5)))


def test_split_psrf_detects_trend():
    t = np.linspace(0, 10, 400)
    x = np.vstack([t, t]) + np.random.default_rng(4).normal(scale=0.1, size=(2, 400))
    assert gelman_rubin(x).psrf < 1.05 < split_gelman_rubin(x).psrf


def test_acf_examples():
    acf, deg = autocorrelation(np.ones(20), 3)
    assert deg and not acf.any()
    x = np.random.default_rng(5).normal(size=20000)
    acf, _ = autocorrelation(x, 5)
    assert acf[0] == 1.0 and np.all(np.abs(acf[1:]) < 0.03)
    # AR(1) with phi = 0.8
    e = np.random.default_rng(6).normal(size=50000)
    y = np.empty_like(e)
    y[0] = e[0]
    for i in range(1, e.size):
        y[i] = 0.8 * y[i - 1] + e[i]
    acf, _ = autocorrelation(y, 3)
    assert np.allclose(acf[1:], [0.8, 0.64, 0.512], atol=0.02)
    with pytest.raises(DataError):
        autocorrelation(x[:5], 5)


def test_trace_csv_round_trip(tmp_path):
    vals = {"gamma": np.array([0.1, 1 / 3, -2e-17]), "site4:intercept": np.array([1.0, 2.0, 3.0])}
    write_trace_csv(tmp_path / "t.csv", vals, chain=2, iterations=[10, 11, 12])
    back = read_trace_csv(tmp_path / "t.csv")
    assert set(back) == set(vals)
    for k in vals:
        assert np.array_equal(back[k][2], vals[k])


def test_default_monitor_sites():
    Y = np.zeros((5, 40), dtype=bool)
    Y[:, [3, 7, 11]] = True
    Y[:2, 20] = True
    s = default_monitor_sites(Y, 10, seed=0)
    assert s.size == 10 and len(set(s)) == 10
    assert {3, 7, 11, 20}.issubset(set(s.tolist()))
    assert np.array_equal(s, default_monitor_sites(Y, 10, seed=0))
    assert np.array_equal(default_monitor_sites(Y[:, :6], 10), np.arange(6))


def test_monitor_sink_traces():
    ds = make_dataset(np.ones((3, 3), dtype=bool), np.eye(9, dtype=bool)[:6], subtypes=[1, 2] * 3)
    m = MonitorSink([0, 4])
    gibbs_run(ds, McmcConfig(iterations=30, burn_in=10, seed=0), [m])
    tr = m.traces()
    assert tr.shape == (20, 2, 2)
    assert m.labels()[:2] == ["site0:" + ds.design.names[0], "site0:" + ds.design.names[1]]


def test_psrf_table_and_map_difference():
    rng = np.random.default_rng(7)
    a = {"x": rng.normal(size=50), "y": rng.normal(size=50)}
    b = {"x": rng.normal(size=50), "y": rng.normal(size=50)}
    t = psrf_table([a, b])
    assert set(t) == {"x", "y"}
    with pytest.raises(DataError):
        psrf_table([a])
    v, j, pair = max_pairwise_difference([np.zeros(4), np.array([0, 0.5, 0, 0]), np.array([0, 0, -1.0, 0])])
    assert (v, j, pair) == (1.0, 2, (0, 2))

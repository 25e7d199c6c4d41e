"""Convergence diagnostics: Gelman-Rubin PSRF, autocorrelation, monitored traces."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .rng import KIND_MONITOR, philox_generator

PSRF_PASS = 1.05


@dataclass
class PsrfResult:
    psrf: float
    degenerate: bool
    between: float
    within: float


def gelman_rubin(chains) -> PsrfResult:
    """Potential scale reduction factor for an (m chains, n draws) array.

    V = (n - 1)/n * W + B/n and PSRF = sqrt(V / W), with B = n * var(chain
    means) and W the mean within-chain variance (both n - 1 denominators).
    A zero within-chain variance, or chains that are exact copies of each
    other, reports PSRF 1 flagged degenerate.
    """
    x = np.asarray(chains, dtype=np.float64)
    if x.ndim != 2:
        raise DataError("expected a 2-D array of shape (chains, draws)")
    m, n = x.shape
    if m < 2:
        raise DataError("Gelman-Rubin needs at least two chains")
    if n < 10:
        raise DataError("Gelman-Rubin needs at least 10 draws per chain")
    B = n * x.mean(axis=1).var(ddof=1)
    W = x.var(axis=1, ddof=1).mean()
    if W <= 0.0:
        return PsrfResult(1.0, True, float(B), 0.0)
    if np.all(x == x[0]):
        return PsrfResult(1.0, True, 0.0, float(W))
    V = (n - 1) / n * W + B / n
    return PsrfResult(float(np.sqrt(V / W)), False, float(B), float(W))


def split_gelman_rubin(chains) -> PsrfResult:
    """PSRF after splitting each chain into halves (odd lengths drop the middle draw)."""
    x = np.atleast_2d(np.asarray(chains, dtype=np.float64))
    half = x.shape[1] // 2
    return gelman_rubin(np.concatenate([x[:, :half], x[:, -half:]], axis=0))


def autocorrelation(trace, max_lag: int) -> tuple[np.ndarray, bool]:
    """Sample ACF at lags 0..max_lag; returns (acf, degenerate).

    A constant trace gives zeros with the degenerate flag set.
    """
    x = np.asarray(trace, dtype=np.float64)
    n = x.size
    if max_lag >= n:
        raise DataError(f"max lag {max_lag} must be below the trace length {n}")
    d = x - x.mean()
    denom = float(d @ d)
    if denom == 0.0:
        return np.zeros(max_lag + 1), True
    acf = np.empty(max_lag + 1)
    acf[0] = 1.0
    for lag in range(1, max_lag + 1):
        acf[lag] = float(d[:-lag] @ d[lag:]) / denom
    return acf, False


def default_monitor_sites(outcomes, n: int = 10, seed: int = 0) -> np.ndarray:
    """Half the sites with the highest empirical lesion rate, half drawn at random.

    Ties in rate go to the lower site index; the random half avoids the
    top half and depends only on ``seed`` so all chains monitor the same sites.
    """
    rate = np.asarray(outcomes, dtype=np.float64).mean(axis=0)
    M = rate.size
    if M <= n:
        return np.arange(M)
    n_top = n // 2
    top = np.argsort(-rate, kind="stable")[:n_top]
    rest = np.setdiff1d(np.arange(M), top)
    gen = philox_generator(seed, 0, 0, KIND_MONITOR)
    rand = gen.choice(rest, size=n - n_top, replace=False)
    return np.sort(np.concatenate([top, rand])).astype(np.int64)


class MonitorSink:
    """Keeps full coefficient traces at a handful of sites."""

    def __init__(self, sites):
        self.sites = np.asarray(sites, dtype=np.int64)
        self.values: list[np.ndarray] = []
        self.iterations: list[int] = []

    def start(self, problem, config):
        self.names = problem.dataset.design.names
        self.values, self.iterations = [], []

    def consume(self, problem, state, t):
        self.values.append(state.beta_star[self.sites].copy())
        self.iterations.append(int(t))

    def traces(self) -> np.ndarray:
        """(T, n_sites, P) array."""
        P = len(self.names)
        return np.array(self.values, dtype=float).reshape(-1, self.sites.size, P)

    def labels(self) -> list[str]:
        return [f"site{j}:{name}" for j in self.sites for name in self.names]

    def state_dict(self):
        return {"sites": self.sites, "values": self.traces(),
                "iterations": np.array(self.iterations, dtype=np.int64)}

    def load_state_dict(self, d):
        self.sites = np.asarray(d["sites"], dtype=np.int64)
        self.values = list(np.asarray(d["values"], dtype=float))
        self.iterations = [int(i) for i in d["iterations"]]


def write_trace_csv(path, traces: dict[str, np.ndarray], chain: int, iterations) -> None:
    """Long-format trace file with columns label, chain, iteration, value."""
    iterations = np.asarray(iterations)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "chain", "iteration", "value"])
        for label, values in traces.items():
            for it, v in zip(iterations, np.asarray(values)):
                w.writerow([label, chain, int(it), repr(float(v))])


def read_trace_csv(path) -> dict[str, dict[int, np.ndarray]]:
    """label -> chain -> values (ordered by iteration)."""
    rows: dict[str, dict[int, list]] = defaultdict(lambda: defaultdict(list))
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows[r["label"]][int(r["chain"])].append((int(r["iteration"]), float(r["value"])))
    out = {}
    for label, by_chain in rows.items():
        out[label] = {c: np.array([v for _, v in sorted(vals)]) for c, vals in by_chain.items()}
    return out


def psrf_table(chain_traces: list[dict[str, np.ndarray]]) -> dict[str, PsrfResult]:
    """PSRF per label across runs; each element maps label -> one chain's draws."""
    if len(chain_traces) < 2:
        raise DataError("need at least two runs to compute PSRF")
    labels = set(chain_traces[0])
    for ct in chain_traces[1:]:
        labels &= set(ct)
    out = {}
    for label in sorted(labels):
        seqs = [np.asarray(ct[label]) for ct in chain_traces]
        n = min(s.size for s in seqs)
        if any(s.size != n for s in seqs):
            raise DataError(f"traces for {label!r} have unequal lengths")
        out[label] = gelman_rubin(np.vstack(seqs))
    return out


def max_pairwise_difference(maps: list[np.ndarray]) -> tuple[float, int, tuple[int, int]]:
    """Largest |difference| between any two runs' maps: (value, site, (run a, run b))."""
    best = (0.0, -1, (-1, -1))
    for a in range(len(maps)):
        for b in range(a + 1, len(maps)):
            d = np.abs(np.asarray(maps[a]) - np.asarray(maps[b]))
            j = int(np.argmax(d))
            if d[j] > best[0] or best[1] < 0:
                best = (float(d[j]), j, (a, b))
    return best

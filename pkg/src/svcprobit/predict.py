"""Leave-one-out subtype classification.

Three classifiers share one report type:

* the spatial model, scored by importance-reweighting draws from a single
  posterior run so that each subject's own likelihood is removed;
* a naive Bayes classifier on per-subtype empirical lesion rates;
* per-voxel Firth logistic fits refitted without the held-out subject.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ConfigError, DataError
from .firth import firth_fit_batch

EPS_LIK = 1e-10
ESS_MIN = 10.0
Z95 = 1.96


# ---------------------------------------------------------------------------
# likelihood traces

def candidate_rows(X, n_subtypes: int):
    """Distinct design rows over (subject, forced subtype) and the (N, K) index into them."""
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    cand = np.repeat(X[:, None, :], n_subtypes, axis=1)
    cand[:, :, :n_subtypes] = np.eye(n_subtypes)[None]
    rows, index = np.unique(cand.reshape(N * n_subtypes, -1), axis=0, return_inverse=True)
    return rows, index.reshape(N, n_subtypes)


def subject_loglik(beta_star, gamma, w, rows, index, Y) -> np.ndarray:
    """(N, K) log-likelihood of every subject's map under every subtype.

    Per-voxel probabilities are clamped to [EPS_LIK, 1 - EPS_LIK] before the log.
    """
    eta = np.asarray(beta_star) @ rows.T + (np.asarray(w) * gamma)[:, None]  # (M, U)
    floor = np.log(EPS_LIK)
    log1 = np.maximum(special.log_ndtr(eta), floor)
    log0 = np.maximum(special.log_ndtr(-eta), floor)
    ll = log0.sum(axis=0)[None, :] + Y @ (log1 - log0)  # (N, U)
    return np.take_along_axis(ll, index, axis=1)


class LikelihoodSink:
    """Records l_{i,k} at every ``likelihood_thin``-th retained draw."""

    def __init__(self, every: int | None = None):
        self.every = every
        self.values: list[np.ndarray] = []
        self.iterations: list[int] = []

    def start(self, problem, config):
        design = problem.dataset.design
        self.rows, self.index = candidate_rows(design.X, design.n_subtypes)
        self.Y = np.asarray(problem.dataset.outcomes, dtype=np.float64)
        self._every = self.every or config.likelihood_thin
        self._burn, self._thin = config.burn_in, config.thin
        self.values, self.iterations = [], []

    def consume(self, problem, state, t):
        if ((t - self._burn) // self._thin) % self._every:
            return
        self.values.append(subject_loglik(state.beta_star, state.gamma, problem.w,
                                          self.rows, self.index, self.Y))
        self.iterations.append(int(t))

    def trace(self) -> np.ndarray:
        """(T, N, K) array."""
        if not self.values:
            return np.zeros((0,) + self.index.shape)
        return np.array(self.values)

    def state_dict(self):
        return {"values": self.trace(), "iterations": np.array(self.iterations, dtype=np.int64)}

    def load_state_dict(self, d):
        self.values = list(np.asarray(d["values"], dtype=float))
        self.iterations = [int(i) for i in d["iterations"]]


# ---------------------------------------------------------------------------
# posteriors and reports

def _prior(prior, K: int) -> np.ndarray:
    pi = np.full(K, 1.0 / K) if prior is None else np.asarray(prior, dtype=np.float64)
    if pi.shape != (K,) or np.any(pi < 0) or not pi.sum() > 0:
        raise ConfigError(f"prior must be a non-negative vector of length {K}")
    return pi / pi.sum()


def empirical_prior(subtypes, K: int) -> np.ndarray:
    return np.bincount(np.asarray(subtypes), minlength=K) / len(subtypes)


@dataclass
class LooPosterior:
    probabilities: np.ndarray
    ess: float
    low_confidence: bool


def loo_posterior(trace, i: int, true_subtype: int, prior=None, ess_min: float = ESS_MIN) -> LooPosterior:
    """Importance-sampling estimate of Pr(k | data without subject i, Y_i).

    Weights u_t = exp(-l_{i,true}) undo the subject's own contribution to the
    posterior; then Pr(k) is proportional to pi_k sum_t u_t exp(l_{i,k}) / sum_t u_t.
    ``true_subtype`` is 0-based.
    """
    ll = np.asarray(trace, dtype=np.float64)[:, i, :]  # (T, K)
    T, K = ll.shape
    if T == 0:
        raise DataError("likelihood trace is empty")
    logu = -ll[:, true_subtype]
    lse_u = special.logsumexp(logu)
    logpost = np.log(_prior(prior, K)) + special.logsumexp(logu[:, None] + ll, axis=0) - lse_u
    post = np.exp(logpost - special.logsumexp(logpost))
    ess = float(np.exp(lse_u - logu.max()))
    return LooPosterior(post, ess, ess < ess_min)


@dataclass
class ClassificationResult:
    posteriors: np.ndarray  # (N, K)
    true: np.ndarray  # (N,) 0-based
    predicted: np.ndarray  # (N,)
    counts: np.ndarray  # (K, K) rows true, columns predicted
    low_confidence: np.ndarray  # (N,)
    labels: list

    @property
    def confusion(self) -> np.ndarray:
        n = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, n, out=np.zeros(self.counts.shape), where=n > 0)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def overall_rate(self) -> float:
        return float(np.trace(self.counts) / self.n)

    @property
    def class_rates(self) -> np.ndarray:
        return np.diag(self.confusion)

    @property
    def average_rate(self) -> float:
        """Unweighted mean of per-subtype correct rates over subtypes present."""
        present = self.counts.sum(axis=1) > 0
        return float(self.class_rates[present].mean())

    @staticmethod
    def half_width(p: float, n: int) -> float:
        return float(Z95 * np.sqrt(p * (1.0 - p) / n)) if n else float("nan")

    @property
    def overall_ci(self) -> float:
        return self.half_width(self.overall_rate, self.n)

    @property
    def average_ci(self) -> float:
        return self.half_width(self.average_rate, self.n)

    def table(self) -> str:
        K = len(self.labels)
        width = max(8, max(len(str(lab)) for lab in self.labels) + 2)
        lines = ["true \\ predicted".ljust(width) + "".join(str(lab).rjust(width) for lab in self.labels)]
        conf = self.confusion
        for k in range(K):
            lines.append(str(self.labels[k]).ljust(width) + "".join(f"{conf[k, c]:{width}.3f}" for c in range(K)))
        lines.append(f"overall rate {self.overall_rate:.3f} +/- {self.overall_ci:.3f}")
        lines.append(f"average rate {self.average_rate:.3f} +/- {self.average_ci:.3f}")
        return "\n".join(lines)


def make_result(posteriors, true, labels=None, low_confidence=None) -> ClassificationResult:
    """Argmax labels (ties go to the lower subtype index) and the confusion counts."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    true = np.asarray(true, dtype=np.int64)
    N, K = posteriors.shape
    pred = np.argmax(posteriors, axis=1)
    counts = np.zeros((K, K), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    low = np.zeros(N, dtype=bool) if low_confidence is None else np.asarray(low_confidence, dtype=bool)
    labels = list(labels) if labels is not None else [str(k + 1) for k in range(K)]
    return ClassificationResult(posteriors, true, pred, counts, low, labels)


def classify_all(trace, subtypes, prior=None, labels=None, ess_min: float = ESS_MIN) -> ClassificationResult:
    """LOO classification of every subject from one likelihood trace (T, N, K)."""
    trace = np.asarray(trace, dtype=np.float64)
    subtypes = np.asarray(subtypes, dtype=np.int64)
    N = trace.shape[1]
    if subtypes.shape != (N,):
        raise DataError("subtype vector does not match the trace")
    res = [loo_posterior(trace, i, subtypes[i], prior, ess_min) for i in range(N)]
    return make_result([r.probabilities for r in res], subtypes, labels, [r.low_confidence for r in res])


# ---------------------------------------------------------------------------
# naive Bayes

@dataclass
class NbcModel:
    sites: np.ndarray  # (M,) bool, voxels kept by the lesion-count filter
    rates: np.ndarray  # (K, n kept)
    n_per_subtype: np.ndarray


def _nbc_rates(counts, n_k):
    eps = 1.0 / (2.0 * n_k + 2.0)
    r = counts / n_k[:, None]
    return np.clip(r, eps[:, None], 1.0 - eps[:, None])


def nbc_fit(outcomes, subtypes, n_subtypes: int, min_lesions: int = 2) -> NbcModel:
    """Per-subtype lesion rates at voxels with at least ``min_lesions`` lesions overall.

    Rates are clamped to [e, 1 - e] with e = 1 / (2 N_k + 2).
    """
    Y = np.asarray(outcomes, dtype=bool)
    subtypes = np.asarray(subtypes, dtype=np.int64)
    if Y.shape[0] == 0:
        raise DataError("empty dataset")
    n_k = np.bincount(subtypes, minlength=n_subtypes).astype(np.float64)
    if np.any(n_k == 0):
        raise DataError(f"subtype(s) {list(np.flatnonzero(n_k == 0) + 1)} have no subjects")
    keep = Y.sum(axis=0) >= min_lesions
    onehot = np.eye(n_subtypes)[subtypes]
    counts = onehot.T @ Y[:, keep].astype(np.float64)
    return NbcModel(keep, _nbc_rates(counts, n_k), n_k)


def nbc_log_scores(rates, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return np.log(rates) @ y + np.log1p(-rates) @ (1.0 - y)


def nbc_posterior(model: NbcModel, y, prior=None) -> np.ndarray:
    """Subtype posterior for one outcome map (full length, filtered internally)."""
    K = model.rates.shape[0]
    s = np.log(_prior(prior, K)) + nbc_log_scores(model.rates, np.asarray(y)[model.sites])
    return np.exp(s - special.logsumexp(s))


def nbc_classify_loo(outcomes, subtypes, n_subtypes: int, prior=None, min_lesions: int = 2,
                     labels=None) -> ClassificationResult:
    """Refit the rates (and the voxel filter) without each subject in turn, then score it."""
    Y = np.asarray(outcomes, dtype=bool)
    subtypes = np.asarray(subtypes, dtype=np.int64)
    N = Y.shape[0]
    n_k = np.bincount(subtypes, minlength=n_subtypes).astype(np.float64)
    if np.any(n_k == 0):
        raise DataError(f"subtype(s) {list(np.flatnonzero(n_k == 0) + 1)} have no subjects")
    Yf = Y.astype(np.float64)
    counts = np.eye(n_subtypes)[subtypes].T @ Yf  # (K, M)
    total = Yf.sum(axis=0)
    logpi = np.log(_prior(prior, n_subtypes))
    post = np.empty((N, n_subtypes))
    for i in range(N):
        k, y = subtypes[i], Yf[i]
        keep = (total - y) >= min_lesions
        c = counts[:, keep].copy()
        c[k] -= y[keep]
        nk = n_k.copy()
        nk[k] -= 1
        if np.any(nk == 0):
            raise DataError("leaving a subject out empties its subtype")
        s = logpi + nbc_log_scores(_nbc_rates(c, nk), y[keep])
        post[i] = np.exp(s - special.logsumexp(s))
    return make_result(post, subtypes, labels)


# ---------------------------------------------------------------------------
# Firth-based

def firth_classify_loo(dataset, prior=None, min_lesions: int = 2, labels=None) -> ClassificationResult:
    """Per-voxel Firth fits without the held-out subject, scored under each forced subtype.

    The score for subtype k is log pi_k plus the logistic log-likelihood of the
    subject's map at kept voxels, with the subject's design row forced to k.
    Fits start from the all-subject fit, which keeps the refits short.
    """
    X = np.asarray(dataset.design.X, dtype=np.float64)
    Y = np.asarray(dataset.outcomes, dtype=bool)
    K = dataset.design.n_subtypes
    subtypes = dataset.subtypes
    N = Y.shape[0]
    if N < 2:
        raise DataError("need at least two subjects")
    total = Y.sum(axis=0)
    base_keep = total >= min_lesions
    full = firth_fit_batch(X, Y[:, base_keep]) if base_keep.any() else None
    start_full = np.zeros((Y.shape[1], X.shape[1]))
    if full is not None:
        start_full[base_keep] = full.coefficients
    logpi = np.log(_prior(prior, K))
    post = np.empty((N, K))
    rows = np.arange(N)
    for i in range(N):
        y = Y[i]
        keep = (total - y) >= min_lesions
        others = rows != i
        s = logpi.copy()
        if keep.any():
            Xi = X[others]
            if np.linalg.matrix_rank(Xi) < Xi.shape[1]:
                raise DataError("design is rank deficient without a held-out subject")
            Yk = Y[others][:, keep]
            packed = np.packbits(Yk, axis=0)
            _, first, inverse = np.unique(packed.T, axis=0, return_index=True, return_inverse=True)
            fit = firth_fit_batch(Xi, Yk[:, first], start=start_full[keep][first])
            B = fit.coefficients[inverse.reshape(-1)]  # (kept, P)
            cand = np.repeat(X[i][None, :], K, axis=0)
            cand[:, :K] = np.eye(K)
            eta = B @ cand.T  # (kept, K)
            yk = y[keep].astype(np.float64)[:, None]
            s += (yk * eta - np.logaddexp(0.0, eta)).sum(axis=0)
        post[i] = np.exp(s - special.logsumexp(s))
    return make_result(post, subtypes, labels)

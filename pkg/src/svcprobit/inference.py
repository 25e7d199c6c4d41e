"""Streaming posterior summaries and map products."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .dataset import Profile
from .errors import DataError


class Welford:
    """One-pass mean and variance of a stream of equally shaped arrays.

    ``merge`` combines two accumulators (Chan et al. pairwise update), so
    partial summaries from different chains or workers can be pooled in any
    grouping.
    """

    def __init__(self, shape=()):
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def update(self, x):
        x = np.asarray(x, dtype=np.float64)
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def merge(self, other: "Welford") -> "Welford":
        out = Welford(self.mean.shape)
        n = self.count + other.count
        out.count = n
        if n == 0:
            return out
        delta = other.mean - self.mean
        out.mean = self.mean + delta * (other.count / n)
        out.m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / n)
        return out

    @property
    def variance(self):
        """Sample variance (n - 1 denominator); NaN before two observations."""
        if self.count < 2:
            return np.full(self.mean.shape, np.nan)
        return np.maximum(self.m2, 0.0) / (self.count - 1)

    @property
    def std(self):
        return np.sqrt(self.variance)

    def state_dict(self, prefix=""):
        return {f"{prefix}count": np.array(self.count), f"{prefix}mean": self.mean,
                f"{prefix}m2": self.m2}

    def load_state_dict(self, d, prefix=""):
        self.count = int(d[f"{prefix}count"])
        self.mean = np.array(d[f"{prefix}mean"], dtype=np.float64)
        self.m2 = np.array(d[f"{prefix}m2"], dtype=np.float64)


def recover_alpha(beta_star: np.ndarray) -> np.ndarray:
    """Fixed effects as the site average of the coefficient field."""
    return np.asarray(beta_star).mean(axis=0)


class PosteriorSummary:
    """Sink accumulating per-site coefficient moments, contrasts and probability maps.

    ``contrasts`` maps a name to a length-P weight vector c; the summary then
    tracks c . beta*(s) at every site (e.g. the difference of two subtype
    intercepts). ``profiles`` are covariate rows at which the posterior mean
    of Phi(x . beta*(s) + w(s) gamma) is accumulated, averaging Phi over draws.
    """

    def __init__(self, names=None, contrasts: dict | None = None, profiles: list[Profile] | None = None):
        self.names = list(names) if names is not None else None
        self.contrasts = dict(contrasts or {})
        self.profiles = list(profiles or [])
        self.coef = self.contrast = self.prob = None
        self.gamma_trace: list[float] = []
        self.alpha_trace: list[np.ndarray] = []
        self.precision_trace: list[np.ndarray] = []
        self.iterations: list[int] = []

    def start(self, problem, config):
        M, P = problem.M, problem.P
        if self.names is None:
            self.names = problem.dataset.design.names
        if not self.profiles:
            self.profiles = list(problem.dataset.profiles)
        self._C = (np.array([np.asarray(c, float) for c in self.contrasts.values()])
                   if self.contrasts else np.zeros((0, P)))
        self._R = np.array([p.x for p in self.profiles]) if self.profiles else np.zeros((0, P))
        self.coef = Welford((M, P))
        self.contrast = Welford((M, len(self.contrasts)))
        self.prob = Welford((len(self.profiles), M))
        self.gamma_trace, self.alpha_trace, self.precision_trace, self.iterations = [], [], [], []

    def consume(self, problem, state, t):
        b = state.beta_star
        self.coef.update(b)
        if self._C.size:
            self.contrast.update(b @ self._C.T)
        if self._R.size:
            eta = b @ self._R.T + (problem.w * state.gamma)[:, None]
            self.prob.update(special.ndtr(eta).T)
        self.gamma_trace.append(float(state.gamma))
        self.alpha_trace.append(state.alpha.copy() if state.alpha is not None else recover_alpha(b))
        self.precision_trace.append(state.precision.copy())
        self.iterations.append(int(t))

    @property
    def count(self) -> int:
        return self.coef.count if self.coef is not None else 0

    def state_dict(self):
        d = {}
        d.update(self.coef.state_dict("coef_"))
        d.update(self.contrast.state_dict("contrast_"))
        d.update(self.prob.state_dict("prob_"))
        P = self.coef.mean.shape[1]
        d["gamma_trace"] = np.array(self.gamma_trace, dtype=float)
        d["alpha_trace"] = np.array(self.alpha_trace, dtype=float).reshape(-1, P)
        d["precision_trace"] = np.array(self.precision_trace, dtype=float).reshape(-1, P, P)
        d["iterations"] = np.array(self.iterations, dtype=np.int64)
        return d

    def load_state_dict(self, d):
        self.coef.load_state_dict(d, "coef_")
        self.contrast.load_state_dict(d, "contrast_")
        self.prob.load_state_dict(d, "prob_")
        self.gamma_trace = list(np.asarray(d["gamma_trace"], dtype=float))
        self.alpha_trace = list(np.asarray(d["alpha_trace"], dtype=float))
        self.precision_trace = list(np.asarray(d["precision_trace"], dtype=float))
        self.iterations = [int(i) for i in d["iterations"]]

    def merge(self, other: "PosteriorSummary") -> "PosteriorSummary":
        """Pool two chains' summaries; traces are concatenated in argument order."""
        out = PosteriorSummary(self.names, self.contrasts, self.profiles)
        out._C, out._R = self._C, self._R
        out.coef = self.coef.merge(other.coef)
        out.contrast = self.contrast.merge(other.contrast)
        out.prob = self.prob.merge(other.prob)
        out.gamma_trace = self.gamma_trace + other.gamma_trace
        out.alpha_trace = self.alpha_trace + other.alpha_trace
        out.precision_trace = self.precision_trace + other.precision_trace
        out.iterations = self.iterations + other.iterations
        return out


@dataclass
class StandardizedMap:
    values: np.ndarray  # mean / sd per site
    thresholded: np.ndarray  # values with |value| < threshold zeroed
    degenerate: np.ndarray  # True where sd == 0 (value reported as 0)
    threshold: float

    def proportion(self, region=None) -> float:
        """Fraction of sites (optionally within a boolean region) with |z| >= threshold."""
        supra = np.abs(self.values) >= self.threshold
        if region is not None:
            supra = supra[np.asarray(region, dtype=bool)]
        return float(supra.mean()) if supra.size else 0.0


def standardize(mean, sd, threshold: float = 2.0) -> StandardizedMap:
    mean = np.asarray(mean, dtype=np.float64)
    sd = np.asarray(sd, dtype=np.float64)
    bad = ~(sd > 0)
    z = np.where(bad, 0.0, mean / np.where(bad, 1.0, sd))
    thr = np.where(np.abs(z) >= threshold, z, 0.0)
    return StandardizedMap(values=z, thresholded=thr, degenerate=bad, threshold=threshold)


def standardized_map(summary: PosteriorSummary, index, threshold: float = 2.0,
                     contrast: bool = False) -> StandardizedMap:
    """Posterior mean over posterior SD at every site, for a coefficient or a contrast.

    ``index`` is a position or a name (coefficient names, or contrast names
    when ``contrast`` is set).
    """
    if summary.count < 2:
        raise DataError("standardized maps need at least two retained draws")
    acc = summary.contrast if contrast else summary.coef
    names = list(summary.contrasts) if contrast else list(summary.names)
    if isinstance(index, str):
        try:
            index = names.index(index)
        except ValueError:
            raise DataError(f"unknown {'contrast' if contrast else 'coefficient'} {index!r}") from None
    return standardize(acc.mean[:, index], acc.std[:, index], threshold)


def probability_map(summary: PosteriorSummary, profile) -> np.ndarray:
    """Posterior mean lesion probability map at a registered profile (index or name)."""
    names = [p.name for p in summary.profiles]
    if isinstance(profile, str):
        if profile not in names:
            raise DataError(f"unknown profile {profile!r}")
        profile = names.index(profile)
    if not 0 <= profile < len(names):
        raise DataError(f"unknown profile index {profile}")
    return summary.prob.mean[profile].copy()


def probability_map_from_draws(beta_draws, gamma_draws, x_ref, w=None) -> np.ndarray:
    """Same quantity from stored draws: mean over t of Phi(x_ref . beta_t(s) + w(s) gamma_t)."""
    beta_draws = np.asarray(beta_draws, dtype=np.float64)  # (T, M, P)
    gamma_draws = np.asarray(gamma_draws, dtype=np.float64).reshape(-1)
    eta = beta_draws @ np.asarray(x_ref, dtype=np.float64)
    if w is not None:
        eta = eta + gamma_draws[:, None] * np.asarray(w)[None, :]
    return special.ndtr(eta).mean(axis=0)

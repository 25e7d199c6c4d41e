"""Gibbs sampler for the spatially varying coefficient probit model.

One iteration redraws the latent normals, sweeps the coefficient field in two
colour phases, then updates the spatial-covariate coefficient and the MCAR
precision. All randomness comes from counter-based streams keyed by
(seed, chain, iteration, update kind, element), so a run is reproducible
for any thread count and can be resumed from a checkpoint bit-exactly.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy import linalg

from . import kernels
from .dataset import Dataset
from .errors import ConfigError, NumericalError, SinkError
from .lattice import Lattice, color_partition
from .model import norm_ppf
from .rng import (KIND_ALPHA, KIND_COEF, KIND_GAMMA, KIND_INIT, KIND_LATENT,
                  KIND_PRECISION, philox_generator, stream_key)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class McmcConfig:
    iterations: int = 12_000
    burn_in: int = 2_000
    thin: int = 1
    seed: int = 0
    chains: int = 1
    wishart_df: float = 0.0
    threads: int = 1
    likelihood_thin: int = 10
    phase_order: str = "AB"
    parameterization: str = "joint"  # "separate" samples alpha on its own (debug only)
    checkpoint_every: int = 0

    def validate(self) -> "McmcConfig":
        if self.iterations < 1:
            raise ConfigError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError(
                f"burn-in ({self.burn_in}) must be non-negative and below iterations "
                f"({self.iterations}) so that at least one draw is retained")
        if self.thin < 1 or self.likelihood_thin < 1:
            raise ConfigError("thinning intervals must be positive")
        if self.chains < 1:
            raise ConfigError("chains must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        if self.wishart_df < 0:
            raise ConfigError("Wishart degrees of freedom must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")
        if self.phase_order not in ("AB", "BA"):
            raise ConfigError("phase order must be 'AB' or 'BA'")
        if self.parameterization not in ("joint", "separate"):
            raise ConfigError("parameterization must be 'joint' or 'separate'")
        return self

    @property
    def n_retained(self) -> int:
        return -(-(self.iterations - self.burn_in) // self.thin)

    def is_retained(self, t: int) -> bool:
        return t >= self.burn_in and (t - self.burn_in) % self.thin == 0


@dataclass
class ModelState:
    """Current values of every unknown.

    ``latent`` is site-major (M x N) so a site's N latents are contiguous.
    ``alpha`` is only sampled under the separate parameterization; under the
    joint one it stays None and the fixed effects are the field average.
    """

    beta_star: np.ndarray
    gamma: float
    precision: np.ndarray
    latent: np.ndarray
    iteration: int = 0
    alpha: np.ndarray | None = None


class Problem:
    """Immutable per-run quantities derived from the dataset."""

    def __init__(self, dataset: Dataset):
        lat = dataset.lattice
        self.dataset = dataset
        self.lattice = lat
        self.X = np.ascontiguousarray(dataset.design.X, dtype=np.float64)
        self.N, self.P = self.X.shape
        self.M = lat.n_sites
        if self.P > kernels.backend.MAX_COEFFICIENTS:
            raise ConfigError(f"at most {kernels.backend.MAX_COEFFICIENTS} coefficients supported")
        self.Y = np.ascontiguousarray(dataset.outcomes.T, dtype=np.uint8)
        self.w = np.ascontiguousarray(dataset.w, dtype=np.float64)
        self.w2sum = float(self.w @ self.w)
        self.XtX = self.X.T @ self.X
        self.xsum = self.X.sum(axis=0)
        self.indptr = lat.indptr.astype(np.int64)
        self.indices = lat.indices.astype(np.int64)
        self.degree = lat.degree
        self.degrees_present = np.unique(self.degree)
        self.src, self.dst = lat.edges()
        self.phase_a, self.phase_b = color_partition(lat)
        self.components = lat.components
        self.n_subtypes = dataset.design.n_subtypes
        if self.w2sum == 0.0:
            log.warning("spatial covariate is identically zero; gamma pinned at 0")

    def cholesky_by_degree(self, precision: np.ndarray) -> np.ndarray:
        """Lower factors of X^T X + d * precision for every neighbour count d."""
        D = int(self.degree.max()) + 1
        out = np.zeros((D, self.P, self.P))
        out[:] = np.eye(self.P)
        for d in self.degrees_present:
            try:
                out[d] = np.linalg.cholesky(self.XtX + d * precision)
            except np.linalg.LinAlgError:
                if d == 0:
                    raise NumericalError(
                        "site posterior precision is singular at isolated sites (no neighbours and "
                        "X^T X singular); prune isolated voxels from the mask") from None
                raise NumericalError(f"site posterior precision not positive definite (degree {d})") from None
        return out


# ---------------------------------------------------------------------------
# conditional updates

def sample_truncated_normal(mu, positive, key: int, threads: int = 1, backend=None) -> np.ndarray:
    """Draw N(mu, 1) truncated to (0, inf) where ``positive`` else (-inf, 0).

    Element ``e`` uses stream ``e`` of ``key``; scalars give a length-1 array.
    """
    be = backend or kernels.backend
    mu = np.ascontiguousarray(np.atleast_1d(mu), dtype=np.float64)
    pos = np.ascontiguousarray(np.broadcast_to(np.atleast_1d(positive), mu.shape), dtype=np.uint8)
    out = np.empty_like(mu)
    be.truncated_normal_batch(mu, pos, key, out, threads)
    return out


def update_latents(problem: Problem, state: ModelState, key: int, threads: int = 1, backend=None):
    """Redraw all latents; returns (X^T Z per site, per-site latent sums)."""
    be = backend or kernels.backend
    xtz = np.empty((problem.M, problem.P))
    zsum = np.empty(problem.M)
    be.update_latents(state.latent, problem.Y, problem.X, state.beta_star, problem.w,
                      float(state.gamma), key, xtz, zsum, threads)
    return xtz, zsum


def update_site_coefficients(problem: Problem, state: ModelState, sites, xtz, key: int,
                             chol=None, threads: int = 1, backend=None):
    """Conjugate draw of beta*(s_j) for each listed site (sites must be non-adjacent).

    Precision X^T X + n_j Q, mean solving it against
    X^T (Z_j - w_j gamma) + Q * (sum of neighbour coefficients).
    """
    be = backend or kernels.backend
    if chol is None:
        chol = problem.cholesky_by_degree(state.precision)
    sites = np.ascontiguousarray(np.atleast_1d(sites), dtype=np.int64)
    gx = problem.xsum * float(state.gamma)
    be.update_sites(state.beta_star, sites, xtz, problem.w, gx, np.zeros(problem.P),
                    np.ascontiguousarray(state.precision), chol, problem.indptr, problem.indices,
                    key, threads)
    return state.beta_star[sites]


def sweep_coefficients(problem: Problem, state: ModelState, xtz, key: int, threads: int = 1,
                       phase_order: str = "AB", backend=None,
                       on_phase: Callable[[str, np.ndarray], None] | None = None):
    """Update every site: one colour class in parallel, barrier, then the other."""
    chol = problem.cholesky_by_degree(state.precision)
    phases = {"A": problem.phase_a, "B": problem.phase_b}
    for name in phase_order:
        update_site_coefficients(problem, state, phases[name], xtz, key, chol, threads, backend)
        if on_phase is not None:
            on_phase(name, state.beta_star.copy())
    return state.beta_star


def update_alpha(problem: Problem, state: ModelState, xtz, gen: np.random.Generator):
    """Separate parameterization only: draw the fixed effects given the zero-centred field."""
    beta = state.beta_star - state.alpha
    rhs = (xtz - problem.w[:, None] * (problem.xsum * state.gamma)[None, :]).sum(axis=0) \
        - problem.XtX @ beta.sum(axis=0)
    prec = problem.M * problem.XtX
    L = np.linalg.cholesky(prec)
    mean = linalg.cho_solve((L, True), rhs)
    new = mean + linalg.solve_triangular(L.T, gen.standard_normal(problem.P), lower=False)
    state.beta_star += (new - state.alpha)[None, :]
    state.alpha = new
    return new


def gamma_conditional(problem: Problem, state: ModelState, zsum) -> tuple[float, float]:
    """Mean and variance of gamma's full conditional (flat prior)."""
    v = 1.0 / (problem.N * problem.w2sum)
    resid = zsum - state.beta_star @ problem.xsum
    return v * float(problem.w @ resid), v


def update_gamma(problem: Problem, state: ModelState, zsum, gen: np.random.Generator) -> float:
    if problem.w2sum == 0.0:
        state.gamma = 0.0
        return 0.0
    m, v = gamma_conditional(problem, state, zsum)
    state.gamma = m + np.sqrt(v) * gen.standard_normal()
    return state.gamma


def pairwise_scatter(problem: Problem, beta: np.ndarray, backend=None) -> np.ndarray:
    """Sum over neighbour pairs of (b_i - b_j)(b_i - b_j)^T."""
    be = backend or kernels.backend
    out = np.zeros((problem.P, problem.P))
    be.edge_scatter(np.ascontiguousarray(beta), problem.src, problem.dst, out)
    return out


def precision_conditional(problem: Problem, beta: np.ndarray, nu: float, backend=None):
    """(df, scale) of the Wishart full conditional of the MCAR precision."""
    df = nu + problem.M - problem.components
    if df <= problem.P - 1:
        raise ConfigError(
            f"lattice too small for improper prior; increase nu (df {df} <= P - 1 = {problem.P - 1})")
    S = pairwise_scatter(problem, beta, backend)
    scale = np.linalg.inv(np.eye(problem.P) + S)
    return df, 0.5 * (scale + scale.T)


def update_precision(problem: Problem, state: ModelState, nu: float, gen: np.random.Generator,
                     backend=None) -> np.ndarray:
    # without any neighbour pair the precision enters no conditional; leave it be
    if problem.src.size == 0:
        return state.precision
    df, scale = precision_conditional(problem, state.beta_star, nu, backend)
    state.precision = sample_wishart(df, scale, gen)
    return state.precision


def sample_wishart(df: float, scale: np.ndarray, gen: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Wishart(df, scale) draw by the Bartlett decomposition; ``size`` gives a stack of draws."""
    scale = np.atleast_2d(np.asarray(scale, dtype=np.float64))
    P = scale.shape[0]
    if df <= P - 1:
        raise ConfigError(f"Wishart degrees of freedom {df} must exceed P - 1 = {P - 1}")
    try:
        L = np.linalg.cholesky(scale)
    except np.linalg.LinAlgError:
        raise NumericalError("Wishart scale matrix is not positive definite") from None
    n = 1 if size is None else int(size)
    A = np.zeros((n, P, P))
    diag = np.arange(P)
    A[:, diag, diag] = np.sqrt(gen.chisquare(df - diag, size=(n, P)))
    rows, cols = np.tril_indices(P, -1)
    A[:, rows, cols] = gen.standard_normal((n, rows.size))
    LA = L @ A
    W = LA @ np.swapaxes(LA, 1, 2)
    W = 0.5 * (W + np.swapaxes(W, 1, 2))
    return W[0] if size is None else W


# ---------------------------------------------------------------------------
# driver

def initial_state(problem: Problem, config: McmcConfig, chain: int) -> ModelState:
    """Over-dispersed start: a common probit level plus chain-specific offsets and site noise."""
    gen = philox_generator(config.seed, chain, 0, KIND_INIT)
    M, P, K = problem.M, problem.P, problem.n_subtypes
    pbar = float(np.clip(problem.Y.mean(), 1e-3, 1 - 1e-3))
    base = np.zeros(P)
    base[:K] = norm_ppf(pbar)
    beta = base + gen.normal(0.0, 0.25, P) + gen.normal(0.0, 0.05, (M, P))
    state = ModelState(
        beta_star=np.ascontiguousarray(beta),
        gamma=0.0,
        precision=np.eye(P),
        latent=np.zeros((M, problem.N)),
        iteration=0,
        alpha=np.zeros(P) if config.parameterization == "separate" else None,
    )
    if config.parameterization == "separate":
        state.alpha = beta.mean(axis=0)
    update_precision(problem, state, config.wishart_df, gen)
    return state


def gibbs_step(problem: Problem, state: ModelState, config: McmcConfig, chain: int, t: int,
               backend=None):
    """One full sweep at iteration ``t``; returns per-site latent statistics."""
    seed = config.seed
    xtz, zsum = update_latents(problem, state, stream_key(seed, chain, t, KIND_LATENT),
                               config.threads, backend)
    sweep_coefficients(problem, state, xtz, stream_key(seed, chain, t, KIND_COEF),
                       config.threads, config.phase_order, backend)
    if config.parameterization == "separate":
        update_alpha(problem, state, xtz, philox_generator(seed, chain, t, KIND_ALPHA))
    update_gamma(problem, state, zsum, philox_generator(seed, chain, t, KIND_GAMMA))
    update_precision(problem, state, config.wishart_df,
                     philox_generator(seed, chain, t, KIND_PRECISION), backend)
    state.iteration = t + 1
    return xtz, zsum


@dataclass
class ChainResult:
    state: ModelState
    sinks: list
    config: McmcConfig
    chain: int
    problem: Problem = field(repr=False)


def gibbs_run(dataset: Dataset | Problem, config: McmcConfig, sinks: Iterable = (), chain: int = 0,
              checkpoint: str | os.PathLike | None = None, resume: bool = False,
              backend=None, progress: Callable[[int], None] | None = None) -> ChainResult:
    """Run one chain, feeding every retained draw to each sink.

    Sinks implement ``start(problem, config)``, ``consume(problem, state, t)``,
    ``state_dict()`` and ``load_state_dict(d)``. With ``checkpoint`` set, state is
    saved every ``config.checkpoint_every`` iterations and at the end; with
    ``resume`` the run continues from that file.
    """
    config.validate()
    problem = dataset if isinstance(dataset, Problem) else Problem(dataset)
    sinks = list(sinks)
    for s in sinks:
        s.start(problem, config)

    pending = []
    if resume and checkpoint is not None and os.path.exists(checkpoint):
        state, pending = load_checkpoint(checkpoint, problem, config, chain, sinks, with_pending=True)
    else:
        state = initial_state(problem, config, chain)

    def feed(t, which):
        for n, i in enumerate(which):
            try:
                sinks[i].consume(problem, state, t)
            except OSError as exc:
                path = checkpoint or "svcprobit-abort-checkpoint.npz"
                save_checkpoint(path, state, config, chain, sinks, pending=which[n:])
                raise SinkError(f"sink failed at iteration {t}: {exc}", checkpoint=path) from exc

    if pending:
        feed(state.iteration - 1, pending)
    for t in range(state.iteration, config.iterations):
        gibbs_step(problem, state, config, chain, t, backend)
        if config.is_retained(t):
            feed(t, list(range(len(sinks))))
        if checkpoint is not None and config.checkpoint_every and \
                (t + 1) % config.checkpoint_every == 0 and t + 1 < config.iterations:
            save_checkpoint(checkpoint, state, config, chain, sinks)
        if progress is not None:
            progress(t)

    if checkpoint is not None:
        save_checkpoint(checkpoint, state, config, chain, sinks)
    return ChainResult(state=state, sinks=sinks, config=config, chain=chain, problem=problem)


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, state: ModelState, config: McmcConfig, chain: int, sinks=(), pending=()) -> None:
    """Versioned dump of the model state and sink accumulators.

    Latents are not stored: every iteration redraws them before use.
    ``pending`` lists sinks that have not yet consumed the last completed
    iteration (set when a sink fails); resuming feeds them first.
    """
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "config": np.array(json.dumps(asdict(config))),
        "chain": np.array(chain),
        "iteration": np.array(state.iteration),
        "beta_star": state.beta_star,
        "gamma": np.array(state.gamma),
        "precision": state.precision,
        "pending": np.asarray(list(pending), dtype=np.int64),
    }
    if state.alpha is not None:
        arrays["alpha"] = state.alpha
    for i, s in enumerate(sinks):
        for k, v in s.state_dict().items():
            arrays[f"sink{i}/{k}"] = np.asarray(v)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path, problem: Problem, config: McmcConfig, chain: int, sinks=(), with_pending=False):
    with np.load(path, allow_pickle=False) as z:
        version = int(z["version"])
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"checkpoint version {version} not supported")
        saved = json.loads(str(z["config"]))
        for k in ("seed", "wishart_df", "parameterization", "phase_order", "burn_in", "thin",
                  "likelihood_thin"):
            if saved[k] != getattr(config, k):
                raise ConfigError(f"checkpoint was written with {k}={saved[k]!r}")
        if int(z["chain"]) != chain:
            raise ConfigError(f"checkpoint belongs to chain {int(z['chain'])}")
        beta = np.ascontiguousarray(z["beta_star"])
        if beta.shape != (problem.M, problem.P):
            raise ConfigError("checkpoint does not match the dataset dimensions")
        state = ModelState(
            beta_star=beta,
            gamma=float(z["gamma"]),
            precision=np.array(z["precision"]),
            latent=np.zeros((problem.M, problem.N)),
            iteration=int(z["iteration"]),
            alpha=np.array(z["alpha"]) if "alpha" in z.files else None,
        )
        for i, s in enumerate(sinks):
            prefix = f"sink{i}/"
            s.load_state_dict({k[len(prefix):]: z[k] for k in z.files if k.startswith(prefix)})
        pending = [int(i) for i in z["pending"]] if "pending" in z.files else []
    return (state, pending) if with_pending else state

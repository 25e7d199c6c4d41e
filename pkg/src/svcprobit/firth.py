"""Firth-penalized logistic regression, one fit per voxel.

Maximizes the logistic log-likelihood plus half the log-determinant of the
Fisher information. Newton steps use the modified score
U*_r = sum_i (y_i - p_i + h_i (1/2 - p_i)) x_ir, with h the hat diagonal of
W^{1/2} X (X^T W X)^{-1} X^T W^{1/2}, and are halved until the penalized
likelihood does not decrease.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DataError

TOL = 1e-6
MAX_ITER = 50
MAX_HALVINGS = 10


@dataclass
class FirthFit:
    coefficients: np.ndarray
    covariance: np.ndarray
    converged: bool
    iterations: int
    penalized_loglik: float

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


@dataclass
class FirthBatch:
    """Fits for V outcome vectors sharing one design."""

    coefficients: np.ndarray  # (V, P)
    covariance: np.ndarray  # (V, P, P)
    converged: np.ndarray  # (V,)
    iterations: np.ndarray  # (V,)

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.einsum("vpp->vp", self.covariance))


def _check_design(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DataError("design must be a non-empty 2-D array")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise DataError("design matrix is rank deficient")
    return X


def _penalized(X, Y, B):
    """Penalized log-likelihood, information and its inverse for each row of B."""
    eta = B @ X.T  # (V, N)
    p = expit(eta)
    W = p * (1.0 - p)
    info = np.matmul(np.swapaxes(W[:, :, None] * X, 1, 2), X)
    sign, logdet = np.linalg.slogdet(info)
    ll = (Y * eta - np.logaddexp(0.0, eta)).sum(axis=1)
    pen = ll + 0.5 * np.where(sign > 0, logdet, -np.inf)
    return pen, p, W, info


def firth_fit_batch(X, Y, tol: float = TOL, max_iter: int = MAX_ITER,
                    max_halvings: int = MAX_HALVINGS, start=None) -> FirthBatch:
    """Fit every column of ``Y`` (N x V binary) against the shared design ``X``."""
    X = _check_design(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    N, P = X.shape
    if Y.shape[0] != N:
        raise DataError("outcome and design row counts differ")
    Yt = np.ascontiguousarray(Y.T)  # (V, N)
    V = Yt.shape[0]
    B = np.zeros((V, P)) if start is None else np.array(start, dtype=np.float64, copy=True)
    converged = np.zeros(V, dtype=bool)
    iters = np.zeros(V, dtype=np.int64)
    active = np.arange(V)
    pen, p, W, info = _penalized(X, Yt, B)

    for it in range(max_iter + 1):
        if active.size == 0:
            break
        inv = np.linalg.inv(info[active])
        h = W[active] * (np.matmul(X, inv) * X).sum(axis=2)
        U = (Yt[active] - p[active] + h * (0.5 - p[active])) @ X
        done = np.abs(U).max(axis=1) < tol
        converged[active[done]] = True
        iters[active] = it
        if it == max_iter:
            break
        active, inv, U = active[~done], inv[~done], U[~done]
        if active.size == 0:
            break
        step = np.einsum("vpq,vq->vp", inv, U)
        old = pen[active]
        trial = B[active] + step
        t_pen, t_p, t_W, t_info = _penalized(X, Yt[active], trial)
        bad = ~(t_pen >= old)
        for _ in range(max_halvings):
            if not bad.any():
                break
            step[bad] *= 0.5
            trial[bad] = B[active[bad]] + step[bad]
            r_pen, r_p, r_W, r_info = _penalized(X, Yt[active[bad]], trial[bad])
            t_pen[bad], t_p[bad], t_W[bad], t_info[bad] = r_pen, r_p, r_W, r_info
            bad[bad] = ~(r_pen >= old[bad])
        B[active], pen[active], p[active], W[active], info[active] = trial, t_pen, t_p, t_W, t_info

    cov = np.linalg.inv(info)
    return FirthBatch(B, 0.5 * (cov + np.swapaxes(cov, 1, 2)), converged, iters)


def firth_fit(X, y, tol: float = TOL, max_iter: int = MAX_ITER,
              max_halvings: int = MAX_HALVINGS) -> FirthFit:
    """Firth logistic regression of binary ``y`` on ``X`` (include an intercept column yourself)."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    batch = firth_fit_batch(X, y[:, None], tol, max_iter, max_halvings)
    pen, *_ = _penalized(np.asarray(X, dtype=np.float64), y[None, :], batch.coefficients)
    return FirthFit(batch.coefficients[0], batch.covariance[0], bool(batch.converged[0]),
                    int(batch.iterations[0]), float(pen[0]))


def penalized_loglik(X, y, beta) -> float:
    X = np.asarray(X, dtype=np.float64)
    pen, *_ = _penalized(X, np.asarray(y, dtype=np.float64)[None, :],
                         np.atleast_2d(np.asarray(beta, dtype=np.float64)))
    return float(pen[0])


def fit_unique_columns(X, Y, **kwargs) -> tuple[FirthBatch, np.ndarray]:
    """Fit each distinct column of Y once; returns fits and the column -> fit index map.

    Identical outcome patterns therefore receive bit-identical estimates.
    """
    Y = np.asarray(Y, dtype=bool)
    packed = np.packbits(Y, axis=0)
    _, first, inverse = np.unique(packed.T, axis=0, return_index=True, return_inverse=True)
    batch = firth_fit_batch(X, Y[:, first], **kwargs)
    return batch, inverse.reshape(-1)


@dataclass
class FirthMaps:
    z: np.ndarray  # (M, P) coefficient / SE, 0 where not fitted
    coefficients: np.ndarray  # (M, P)
    standard_errors: np.ndarray  # (M, P)
    fitted: np.ndarray  # (M,) voxel passed the lesion-count filter
    converged: np.ndarray  # (M,)
    probabilities: np.ndarray  # (n_profiles, M)

    def proportion(self, index: int, threshold: float = 2.0, region=None) -> float:
        supra = np.abs(self.z[:, index]) >= threshold
        if region is not None:
            supra = supra[np.asarray(region, dtype=bool)]
        return float(supra.mean()) if supra.size else 0.0


def firth_map(dataset, min_lesions: int = 0, profiles=None, **kwargs) -> FirthMaps:
    """Mass-univariate Firth fits over voxels with at least ``min_lesions`` lesions.

    Uses the subject design only (no spatial covariate). Probabilities are the
    fitted logistic means at each profile's covariate row.
    """
    X = dataset.design.X
    Y = dataset.outcomes
    N, M = Y.shape
    if N == 0:
        raise DataError("empty dataset")
    P = X.shape[1]
    profiles = profiles if profiles is not None else dataset.profiles
    R = np.array([p.x for p in profiles]) if profiles else np.zeros((0, P))

    fitted = Y.sum(axis=0) >= min_lesions
    coef = np.zeros((M, P))
    se = np.zeros((M, P))
    conv = np.zeros(M, dtype=bool)
    if fitted.any():
        batch, inverse = fit_unique_columns(X, Y[:, fitted], **kwargs)
        coef[fitted] = batch.coefficients[inverse]
        se[fitted] = batch.standard_errors[inverse]
        conv[fitted] = batch.converged[inverse]
    z = np.divide(coef, se, out=np.zeros_like(coef), where=se > 0)
    prob = expit(coef @ R.T).T
    prob[:, ~fitted] = 0.0
    return FirthMaps(z, coef, se, fitted, conv, prob)

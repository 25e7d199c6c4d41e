"""Pure numpy implementations of the compiled kernels.

Draw-for-draw equivalent to ``_core``: each element consumes its own
counter-based stream in the same order. Vectorized over elements, single
threaded; ``nthreads`` is accepted and ignored.
"""

import numpy as np
from scipy.linalg import solve_triangular

from .rng import Streams

MAX_COEFFICIENTS = 32


def truncated_normal_batch(mu, positive, key, out, nthreads=1):
    mu = np.asarray(mu, dtype=np.float64)
    s = Streams(key, np.arange(mu.size))
    out[:] = s.truncated_normal(mu, np.asarray(positive, dtype=bool))


def normal_batch(key, out, nthreads=1):
    s = Streams(key, np.arange(out.size))
    out[:] = s.normal()


def update_latents(Z, Y, X, beta, w, gamma, key, xtz, zsum, nthreads=1):
    M, N = Z.shape
    # chunk over sites to bound temporaries
    chunk = max(1, 2_000_000 // max(N, 1))
    for start in range(0, M, chunk):
        stop = min(M, start + chunk)
        eta = beta[start:stop] @ X.T + (w[start:stop] * gamma)[:, None]
        idx = (np.arange(start, stop)[:, None] * N + np.arange(N)[None, :]).ravel()
        s = Streams(key, idx)
        z = s.truncated_normal(eta.ravel(), Y[start:stop].ravel() != 0).reshape(stop - start, N)
        Z[start:stop] = z
        xtz[start:stop] = z @ X
        zsum[start:stop] = z.sum(axis=1)


def update_sites(beta, sites, xtz, w, gx, offset, Q, chol, indptr, indices, key, nthreads=1):
    sites = np.asarray(sites, dtype=np.int64)
    if sites.size == 0:
        return
    P = beta.shape[1]
    deg = indptr[sites + 1] - indptr[sites]
    owner = np.repeat(np.arange(sites.size), deg)
    first = np.cumsum(deg) - deg
    pos = indptr[sites][owner] + (np.arange(owner.size) - first[owner])
    nsum = np.zeros((sites.size, P))
    np.add.at(nsum, owner, beta[indices[pos]])
    b =xtz[sites] - w[sites][:, None] * gx[None, :] - offset[None, :] + nsum @ Q.T

    s = Streams(key, sites)
    eps = np.column_stack([s.normal() for _ in range(P)]) if P else np.zeros((sites.size, 0))

    new = np.empty_like(b)
    for d in np.unique(deg):
        sel = deg == d
        L = chol[d]
        y = solve_triangular(L, b[sel].T, lower=True)
        mu = solve_triangular(L.T, y, lower=False)
        v = solve_triangular(L.T, eps[sel].T, lower=False)
        new[sel] = (mu + v).T
    beta[sites] = new


def edge_scatter(beta, src, dst, out):
    d = beta[src] - beta[dst]
    out[:] = np.einsum("ep,eq->pq", d, d)

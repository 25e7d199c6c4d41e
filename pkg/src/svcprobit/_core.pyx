# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the Gibbs sweep.

Mirrors ``_fallback`` draw for draw: same counter-based streams, same
ziggurat tables, same rejection schemes. Parallel loops write disjoint
outputs and every reduction runs in a fixed order, so output does not
depend on the number of threads.
"""

import numpy as np

from cython.parallel cimport prange
from libc.math cimport exp, log, sqrt
from libc.stdint cimport int64_t, uint8_t, uint64_t

cdef enum:
    MAXP = 32

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t WEYL = 0xD1B54A32D192ED03ULL
cdef double INV53 = 1.0 / 9007199254740992.0
cdef uint64_t MASK52 = 0x000FFFFFFFFFFFFFULL
cdef double ZIG_R = 3.6541528853610088

cdef uint64_t KI[256]
cdef double WI[256]
cdef double FI[256]

MAX_COEFFICIENTS = MAXP


def set_tables(uint64_t[::1] ki, double[::1] wi, double[::1] fi):
    cdef int i
    for i in range(256):
        KI[i] = ki[i]
        WI[i] = wi[i]
        FI[i] = fi[i]


cdef struct Stream:
    uint64_t base
    uint64_t k


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline void stream_init(Stream* s, uint64_t key, uint64_t idx) noexcept nogil:
    s.base = key + idx * WEYL
    s.k = 0


cdef inline uint64_t next_bits(Stream* s) noexcept nogil:
    s.k += 1
    return mix64(s.base + s.k * GOLDEN)


cdef inline double next_uniform(Stream* s) noexcept nogil:
    return <double>(next_bits(s) >> 11) * INV53


cdef inline double next_open(Stream* s) noexcept nogil:
    return (<double>(next_bits(s) >> 11) + 0.5) * INV53


cdef inline double std_normal(Stream* s) noexcept nogil:
    cdef uint64_t b, rabs
    cdef int idx, neg
    cdef double x, xx, yy
    while True:
        b = next_bits(s)
        idx = <int>(b & 0xFF)
        neg = <int>((b >> 8) & 1)
        rabs = (b >> 9) & MASK52
        x = <double>rabs * WI[idx]
        if neg:
            x = -x
        if rabs < KI[idx]:
            return x
        if idx == 0:
            while True:
                xx = -log(next_open(s)) / ZIG_R
                yy = -log(next_open(s))
                if yy + yy > xx * xx:
                    if neg:
                        return -(ZIG_R + xx)
                    return ZIG_R + xx
        else:
            if (FI[idx - 1] - FI[idx]) * next_uniform(s) + FI[idx] < exp(-0.5 * x * x):
                return x


cdef inline double tail_normal(Stream* s, double a) noexcept nogil:
    cdef double z, u, d, rate
    if a <= 0.0:
        while True:
            z = std_normal(s)
            if z > a:
                return z
    rate = 0.5 * (a + sqrt(a * a + 4.0))
    while True:
        z = a - log(next_open(s)) / rate
        u = next_uniform(s)
        d = z - rate
        if u < exp(-0.5 * d * d):
            return z


cdef inline double truncated_normal(Stream* s, double mu, bint positive) noexcept nogil:
    if positive:
        return mu + tail_normal(s, -mu)
    return mu - tail_normal(s, mu)


cdef double _tn_element(uint64_t key, uint64_t e, double mu, bint positive) noexcept nogil:
    cdef Stream s
    stream_init(&s, key, e)
    return truncated_normal(&s, mu, positive)


cdef double _normal_element(uint64_t key, uint64_t e) noexcept nogil:
    cdef Stream s
    stream_init(&s, key, e)
    return std_normal(&s)


def truncated_normal_batch(double[::1] mu, uint8_t[::1] positive, uint64_t key,
                           double[::1] out, int nthreads=1):
    """out[e] ~ N(mu[e], 1) truncated by side, element e drawing from stream e."""
    cdef Py_ssize_t e, n = mu.shape[0]
    for e in prange(n, nogil=True, schedule="static", num_threads=nthreads):
        out[e] = _tn_element(key, <uint64_t>e, mu[e], positive[e] != 0)


def normal_batch(uint64_t key, double[::1] out, int nthreads=1):
    cdef Py_ssize_t e, n = out.shape[0]
    for e in prange(n, nogil=True, schedule="static", num_threads=nthreads):
        out[e] = _normal_element(key, <uint64_t>e)


cdef void _latent_site(Py_ssize_t j, double[:, ::1] Z, const uint8_t[:, ::1] Y,
                       const double[:, ::1] X, const double[:, ::1] beta, double wg,
                       uint64_t key, double[:, ::1] xtz, double[::1] zsum) noexcept nogil:
    cdef Py_ssize_t N = Z.shape[1], P = X.shape[1], i, p
    cdef double eta, acc
    cdef double* zrow = &Z[j, 0]
    cdef const uint8_t* yrow = &Y[j, 0]
    cdef const double* xrow
    cdef double bj[MAXP]
    cdef Stream s
    for p in range(P):
        bj[p] = beta[j, p]
    for i in range(N):
        xrow = &X[i, 0]
        eta = wg
        for p in range(P):
            eta = eta + xrow[p] * bj[p]
        stream_init(&s, key, <uint64_t>(j * N + i))
        zrow[i] = truncated_normal(&s, eta, yrow[i] != 0)
    for p in range(P):
        acc = 0.0
        for i in range(N):
            acc = acc + X[i, p] * zrow[i]
        xtz[j, p] = acc
    acc = 0.0
    for i in range(N):
        acc = acc + zrow[i]
    zsum[j] = acc


def update_latents(double[:, ::1] Z, const uint8_t[:, ::1] Y, const double[:, ::1] X,
                   const double[:, ::1] beta, const double[::1] w, double gamma,
                   uint64_t key, double[:, ::1] xtz, double[::1] zsum, int nthreads=1):
    """Redraw every latent and accumulate per-site sufficient statistics.

    Z, Y are site-major (M x N). Element index of (site j, subject i) is j*N + i.
    On return xtz[j] = X^T Z[j] and zsum[j] = sum_i Z[j, i].
    """
    cdef Py_ssize_t M = Z.shape[0], j
    if X.shape[1] > MAXP:
        raise ValueError(f"at most {MAXP} coefficients supported")
    for j in prange(M, nogil=True, schedule="static", num_threads=nthreads):
        _latent_site(j, Z, Y, X, beta, w[j] * gamma, key, xtz, zsum)


cdef void _site_update(Py_ssize_t j, double[:, ::1] beta, const double[:, ::1] xtz,
                       const double[::1] w, const double[::1] gx, const double[::1] offset,
                       const double[:, ::1] Q, const double[:, :, ::1] chol,
                       const int64_t[::1] indptr, const int64_t[::1] indices,
                       uint64_t key, Py_ssize_t P) noexcept nogil:
    cdef double nsum[MAXP]
    cdef double b[MAXP]
    cdef double eps[MAXP]
    cdef double acc
    cdef Py_ssize_t p, q, r, start = indptr[j], stop = indptr[j + 1]
    cdef Py_ssize_t deg = stop - start
    cdef Stream s

    for p in range(P):
        nsum[p] = 0.0
    for r in range(start, stop):
        for p in range(P):
            nsum[p] += beta[indices[r], p]
    for p in range(P):
        acc = xtz[j, p] - w[j] * gx[p] - offset[p]
        for q in range(P):
            acc = acc + Q[p, q] * nsum[q]
        b[p] = acc
    # L y = b
    for p in range(P):
        acc = b[p]
        for q in range(p):
            acc = acc - chol[deg, p, q] * b[q]
        b[p] = acc / chol[deg, p, p]
    # L^T mu = y
    for p in range(P - 1, -1, -1):
        acc = b[p]
        for q in range(p + 1, P):
            acc = acc - chol[deg, q, p] * b[q]
        b[p] = acc / chol[deg, p, p]
    stream_init(&s, key, <uint64_t>j)
    for p in range(P):
        eps[p] = std_normal(&s)
    # L^T v = eps
    for p in range(P - 1, -1, -1):
        acc = eps[p]
        for q in range(p + 1, P):
            acc = acc - chol[deg, q, p] * eps[q]
        eps[p] = acc / chol[deg, p, p]
    for p in range(P):
        beta[j, p] = b[p] + eps[p]


def update_sites(double[:, ::1] beta, const int64_t[::1] sites, const double[:, ::1] xtz,
                 const double[::1] w, const double[::1] gx, const double[::1] offset,
                 const double[:, ::1] Q, const double[:, :, ::1] chol,
                 const int64_t[::1] indptr, const int64_t[::1] indices,
                 uint64_t key, int nthreads=1):
    """Conjugate MVN update of every listed site; listed sites must be pairwise non-adjacent.

    chol[d] is the lower Cholesky factor of X^T X + d Q for neighbour count d.
    """
    cdef Py_ssize_t n = sites.shape[0], P = beta.shape[1], e
    if P > MAXP:
        raise ValueError(f"at most {MAXP} coefficients supported")
    for e in prange(n, nogil=True, schedule="static", num_threads=nthreads):
        _site_update(sites[e], beta, xtz, w, gx, offset, Q, chol, indptr, indices, key, P)


def edge_scatter(const double[:, ::1] beta, const int64_t[::1] src, const int64_t[::1] dst,
                 double[:, ::1] out):
    """out = sum over edges of (beta[src] - beta[dst]) outer itself, fixed order."""
    cdef Py_ssize_t E = src.shape[0], P = beta.shape[1], e, p, q
    cdef double d[MAXP]
    if P > MAXP:
        raise ValueError(f"at most {MAXP} coefficients supported")
    with nogil:
        for p in range(P):
            for q in range(P):
                out[p, q] = 0.0
        for e in range(E):
            for p in range(P):
                d[p] = beta[src[e], p] - beta[dst[e], p]
            for p in range(P):
                for q in range(p, P):
                    out[p, q] += d[p] * d[q]
        for p in range(P):
            for q in range(p):
                out[p, q] = out[q, p]

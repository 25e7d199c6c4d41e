"""Counter-based random streams.

Every random draw in the sampler is addressed by a tuple
``(seed, chain, iteration, kind, element, k)``: a stream key is hashed from
the first four words, each element (a site, or a site/subject pair) gets its
own SplitMix64 stream whose base is a Weyl step ``key + element * WEYL``, and ``k`` counts draws within that
stream. Nothing depends on evaluation order, so results are identical for any
thread count and for both kernel backends.

The standard normal generator is a 256-layer ziggurat; the tables built here
are shared with the compiled core.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
WEYL = 0xD1B54A32D192ED03
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_KEY_INIT = 0x243F6A8885A308D3
_INV53 = 1.0 / 9007199254740992.0
_MASK52 = 0x000FFFFFFFFFFFFF

# update kinds
KIND_LATENT = 1
KIND_COEF = 2
KIND_GAMMA = 3
KIND_PRECISION = 4
KIND_INIT = 5
KIND_ALPHA = 6
KIND_MONITOR = 7
KIND_TEST = 99

ZIG_R = 3.6541528853610088
ZIG_V = 0.00492867323399


def _build_ziggurat():
    ki = np.zeros(256, dtype=np.uint64)
    wi = np.zeros(256, dtype=np.float64)
    fi = np.zeros(256, dtype=np.float64)
    m1 = float(1 << 52)
    dn = tn = ZIG_R
    q = ZIG_V / math.exp(-0.5 * dn * dn)
    ki[0] = np.uint64(int((dn / q) * m1))
    ki[1] = 0
    wi[0] = q / m1
    wi[255] = dn / m1
    fi[0] = 1.0
    fi[255] = math.exp(-0.5 * dn * dn)
    for i in range(254, 0, -1):
        dn = math.sqrt(-2.0 * math.log(ZIG_V / dn + math.exp(-0.5 * dn * dn)))
        ki[i + 1] = np.uint64(int((dn / tn) * m1))
        tn = dn
        fi[i] = math.exp(-0.5 * dn * dn)
        wi[i] = dn / m1
    return ki, wi, fi


ZIG_KI, ZIG_WI, ZIG_FI = _build_ziggurat()


def mix64_int(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def stream_key(*words: int) -> int:
    """Hash integer words (seed, chain, iteration, kind, ...) into a 64-bit key."""
    h = _KEY_INIT
    for w in words:
        h = mix64_int(((h ^ (int(w) & MASK64)) + GOLDEN) & MASK64)
    return h


def element_base_int(key: int, idx: int) -> int:
    return (key + idx * WEYL) & MASK64


def mix64(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_M1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def element_bases(key: int, idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return np.uint64(key) + idx * np.uint64(WEYL)


class Streams:
    """A vector of independent element streams, advanced in lockstep where needed.

    ``bits(sel)`` returns the next 64-bit word for the selected elements and
    advances only their counters, so each element consumes its own sequence
    exactly as the scalar code path would.
    """

    def __init__(self, key: int, idx):
        self.base = element_bases(key, np.atleast_1d(idx))
        self.count = np.zeros(self.base.shape, dtype=np.uint64)

    def __len__(self):
        return self.base.size

    def bits(self, sel=None) -> np.ndarray:
        if sel is None:
            sel = slice(None)
        self.count[sel] += np.uint64(1)
        with np.errstate(over="ignore"):
            return mix64(self.base[sel] + self.count[sel] * np.uint64(GOLDEN))

    def uniform(self, sel=None) -> np.ndarray:
        """Uniform on [0, 1)."""
        return (self.bits(sel) >> np.uint64(11)).astype(np.float64) * _INV53

    def open_uniform(self, sel=None) -> np.ndarray:
        """Uniform on (0, 1)."""
        return ((self.bits(sel) >> np.uint64(11)).astype(np.float64) + 0.5) * _INV53

    def normal(self, sel=None) -> np.ndarray:
        """One standard normal per selected element (ziggurat)."""
        if sel is None:
            sel = np.arange(self.base.size)
        sel = np.asarray(sel)
        if sel.dtype == bool:
            sel = np.flatnonzero(sel)
        out = np.empty(sel.size)
        pending = np.arange(sel.size)
        while pending.size:
            b = self.bits(sel[pending])
            idx = (b & np.uint64(0xFF)).astype(np.intp)
            neg = ((b >> np.uint64(8)) & np.uint64(1)).astype(bool)
            rabs = (b >> np.uint64(9)) & np.uint64(_MASK52)
            x = rabs.astype(np.float64) * ZIG_WI[idx]
            x = np.where(neg, -x, x)
            done = rabs < ZIG_KI[idx]
            out[pending[done]] = x[done]

            tail = ~done & (idx == 0)
            if tail.any():
                tp = pending[tail]
                tneg = neg[tail]
                res = np.empty(tp.size)
                todo = np.arange(tp.size)
                while todo.size:
                    s = sel[tp[todo]]
                    xx = -np.log(self.open_uniform(s)) / ZIG_R
                    yy = -np.log(self.open_uniform(s))
                    ok = yy + yy > xx * xx
                    v = ZIG_R + xx[ok]
                    res[todo[ok]] = np.where(tneg[todo[ok]], -v, v)
                    todo = todo[~ok]
                out[tp] = res

            wedge = ~done & (idx != 0)
            keep = np.zeros(pending.size, dtype=bool)
            if wedge.any():
                wi_ = idx[wedge]
                u = self.uniform(sel[pending[wedge]])
                xw = x[wedge]
                acc = (ZIG_FI[wi_ - 1] - ZIG_FI[wi_]) * u + ZIG_FI[wi_] < np.exp(-0.5 * xw * xw)
                out[pending[wedge][acc]] = xw[acc]
                keep[np.flatnonzero(wedge)[~acc]] = True
            pending = pending[keep]
        return out

    def tail_normal(self, a: np.ndarray, sel=None) -> np.ndarray:
        """Standard normal conditioned on X > a, one per selected element.

        a <= 0: plain rejection from N(0, 1).
        a > 0: translated exponential proposal with the optimal rate
        (a + sqrt(a^2 + 4)) / 2, accepted with probability exp(-(z - rate)^2 / 2).
        """
        if sel is None:
            sel = np.arange(self.base.size)
        sel = np.asarray(sel)
        a = np.broadcast_to(np.asarray(a, dtype=np.float64), sel.shape)
        out = np.empty(sel.size)

        low = np.flatnonzero(a <= 0.0)
        while low.size:
            z = self.normal(sel[low])
            ok = z > a[low]
            out[low[ok]] = z[ok]
            low = low[~ok]

        high = np.flatnonzero(a > 0.0)
        if high.size:
            ah = a[high]
            rate = 0.5 * (ah + np.sqrt(ah * ah + 4.0))
            while high.size:
                s = sel[high]
                z = ah - np.log(self.open_uniform(s)) / rate
                u = self.uniform(s)
                d = z - rate
                ok = u < np.exp(-0.5 * d * d)
                out[high[ok]] = z[ok]
                high, ah, rate = high[~ok], ah[~ok], rate[~ok]
        return out

    def truncated_normal(self, mu, positive, sel=None) -> np.ndarray:
        """N(mu, 1) truncated to (0, inf) where ``positive`` else to (-inf, 0)."""
        mu = np.asarray(mu, dtype=np.float64)
        positive = np.asarray(positive, dtype=bool)
        a = np.where(positive, -mu, mu)
        x = self.tail_normal(a, sel)
        return np.where(positive, mu + x, mu - x)


def philox_generator(*words: int) -> np.random.Generator:
    """numpy Generator for one-off draws (gamma, precision) keyed like the streams."""
    key = stream_key(*words)
    return np.random.Generator(np.random.Philox(key=key))

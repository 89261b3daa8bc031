"""Shared types, the counter-based RNG, and small numerical primitives.

Every random draw in the package goes through :func:`philox4x32`, a pure
function of ``(seed, stream_id, counter)``.  Walker ensembles carry one
stream per walker, so any partition of the walkers across workers sees
exactly the same numbers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "EbmError",
    "ConfigError",
    "NumericalError",
    "philox4x32",
    "RngStream",
    "StreamBank",
    "WalkerEnsemble",
    "EnergyModel",
    "finite_diff_grad",
    "effective_sample_size",
    "normalized_weights",
    "log_mean_exp",
    "as_points",
    "check_finite",
    "block_slices",
    "map_chunks",
    "aux_stream",
]


class EbmError(Exception):
    """Base class for package errors."""


class ConfigError(EbmError, ValueError):
    """Invalid configuration or argument combination."""


class NumericalError(EbmError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


# ---------------------------------------------------------------------------
# Philox4x32-10 (Salmon et al., SC'11), vectorized over numpy arrays
# ---------------------------------------------------------------------------

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)


def _split64(v):
    v = np.asarray(v, dtype=np.uint64)
    return v & _MASK32, v >> _SHIFT32


def philox4x32(counter, key, rounds=10):
    """Philox4x32 block function.

    ``counter`` is a tuple of four uint32-valued arrays (broadcastable),
    ``key`` a tuple of two.  Returns four uint32 words held in uint64 arrays.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint64) & _MASK32 for k in key)
    for r in range(rounds):
        if r > 0:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def _uniform_pairs(seed, stream_ids, counters):
    """Two doubles in [0, 1) per (stream, counter) element."""
    s_lo, s_hi = _split64(stream_ids)
    n_lo, n_hi = _split64(counters)
    k_lo, k_hi = _split64(np.uint64(seed))
    w0, w1, w2, w3 = philox4x32((n_lo, n_hi, s_lo, s_hi), (k_lo, k_hi))
    a = ((w0 << _SHIFT32) | w1) >> np.uint64(11)
    b = ((w2 << _SHIFT32) | w3) >> np.uint64(11)
    scale = 2.0 ** -53
    return a.astype(np.float64) * scale, b.astype(np.float64) * scale


def _box_muller(u, v):
    r = np.sqrt(-2.0 * np.log1p(-u))  # 1-u lies in (0, 1]
    ang = 2.0 * np.pi * v
    return r * np.cos(ang), r * np.sin(ang)


def _seed64(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must fit in 64 unsigned bits, got {seed}")
    return seed


@dataclass
class RngStream:
    """A single counter-based stream.

    Draws of ``n`` values consume consecutive counters; the stream object
    keeps the next unused counter.
    """

    seed: int
    stream_id: int = 0
    counter: int = 0

    def __post_init__(self):
        self.seed = _seed64(self.seed)

    def _take(self, n_blocks):
        ctr = np.uint64(self.counter) + np.arange(n_blocks, dtype=np.uint64)
        self.counter += n_blocks
        return _uniform_pairs(self.seed, np.uint64(self.stream_id), ctr)

    def uniform(self, size=None):
        shape = () if size is None else (size if isinstance(size, tuple) else (size,))
        n = int(np.prod(shape, dtype=np.int64))
        u, _ = self._take(n)
        return u.reshape(shape) if shape else float(u[0])

    def normal(self, size=None):
        shape = () if size is None else (size if isinstance(size, tuple) else (size,))
        n = int(np.prod(shape, dtype=np.int64))
        u, v = self._take((n + 1) // 2)
        z0, z1 = _box_muller(u, v)
        z = np.empty(2 * len(z0))
        z[0::2] = z0
        z[1::2] = z1
        z = z[:n]
        return z.reshape(shape) if shape else float(z[0])

    def integers(self, high, size):
        """Uniform integers in ``[0, high)``."""
        u = self.uniform(size)
        return np.minimum((u * high).astype(np.int64), high - 1)

    def spawn(self, stream_id):
        return RngStream(self.seed, stream_id, 0)


@dataclass
class StreamBank:
    """``N`` independent streams advanced in lockstep, one row per stream.

    ``counters`` may be a view into a parent bank's array; advancing a
    sub-bank then advances the parent, which is how chunked workers share
    state without copying.
    """

    seed: int
    stream_ids: np.ndarray
    counters: np.ndarray

    @classmethod
    def create(cls, seed, n, offset=0):
        ids = np.arange(offset, offset + n, dtype=np.uint64)
        return cls(_seed64(seed), ids, np.zeros(n, dtype=np.uint64))

    def __len__(self):
        return len(self.stream_ids)

    def __getitem__(self, sl: slice) -> "StreamBank":
        if not isinstance(sl, slice):
            raise TypeError("StreamBank supports slice indexing only")
        return StreamBank(self.seed, self.stream_ids[sl], self.counters[sl])

    def normal(self, d):
        """Array of shape ``(N, d)``; consumes ``ceil(d/2)`` counters per stream."""
        nb = (d + 1) // 2
        ctr = self.counters[:, None] + np.arange(nb, dtype=np.uint64)[None, :]
        u, v = _uniform_pairs(self.seed, self.stream_ids[:, None], ctr)
        self.counters += np.uint64(nb)
        z0, z1 = _box_muller(u, v)
        z = np.empty((len(self), 2 * nb))
        z[:, 0::2] = z0
        z[:, 1::2] = z1
        return z[:, :d]

    def uniform(self):
        """One uniform per stream; consumes one counter."""
        u, _ = _uniform_pairs(self.seed, self.stream_ids, self.counters)
        self.counters += np.uint64(1)
        return u

    def copy(self):
        return StreamBank(self.seed, self.stream_ids.copy(), self.counters.copy())


# ---------------------------------------------------------------------------
# Ensembles and energies
# ---------------------------------------------------------------------------


@dataclass
class WalkerEnsemble:
    """Walker positions ``(N, d)``, log-weights ``(N,)`` and per-walker streams."""

    positions: np.ndarray
    log_weights: np.ndarray
    streams: StreamBank

    @classmethod
    def create(cls, positions, seed, stream_offset=0):
        positions = as_points(positions).copy()
        check_finite(positions, "initial walker positions")
        n = len(positions)
        return cls(positions, np.zeros(n), StreamBank.create(seed, n, stream_offset))

    @property
    def n_walkers(self):
        return self.positions.shape[0]

    @property
    def d(self):
        return self.positions.shape[1]

    def copy(self):
        return WalkerEnsemble(self.positions.copy(), self.log_weights.copy(), self.streams.copy())

    def ess(self):
        return effective_sample_size(self.log_weights)


class EnergyModel:
    """Parametric energy ``U_theta(x)`` acting on batches ``x`` of shape ``(n, d)``.

    Subclasses implement :meth:`energy`, :meth:`grad_x`, :meth:`grad_theta`
    and :meth:`with_theta`.  Models are treated as immutable; trainers build
    a new model for every parameter update.
    """

    family = "abstract"
    d: int
    theta: np.ndarray

    def energy(self, x):
        raise NotImplementedError

    def grad_x(self, x):
        raise NotImplementedError

    def grad_theta(self, x):
        """Per-sample parameter gradients, shape ``(n, p)``."""
        raise NotImplementedError

    def with_theta(self, theta) -> "EnergyModel":
        raise NotImplementedError

    @property
    def n_params(self):
        return len(self.theta)

    def mean_grad_theta(self, x, weights=None):
        """Weighted average of per-sample parameter gradients."""
        g = self.grad_theta(x)
        if weights is None:
            return g.mean(axis=0)
        w = np.asarray(weights, dtype=float)
        return (w[:, None] * g).sum(axis=0) / w.sum()


# ---------------------------------------------------------------------------
# Numerical helpers
# ---------------------------------------------------------------------------


def as_points(x):
    """Coerce to a float array of shape ``(n, d)``; 1-D input is read as ``(n, 1)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if x.ndim == 1:
        return x[:, None]
    if x.ndim != 2:
        raise ValueError(f"expected points of shape (n, d), got {x.shape}")
    return x


def check_finite(arr, what, step=None):
    if not np.all(np.isfinite(arr)):
        where = f" at step {step}" if step is not None else ""
        raise NumericalError(f"non-finite value in {what}{where}")
    return arr


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h=1e-5):
    """Central-difference gradient of a scalar function of a 1-D vector."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float).ravel()
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fp, fm = f(x + e), f(x - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite function value near coordinate {i}")
        g[i] = (fp - fm) / (2 * h)
    return g


def log_mean_exp(a):
    a = np.asarray(a, dtype=float)
    return float(logsumexp(a) - np.log(a.size))


def normalized_weights(log_weights):
    """Self-normalized weights ``exp(a_i) / sum_j exp(a_j)`` computed stably."""
    a = np.asarray(log_weights, dtype=float)
    return np.exp(a - logsumexp(a))


def effective_sample_size(log_weights):
    """``(sum w)^2 / sum w^2`` for ``w = exp(log_weights)``; lies in ``[1, N]``."""
    a = np.asarray(log_weights, dtype=float)
    if a.size == 0:
        raise ValueError("effective_sample_size of an empty weight vector")
    check_finite(a, "log weights")
    w = np.exp(a - a.max())
    return float(w.sum() ** 2 / np.dot(w, w))


BLOCK_SIZE = 4096


def block_slices(n, block=BLOCK_SIZE):
    """Fixed-size contiguous slices covering ``range(n)``."""
    if block < 1:
        raise ValueError("block size must be >= 1")
    return [slice(a, min(a + block, n)) for a in range(0, n, block)] or [slice(0, 0)]


def map_chunks(fn: Callable[[slice], object], n, workers=1, block=BLOCK_SIZE) -> Sequence:
    """Apply ``fn`` to fixed-size walker blocks, optionally on a thread pool.

    The partition depends only on ``n`` and ``block``, never on
    ``workers``, so every block sees the same array shapes (and hence the
    same floating-point results) whatever the thread count.  Results come
    back in block order.
    """
    slices = block_slices(n, block)
    if workers <= 1 or len(slices) == 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, slices))


AUX_STREAM_BASE = 1 << 62


def aux_stream(seed, k=0):
    """Stream reserved for non-walker draws (data sampling, estimators, resampling).

    Walker streams use ids ``0..N-1``; auxiliary ids start at ``2**62`` so the
    two never collide.
    """
    return RngStream(seed, AUX_STREAM_BASE + int(k))

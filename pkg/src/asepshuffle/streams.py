"""Counter-based random streams.

Every random quantity is a pure function of ``(key, a, b, slot)``, so any
process (or any member of a coupled family) can read the same clock rings
in any order.  Continuous-time clocks are realized per edge and per unit
time block: the number of rings of edge ``e`` in ``[b, b+1)`` is Poisson(1)
and the ring times are i.i.d. uniform inside the block.  Restricting the
edge range therefore yields exactly the sub-sequence of events on those
edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0

CONTINUOUS_TAG = 0x434C4F434B  # "CLOCK"
DISCRETE_TAG = 0x53544550  # "STEP"
REPLICA_TAG = 0x5245504C  # "REPL"
SAMPLER_TAG = 0x53414D50  # "SAMP"
_U64 = (1 << 64) - 1


@njit(cache=True)
def mix64(z):
    """splitmix64 finalizer on a uint64."""
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _zigzag(a):
    a = np.int64(a)
    return np.uint64((a << np.int64(1)) ^ (a >> np.int64(63)))


@njit(cache=True)
def cell_hash(key, a, b):
    """Hash of a (signed a, signed b) cell under a stream key."""
    h = mix64(np.uint64(key) ^ _zigzag(a))
    return mix64(h ^ _zigzag(b))


@njit(cache=True)
def slot_uniform(cell, slot):
    """Uniform on [0, 1) for the given slot of a hashed cell."""
    h = mix64(cell ^ (np.uint64(slot) * _GOLDEN))
    return np.float64(h >> np.uint64(11)) * _INV53


def _poisson1_cdf(kmax=30):
    cdf = np.empty(kmax)
    prob = np.exp(-1.0)
    acc = 0.0
    for k in range(kmax):
        acc += prob
        cdf[k] = acc
        prob /= k + 1
    cdf[-1] = 2.0
    return cdf


_POISSON1_CDF = _poisson1_cdf()


@njit(cache=True)
def _poisson1(u):
    # inversion for Poisson(1) against a precomputed cdf table
    k = 0
    while u > _POISSON1_CDF[k]:
        k += 1
    return k


@njit(cache=True)
def _bucket_argsort(x, lo):
    # x values lie in [lo, lo+1); expected O(n) bucket + insertion sort
    n = x.shape[0]
    nb = max(n, 1)
    heads = np.zeros(nb + 1, np.int64)
    bkt = np.empty(n, np.int64)
    for i in range(n):
        j = np.int64((x[i] - lo) * nb)
        if j >= nb:
            j = nb - 1
        elif j < 0:
            j = 0
        bkt[i] = j
        heads[j + 1] += 1
    for j in range(nb):
        heads[j + 1] += heads[j]
    fill = heads[:nb].copy()
    order = np.empty(n, np.int64)
    for i in range(n):
        j = bkt[i]
        order[fill[j]] = i
        fill[j] += 1
    for j in range(nb):
        a = heads[j]
        b = heads[j + 1]
        for i in range(a + 1, b):
            cur = order[i]
            v = x[cur]
            k = i - 1
            while k >= a and x[order[k]] > v:
                order[k + 1] = order[k]
                k -= 1
            order[k + 1] = cur
    return order


@njit(cache=True)
def edge_block_rings(key, edge, block):
    """Number of rings of ``edge`` in the time block ``[block, block+1)``."""
    cell = cell_hash(key, edge, block)
    return _poisson1(slot_uniform(cell, 0))


@njit(cache=True)
def _grow(a, cap):
    out = np.empty(cap, a.dtype)
    out[: a.shape[0]] = a
    return out


@njit(cache=True)
def block_events(key, e_lo, e_hi, block, t_from, t_to):
    """All rings on edges ``e_lo..e_hi`` with time in ``(t_from, t_to]``
    inside one time block, sorted by time.

    Returns ``(times, edges, uniforms)``; the coin is heads iff
    ``uniform < p``.
    """
    n_edges = e_hi - e_lo + 1
    if n_edges <= 0:
        return np.empty(0), np.empty(0, np.int64), np.empty(0)
    cap = 2 * n_edges + 16
    times = np.empty(cap)
    edges = np.empty(cap, np.int64)
    us = np.empty(cap)
    pos = 0
    for j in range(n_edges):
        c = cell_hash(key, e_lo + j, block)
        k = _poisson1(slot_uniform(c, 0))
        if pos + k > cap:
            cap = 2 * cap + k
            times = _grow(times, cap)
            edges = _grow(edges, cap)
            us = _grow(us, cap)
        for r in range(k):
            t = block + slot_uniform(c, 1 + 2 * r)
            if t > t_from and t <= t_to:
                times[pos] = t
                edges[pos] = e_lo + j
                us[pos] = slot_uniform(c, 2 + 2 * r)
                pos += 1
    times = times[:pos]
    edges = edges[:pos]
    us = us[:pos]
    order = _bucket_argsort(times, np.float64(block))
    return times[order], edges[order], us[order]


@njit(cache=True)
def discrete_step(key, step, n_edges):
    """Edge offset (0-based) and coin uniform of a discrete-time step."""
    c = cell_hash(key, step, 0)
    e = np.int64(slot_uniform(c, 0) * n_edges)
    if e >= n_edges:
        e = n_edges - 1
    return e, slot_uniform(c, 1)


def stream_key(seed: int, tag: int) -> np.uint64:
    """Domain-separated stream key for a 64-bit seed."""
    if not 0 <= int(seed) <= _U64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.uint64(mix64(np.uint64(int(seed) ^ tag)))


def derive_seed(master_seed: int, index: int) -> int:
    """Replica seed: counter hash of ``(master_seed, index)``.

    Extending a replica set never changes the seeds of existing replicas.
    """
    key = stream_key(master_seed, REPLICA_TAG)
    return int(cell_hash(key, int(index), 0))


def sampler_rng(seed: int) -> np.random.Generator:
    """numpy Generator for samplers, seeded from a 64-bit seed."""
    return np.random.default_rng(int(stream_key(seed, SAMPLER_TAG)))


@dataclass(frozen=True)
class Event:
    time: float
    edge: int
    u: float
    p: float

    @property
    def heads(self) -> bool:
        return self.u < self.p

    @property
    def coin(self) -> str:
        return "H" if self.heads else "T"


class EventStream:
    """Continuous-time stream of (time, edge, coin) updates.

    The stream is stateless: querying any edge range and time interval, in
    any order, returns the same rings.
    """

    def __init__(self, seed: int, p: float):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {p}")
        self.seed = int(seed)
        self.p = float(p)
        self.key = stream_key(seed, CONTINUOUS_TAG)

    def events(self, e_lo: int, e_hi: int, t_from: float, t_to: float):
        """Yield events on edges ``e_lo..e_hi`` with time in ``(t_from, t_to]``."""
        if t_to <= t_from:
            return
        b = int(np.floor(t_from))
        while b < t_to:
            ts, es, us = block_events(self.key, e_lo, e_hi, b, t_from, t_to)
            for t, e, u in zip(ts, es, us):
                yield Event(float(t), int(e), float(u), self.p)
            b += 1

    def arrays(self, e_lo: int, e_hi: int, t_from: float, t_to: float):
        """Same events as :meth:`events`, as three numpy arrays."""
        parts = []
        b = int(np.floor(t_from))
        while b < t_to:
            parts.append(block_events(self.key, e_lo, e_hi, b, t_from, t_to))
            b += 1
        if not parts:
            return np.empty(0), np.empty(0, np.int64), np.empty(0)
        return tuple(np.concatenate(x) for x in zip(*parts))


class DiscreteStream:
    """Discrete-time stream: step ``n`` picks a uniform edge among ``1..N-1``."""

    def __init__(self, seed: int, p: float, n_edges: int):
        if n_edges < 1:
            raise ValueError("need at least one edge")
        self.seed = int(seed)
        self.p = float(p)
        self.n_edges = int(n_edges)
        self.key = stream_key(seed, DISCRETE_TAG)

    def step(self, n: int) -> Event:
        e, u = discrete_step(self.key, n, self.n_edges)
        return Event(float(n), int(e) + 1, float(u), self.p)

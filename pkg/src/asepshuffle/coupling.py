"""Canonical coupling: shared clocks and coins for whole families of states."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as K
from .configs import (
    FiniteConfig,
    ParameterError,
    StateError,
    ZConfig,
    Permutation,
    canonical_states,
    dominates,
    embed_hat,
    height_projection,
)
from .dynamics import _finite_python, _z_python, run_continuous
from .results import CoalescenceRecord, HittingSample
from .streams import EventStream


@dataclass(frozen=True)
class CoupledFamily:
    """States of one kind driven by one stream; ``clock`` is the current time."""

    members: tuple
    stream: EventStream
    clock: float = 0.0

    def __post_init__(self):
        if not self.members:
            raise ParameterError("empty family")
        kinds = {type(m) for m in self.members}
        if len(kinds) != 1:
            raise ParameterError("family members must share a kind")
        sizes = {getattr(m, "N", None) for m in self.members}
        if len(sizes) != 1:
            raise ParameterError("family members must share N")


def coupled_evolve(family: CoupledFamily, horizon: float) -> CoupledFamily:
    """Advance every member by ``horizon`` with the identical rings."""
    t0 = family.clock
    members = tuple(
        run_continuous(m, horizon, family.stream, t_from=t0) for m in family.members
    )
    return replace(family, members=members, clock=t0 + horizon)


def default_cap(N: int, p: float) -> float:
    """Default censoring horizon 50 N / |2p - 1|."""
    if p == 0.5:
        raise ParameterError("no finite default cap at p = 1/2")
    return 50.0 * N / abs(2 * p - 1)


def sandwich_hitting_time(N: int, k: int, p: float, seed: int, cap: float | None = None) -> HittingSample:
    """H(N,k): first time the chain started at m_{N,k} sits at g_{N,k}."""
    if p <= 0.5:
        raise ParameterError("the sandwich hitting time needs p > 1/2")
    cap = default_cap(N, p) if cap is None else float(cap)
    if cap <= 0:
        raise ParameterError("cap must be positive")
    m = np.array(canonical_states("m_finite", N, k).bits, dtype=np.int8)
    g = np.array(canonical_states("g_finite", N, k).bits, dtype=np.int8)
    stream = EventStream(seed, p)
    t = K.finite_run(m, stream.key, p, 0.0, cap, g, True, 0)
    if t < 0:
        return HittingSample(cap, True, seed, p, N, k, cap)
    return HittingSample(float(t), False, seed, p, N, k, cap)


def card_coalescence_time(N: int, p: float, seed: int, cap: float | None = None) -> CoalescenceRecord:
    """Run all N-1 sandwich pairs of the card chain under one shared stream.

    ``per_k_times[k-1]`` is the time m_{N,k} (the level-k projection of the
    reversed deck) first hits g_{N,k}, and ``coalesce_time`` is their max.
    Every pair has met by then, so it bounds the coalescence of the whole
    deck family from above.  The exact deck coalescence time, when the two
    extreme decks agree at every level, is kept in ``meet_time`` with its
    per-level split in ``per_k_meet``.
    """
    if p == 0.5:
        raise ParameterError("card coalescence needs p != 1/2")
    if N < 2:
        raise ParameterError("need N >= 2")
    cap = default_cap(N, p) if cap is None else float(cap)
    stream = EventStream(seed, p)
    t, t_meet, hit, meet = K.cards_coalescence(N, stream.key, p, cap)
    censored = t < 0
    return CoalescenceRecord(
        seed=int(seed),
        N=N,
        p=p,
        coalesce_time=cap if censored else float(t),
        per_k_times=[float(x) if x >= 0 else None for x in hit],
        censored=bool(censored),
        meet_time=None if t_meet < 0 else float(t_meet),
        per_k_meet=[float(x) if x >= 0 else None for x in meet],
    )


def verify_monotone(kind: str, a, b, horizon: float, seed: int, p: float = 0.75) -> bool:
    """Evolve ``a ⪰ b`` under shared rings and report whether the order
    held after every ring."""
    if not dominates(a, b):
        raise StateError("verify_monotone needs a ⪰ b")
    stream = EventStream(seed, p)
    if kind == "EX_finite":
        x = np.array(a.bits, dtype=np.int8)
        y = np.array(b.bits, dtype=np.int8)
        return bool(K.finite_pair_monotone(x, y, stream.key, p, float(horizon)))
    if kind == "EX_Z":
        return _z_pair_monotone(a, b, stream, horizon)
    raise ParameterError(f"unknown kind {kind!r}")


def _merged(trajs):
    # union of change times across trajectories, each a list of (t, state)
    times = sorted({t for tr in trajs for t, _ in tr})
    idx = [0] * len(trajs)
    cur = [tr[0][1] for tr in trajs]
    for t in times:
        for n, tr in enumerate(trajs):
            while idx[n] + 1 < len(tr) and tr[idx[n] + 1][0] <= t:
                idx[n] += 1
                cur[n] = tr[idx[n]][1]
        yield t, cur


def _z_trajectory(a: ZConfig, stream, horizon):
    traj = [(0.0, a)]
    _z_python(a, stream, 0.0, horizon, lambda t, ev, s: traj.append((t, s)))
    return traj


def _z_pair_monotone(a: ZConfig, b: ZConfig, stream, horizon) -> bool:
    for _, (x, y) in _merged([_z_trajectory(a, stream, horizon), _z_trajectory(b, stream, horizon)]):
        if not dominates(x, y):
            return False
    return True


def verify_hat_domination(N: int, k: int, p: float, horizon: float, seed: int,
                          x: FiniteConfig | None = None) -> bool:
    """Couple EX(N,k,p) from ``x`` (default m_{N,k}) with EX(Z,p) from its
    embedding: the finite edge (j, j+1) uses the ring of site edge
    ``j - k - 1``.  True when the embedding of the finite state dominated
    the infinite state after every ring."""
    if p < 0.5:
        raise ParameterError("the embedding coupling is monotone only for p >= 1/2")
    x = canonical_states("m_finite", N, k) if x is None else x
    stream = EventStream(seed, p)
    ftraj = [(0.0, x)]
    _finite_python(list(x.bits), stream, 0.0, horizon,
                   lambda t, ev, s: ftraj.append((t, s)),
                   lambda arr: FiniteConfig(tuple(arr)), shift=-k - 1)
    ztraj = _z_trajectory(embed_hat(x, k), stream, horizon)
    for _, (xf, z) in _merged([ftraj, ztraj]):
        if not dominates(embed_hat(xf, k), z):
            return False
    return True


def verify_projection_commutation(N: int, p: float, horizon: float, seed: int,
                                  start: Permutation | None = None) -> bool:
    """Run a deck and each of its height projections on one stream and
    check ``h_k(deck) == word_k`` after every ring, for every k."""
    start = canonical_states("reversed_perm", N) if start is None else start
    stream = EventStream(seed, p)
    decks = []
    _finite_python(list(start.entries), stream, 0.0, horizon,
                   lambda t, ev, s: decks.append(s), lambda a: Permutation(tuple(a)), cards=True)
    for k in range(1, N):
        words = []
        _finite_python(list(height_projection(start, k).bits), stream, 0.0, horizon,
                       lambda t, ev, s: words.append(s), lambda a: FiniteConfig(tuple(a)))
        if len(words) != len(decks):
            return False
        if any(height_projection(d, k) != w for d, w in zip(decks, words)):
            return False
    return True

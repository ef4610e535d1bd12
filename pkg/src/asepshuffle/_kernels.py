"""numba kernels for the event-driven simulations.

All kernels read rings from the counter-based clocks in :mod:`streams`;
states are int8 arrays.  Sites are integers, an array index ``j`` stands
for site ``lo + j``, and edge ``i`` joins sites ``i`` and ``i + 1``.
"""

import numpy as np
from numba import njit

from .streams import block_events, cell_hash, discrete_step, slot_uniform

# left-priority of a symbol: 1 before 2 before 0
_PRI = np.array([0, 2, 1], dtype=np.int8)

ZRUN_DONE = 0
ZRUN_HIT = 1
ZRUN_GROW = 2


@njit(cache=True)
def sort_pair(a, b, heads):
    """New values of a differing 0/1/2 pair (heads puts the higher
    priority symbol left)."""
    if _PRI[a] > _PRI[b]:
        hi, lo = a, b
    else:
        hi, lo = b, a
    if heads:
        return hi, lo
    return lo, hi


@njit(cache=True)
def sort_cards(a, b, heads):
    """Heads puts the lower card first."""
    if (a < b) == heads:
        return a, b
    return b, a


@njit(cache=True)
def _ground(i):
    return 1 if i < 0 else 0


# ---------------------------------------------------------------- finite


@njit(cache=True)
def finite_run(bits, key, p, t_from, t_to, target, stop, shift):
    """Run EX(N,k,p) on ``bits`` (positions 1..N at indices 0..N-1).

    Edge j (positions j, j+1) reads the clock of stream edge ``j + shift``.
    With ``stop`` the run ends at the first time ``bits == target``;
    returns that time, or -1.0.
    """
    n = bits.shape[0]
    mism = 0
    for j in range(n):
        if bits[j] != target[j]:
            mism += 1
    if stop and mism == 0:
        return t_from
    b = np.int64(np.floor(t_from))
    while b < t_to:
        ts, es, us = block_events(key, 1 + shift, n - 1 + shift, b, t_from, t_to)
        for r in range(ts.shape[0]):
            j = es[r] - shift - 1
            a0 = bits[j]
            a1 = bits[j + 1]
            if a0 == a1:
                continue
            v0, v1 = sort_pair(a0, a1, us[r] < p)
            if v0 == a0:
                continue
            mism -= (a0 != target[j]) + (a1 != target[j + 1])
            bits[j] = v0
            bits[j + 1] = v1
            mism += (v0 != target[j]) + (v1 != target[j + 1])
            if stop and mism == 0:
                return ts[r]
        b += 1
    return -1.0


@njit(cache=True)
def cards_run(perm, key, p, t_from, t_to):
    """Continuous-time biased shuffle on ``perm`` in place."""
    n = perm.shape[0]
    b = np.int64(np.floor(t_from))
    while b < t_to:
        ts, es, us = block_events(key, 1, n - 1, b, t_from, t_to)
        for r in range(ts.shape[0]):
            j = es[r] - 1
            perm[j], perm[j + 1] = sort_cards(perm[j], perm[j + 1], us[r] < p)
        b += 1


@njit(cache=True)
def discrete_run(state, key, p, step_from, step_to, mode):
    """Discrete-time chain in place.

    mode 0: biased shuffle on cards; 1: Metropolis shuffle on cards
    (theta = (1-p)/p); 2: finite exclusion on 0/1 bits.
    """
    n = state.shape[0]
    theta = (1.0 - p) / p if p > 0 else np.inf
    for s in range(step_from, step_to):
        j, u = discrete_step(key, s, n - 1)
        a = state[j]
        b = state[j + 1]
        if mode == 0:
            state[j], state[j + 1] = sort_cards(a, b, u < p)
        elif mode == 1:
            if a > b or u < theta:
                state[j] = b
                state[j + 1] = a
        elif a != b:
            state[j], state[j + 1] = sort_pair(a, b, u < p)


@njit(cache=True)
def cards_coalescence(n, key, p, cap):
    """Sandwich hitting times and deck coalescence under one shared stream.

    ``h_k`` of the identity deck is g_{N,k} and ``h_k`` of the reversed deck
    is m_{N,k}.  ``hit[k-1]`` is the first time the reversed deck projects
    onto the fixed state g_{N,k}; ``meet[k-1]`` is the first time the two
    moving decks agree at level k.  Returns ``(hit_time, meet_time, hit,
    meet)`` with ``-1`` marking censoring at ``cap``.
    """
    top = np.arange(1, n + 1).astype(np.int64)
    bot = top[::-1].copy()
    # mism[k]: level-k disagreements between the decks; off[k]: between the
    # reversed deck and the identity frozen at time 0
    mism = np.zeros(n + 1, np.int64)
    off = np.zeros(n + 1, np.int64)
    for j in range(n):
        for k in range(min(top[j], bot[j]), max(top[j], bot[j])):
            mism[k] += 1
        for k in range(min(j + 1, bot[j]), max(j + 1, bot[j])):
            off[k] += 1
    meet = np.full(n - 1, -1.0)
    hit = np.full(n - 1, -1.0)
    left_meet = 0
    left_hit = 0
    for k in range(1, n):
        if mism[k] == 0:
            meet[k - 1] = 0.0
        else:
            left_meet += 1
        if off[k] == 0:
            hit[k - 1] = 0.0
        else:
            left_hit += 1
    t_meet = 0.0 if left_meet == 0 else -1.0
    if left_hit == 0:
        return 0.0, 0.0, hit, meet
    b = 0
    while b < cap:
        ts, es, us = block_events(key, 1, n - 1, b, 0.0, cap)
        for r in range(ts.shape[0]):
            j = es[r] - 1
            heads = us[r] < p
            ta, tb = sort_cards(top[j], top[j + 1], heads)
            ba, bb = sort_cards(bot[j], bot[j + 1], heads)
            if ta == top[j] and ba == bot[j]:
                continue
            for q in range(2):
                x = top[j + q]
                y = bot[j + q]
                for k in range(min(x, y), max(x, y)):
                    mism[k] -= 1
                for k in range(min(j + q + 1, y), max(j + q + 1, y)):
                    off[k] -= 1
            top[j] = ta
            top[j + 1] = tb
            bot[j] = ba
            bot[j + 1] = bb
            for q in range(2):
                x = top[j + q]
                y = bot[j + q]
                for k in range(min(x, y), max(x, y)):
                    mism[k] += 1
                for k in range(min(j + q + 1, y), max(j + q + 1, y)):
                    off[k] += 1
            for k in range(1, n):
                if meet[k - 1] < 0 and mism[k] == 0:
                    meet[k - 1] = ts[r]
                    left_meet -= 1
                if hit[k - 1] < 0 and off[k] == 0:
                    hit[k - 1] = ts[r]
                    left_hit -= 1
            if left_meet == 0 and t_meet < 0:
                t_meet = ts[r]
            if left_hit == 0:
                return ts[r], t_meet, hit, meet
        b += 1
    return -1.0, t_meet, hit, meet


# ---------------------------------------------------------------- Z configs


@njit(cache=True)
def zrun(vals, lo, key, p, t_from, t_to, stop):
    """Run EX(Z,p) on a configuration of A stored densely.

    ``vals`` covers sites ``lo..lo+len-1``; all other sites equal G_Z.  Each
    time block only touches edges near the discrepancy hull; if a block
    changes a site at the edge of the processed range it is replayed on a
    wider range, so the result is exact.

    Returns ``(status, time)``: DONE at ``t_to``; HIT with the hitting time
    of G_Z when ``stop``; GROW with the block start when the array must be
    enlarged (state is left at that block start).
    """
    n = vals.shape[0]
    disc = 0
    for j in range(n):
        if vals[j] != _ground(lo + j):
            disc += 1
    if stop and disc == 0:
        return ZRUN_HIT, t_from
    b = np.int64(np.floor(t_from))
    while b < t_to:
        a = 0
        z = -1
        if disc > 0:
            first = -1
            last = -1
            for j in range(n):
                if vals[j] != _ground(lo + j):
                    if first < 0:
                        first = j
                    last = j
            a = lo + first
            z = lo + last
        margin = 2
        while True:
            e_lo = min(a, 0) - margin
            e_hi = max(z, -1) + margin
            if e_lo < lo or e_hi + 1 > lo + n - 1:
                return ZRUN_GROW, max(np.float64(b), t_from)
            saved = vals[e_lo - lo : e_hi + 2 - lo].copy()
            saved_disc = disc
            ts, es, us = block_events(key, e_lo, e_hi, b, t_from, t_to)
            edge_touch = False
            hit = -1.0
            for r in range(ts.shape[0]):
                i = es[r]
                j = i - lo
                a0 = vals[j]
                a1 = vals[j + 1]
                if a0 == a1:
                    continue
                v0, v1 = sort_pair(a0, a1, us[r] < p)
                if v0 == a0:
                    continue
                g0 = _ground(i)
                g1 = _ground(i + 1)
                disc -= (a0 != g0) + (a1 != g1)
                vals[j] = v0
                vals[j + 1] = v1
                disc += (v0 != g0) + (v1 != g1)
                if i == e_lo or i == e_hi:
                    edge_touch = True
                    break
                if stop and disc == 0:
                    hit = ts[r]
                    break
            if edge_touch:
                vals[e_lo - lo : e_hi + 2 - lo] = saved
                disc = saved_disc
                margin *= 2
                continue
            if hit >= 0:
                return ZRUN_HIT, hit
            break
        b += 1
    return ZRUN_DONE, t_to


# ---------------------------------------------------------------- windows


@njit(cache=True)
def _leftmost(vals, v):
    for j in range(vals.shape[0]):
        if vals[j] == v:
            return j
    return -1


@njit(cache=True)
def _rightmost(vals, v):
    for j in range(vals.shape[0] - 1, -1, -1):
        if vals[j] == v:
            return j
    return -1


@njit(cache=True)
def window_run(vals, lo, key, p, t_from, t_to, tag, env):
    """Run EX_2(Z,p) on a window in place, tracking a tagged particle.

    The tagged particle follows its particle through swaps with empty
    sites and keeps its site in 1-2 swaps (it tags a particle rank).
    Rings of the two edges leaving the window grow the contaminated
    regions ``(-inf, c_lo]`` and ``[c_hi, inf)``: sites whose values may
    differ from the infinite-volume process.

    ``env`` (int64[8]) is updated in place:
    ``[c_lo, c_hi, tag_min, tag_max, r1_min, r1_max, L_min, L_max]`` where
    r1 is the rightmost 1 and L the leftmost 0 (-1 sentinel index when
    absent).  Returns the final tagged site (or ``lo - 1`` when none).
    """
    n = vals.shape[0]
    hi = lo + n - 1
    c_lo = env[0]
    c_hi = env[1]
    r1 = _rightmost(vals, 1)
    L = _leftmost(vals, 0)
    tj = tag - lo
    b = np.int64(np.floor(t_from))
    while b < t_to:
        ts, es, us = block_events(key, lo - 1, hi, b, t_from, t_to)
        for r in range(ts.shape[0]):
            i = es[r]
            if i == c_lo:
                c_lo = i + 1
            if i + 1 == c_hi:
                c_hi = i
            if i < lo or i >= hi:
                continue
            j = i - lo
            a0 = vals[j]
            a1 = vals[j + 1]
            if a0 == a1:
                continue
            v0, v1 = sort_pair(a0, a1, us[r] < p)
            if v0 == a0:
                continue
            vals[j] = v0
            vals[j + 1] = v1
            if tj == j or tj == j + 1:
                if a0 == 0 or a1 == 0:
                    tj = 2 * j + 1 - tj
                    if tj + lo < env[2]:
                        env[2] = tj + lo
                    if tj + lo > env[3]:
                        env[3] = tj + lo
            if r1 == j or r1 == j + 1:
                if vals[r1] != 1:
                    r1 = 2 * j + 1 - r1
                    if r1 + lo < env[4]:
                        env[4] = r1 + lo
                    if r1 + lo > env[5]:
                        env[5] = r1 + lo
            if L == j or L == j + 1:
                if vals[L] != 0:
                    L = 2 * j + 1 - L
                    if L + lo < env[6]:
                        env[6] = L + lo
                    if L + lo > env[7]:
                        env[7] = L + lo
        b += 1
    env[0] = c_lo
    env[1] = c_hi
    return tj + lo


@njit(cache=True)
def sigma_run(vals, lo, key, p, t1, t2, tag, env):
    """Run the sigma process over ``(0, t2]`` tracking the proof events.

    Monitors on ``(t1, t2)``, continuously at event resolution:
    A1 (leftmost hole of the 2->1 projection stays > 2N is decided by the
    caller from the returned minimum), A2 via the maximum particle index
    of the rightmost first-class particle, A3 (zero-erased view equals
    G_Z at some time).  Also returns the hitting time of G_Z by the 2->0
    projection and the leftmost hole at ``t1``.

    Returns ``(hit_time, L_at_t1, L_min_on, rank_max_on, a3)``.
    ``env`` as in :func:`window_run` (tag, r1, L envelopes over all time).
    """
    n = vals.shape[0]
    hi = lo + n - 1
    c_lo = env[0]
    c_hi = env[1]
    r1 = _rightmost(vals, 1)
    L = _leftmost(vals, 0)
    tj = tag - lo
    # rank of r1 relative to the tag
    rank = 0
    if r1 >= tj:
        for j in range(tj + 1, r1 + 1):
            if vals[j] > 0:
                rank += 1
    else:
        for j in range(r1, tj):
            if vals[j] > 0:
                rank -= 1
    # A3 defect count: 2s at or left of the tag, 1s right of it.  The tag
    # starts on the rightmost 1 and the particle word conserves that
    # offset, so its ground state has the tag as the last 1.
    bad = 0
    for j in range(n):
        if j <= tj and vals[j] == 2:
            bad += 1
        elif j > tj and vals[j] == 1:
            bad += 1
    # G_Z discrepancies of the 2->0 projection
    disc = 0
    for j in range(n):
        v = 1 if vals[j] == 1 else 0
        if v != _ground(lo + j):
            disc += 1
    hit = -1.0
    if disc == 0:
        hit = 0.0
    L_t1 = -1
    in_window = False
    L_min = np.int64(1) << 60
    rank_max = -(np.int64(1) << 60)
    a3 = False
    b = 0
    while b < t2:
        ts, es, us = block_events(key, lo - 1, hi, b, 0.0, t2)
        for r in range(ts.shape[0]):
            t = ts[r]
            if not in_window and t > t1:
                in_window = True
                L_t1 = L + lo
                L_min = L + lo
                rank_max = rank
                if bad == 0:
                    a3 = True
            i = es[r]
            if i == c_lo:
                c_lo = i + 1
            if i + 1 == c_hi:
                c_hi = i
            if i < lo or i >= hi:
                continue
            j = i - lo
            a0 = vals[j]
            a1 = vals[j + 1]
            if a0 == a1:
                continue
            v0, v1 = sort_pair(a0, a1, us[r] < p)
            if v0 == a0:
                continue
            zero_swap = a0 == 0 or a1 == 0
            if not zero_swap:
                for q in range(2):
                    jj = j + q
                    if jj <= tj:
                        bad -= vals[jj] == 2
                    else:
                        bad -= vals[jj] == 1
            g0 = _ground(i)
            g1 = _ground(i + 1)
            disc -= ((a0 == 1) != g0) + ((a1 == 1) != g1)
            disc += ((v0 == 1) != g0) + ((v1 == 1) != g1)
            vals[j] = v0
            vals[j + 1] = v1
            if not zero_swap:
                for q in range(2):
                    jj = j + q
                    if jj <= tj:
                        bad += vals[jj] == 2
                    else:
                        bad += vals[jj] == 1
            if tj == j or tj == j + 1:
                if zero_swap:
                    tj = 2 * j + 1 - tj
                    if tj + lo < env[2]:
                        env[2] = tj + lo
                    if tj + lo > env[3]:
                        env[3] = tj + lo
            if r1 == j or r1 == j + 1:
                if vals[r1] != 1:
                    new = 2 * j + 1 - r1
                    if not zero_swap:
                        rank += new - r1
                    r1 = new
                    if r1 + lo < env[4]:
                        env[4] = r1 + lo
                    if r1 + lo > env[5]:
                        env[5] = r1 + lo
            if L == j or L == j + 1:
                if vals[L] != 0:
                    L = 2 * j + 1 - L
                    if L + lo < env[6]:
                        env[6] = L + lo
                    if L + lo > env[7]:
                        env[7] = L + lo
            if hit < 0 and disc == 0:
                hit = t
            if in_window:
                if L + lo < L_min:
                    L_min = L + lo
                if rank > rank_max:
                    rank_max = rank
                if bad == 0:
                    a3 = True
        b += 1
    if not in_window:
        L_t1 = L + lo
        L_min = L + lo
        rank_max = rank
        a3 = bad == 0
    env[0] = c_lo
    env[1] = c_hi
    return hit, L_t1, L_min, rank_max, a3


@njit(cache=True)
def iid_bits(key, lo, hi):
    """Fair coins Y_i for sites lo..hi from the counter-based hash."""
    out = np.empty(hi - lo + 1, np.int8)
    for i in range(lo, hi + 1):
        out[i - lo] = 1 if slot_uniform(cell_hash(key, i, 0), 0) < 0.5 else 0
    return out


@njit(cache=True)
def finite_pair_monotone(x, y, key, p, t_to):
    """Evolve two words under shared rings; False as soon as some prefix
    of ``x`` holds fewer ones than the same prefix of ``y``."""
    n = x.shape[0]
    sx = np.cumsum(x)
    sy = np.cumsum(y)
    for j in range(n):
        if sx[j] < sy[j]:
            return False
    b = 0
    while b < t_to:
        ts, es, us = block_events(key, 1, n - 1, b, 0.0, t_to)
        for r in range(ts.shape[0]):
            j = es[r] - 1
            heads = us[r] < p
            if x[j] != x[j + 1]:
                x[j], x[j + 1] = sort_pair(x[j], x[j + 1], heads)
                sx[j] = sx[j + 1] - x[j + 1]
            if y[j] != y[j + 1]:
                y[j], y[j + 1] = sort_pair(y[j], y[j + 1], heads)
                sy[j] = sy[j + 1] - y[j + 1]
            if sx[j] < sy[j]:
                return False
        b += 1
    return True

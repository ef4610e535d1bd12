"""Update rules and time evolution for the shuffles and exclusion processes.

Edges are addressed by their left position: for decks and finite words
edge ``i`` (1-based) is the pair of positions ``(i, i+1)``; for
configurations on the integers edge ``i`` is the pair of sites
``(i, i+1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from . import _kernels as K
from .configs import (
    FiniteConfig,
    ParameterError,
    Permutation,
    SecondClassConfig,
    StateError,
    ZConfig,
    ground_value,
)
from .streams import DiscreteStream, Event, EventStream

State = Union[Permutation, FiniteConfig, ZConfig, SecondClassConfig]
Hook = Callable[[float, Event, object], None]

PROCESS_TAGS = ("CA_discrete", "CA_continuous", "Metropolis", "EX_finite", "EX_Z", "EX2_Z")


@dataclass(frozen=True)
class ProcessKind:
    tag: str
    p: float
    N: Optional[int] = None
    k: Optional[int] = None

    def __post_init__(self):
        if self.tag not in PROCESS_TAGS:
            raise ParameterError(f"unknown process {self.tag!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ParameterError(f"p must lie in [0, 1], got {self.p}")
        if self.tag == "Metropolis" and self.p < 0.5:
            raise ParameterError("the Metropolis shuffle needs p >= 1/2")
        if self.tag == "EX_finite" and (self.N is None or self.k is None or not 1 <= self.k < self.N):
            raise ParameterError("EX_finite needs 1 <= k < N")

    @property
    def q(self) -> float:
        return 1.0 - self.p

    @property
    def theta(self) -> float:
        return self.q / self.p


def _heads(coin) -> bool:
    if isinstance(coin, str):
        if coin not in ("H", "T"):
            raise ValueError(f"coin must be 'H' or 'T', got {coin!r}")
        return coin == "H"
    return bool(coin)


def _sorted_pair(a: int, b: int, heads: bool) -> tuple[int, int]:
    if a == b:
        return a, b
    return tuple(int(v) for v in K.sort_pair(np.int8(a), np.int8(b), heads))


def apply_sort_event(state: State, edge: int, coin) -> State:
    """One ring with a coin: H sorts (cards ascending, particles left, 1
    before 2 before 0), T does the opposite."""
    heads = _heads(coin)
    if isinstance(state, Permutation):
        if not 1 <= edge < state.N:
            raise StateError(f"edge {edge} outside 1..{state.N - 1}")
        e = list(state.entries)
        a, b = e[edge - 1], e[edge]
        lo, hi = min(a, b), max(a, b)
        e[edge - 1], e[edge] = (lo, hi) if heads else (hi, lo)
        return Permutation(tuple(e))
    if isinstance(state, FiniteConfig):
        if not 1 <= edge < state.N:
            raise StateError(f"edge {edge} outside 1..{state.N - 1}")
        bits = list(state.bits)
        bits[edge - 1], bits[edge] = _sorted_pair(bits[edge - 1], bits[edge], heads)
        return FiniteConfig(tuple(bits))
    if isinstance(state, ZConfig):
        a, b = state[edge], state[edge + 1]
        if a == b:
            return state
        return ZConfig(tuple(set(state.discrepancies) ^ {edge, edge + 1}))
    if isinstance(state, SecondClassConfig):
        if not state.lo <= edge < state.hi:
            raise StateError(f"edge {edge} outside window [{state.lo}, {state.hi})")
        out = state.copy()
        j = edge - state.lo
        a, b = int(out.values[j]), int(out.values[j + 1])
        v = _sorted_pair(a, b, heads)
        out.values[j], out.values[j + 1] = v
        if out.tagged in (edge, edge + 1) and (a == 0 or b == 0) and v != (a, b):
            out.tagged = 2 * edge + 1 - out.tagged
        return out
    raise TypeError(f"unsupported state {type(state).__name__}")


def apply_metropolis_step(pi: Permutation, edge: int, u: float, p: float) -> Permutation:
    """Metropolis shuffle move: a decreasing pair is always swapped, an
    increasing one iff ``u < theta``."""
    if p < 0.5:
        raise ParameterError("the Metropolis shuffle needs p >= 1/2")
    theta = (1.0 - p) / p
    e = list(pi.entries)
    a, b = e[edge - 1], e[edge]
    if a > b or u < theta:
        e[edge - 1], e[edge] = b, a
    return Permutation(tuple(e))


def active_edges(state: State) -> set[int]:
    """Edges whose two sites differ; rings elsewhere never change the state."""
    if isinstance(state, Permutation):
        return set(range(1, state.N))
    if isinstance(state, FiniteConfig):
        return {i for i in range(1, state.N) if state.bits[i - 1] != state.bits[i]}
    if isinstance(state, ZConfig):
        if state.is_ground:
            return {-1}
        lo, hi = state.hull()
        lo, hi = min(lo, 0) - 1, max(hi, -1) + 1
        return {i for i in range(lo, hi) if state[i] != state[i + 1]}
    if isinstance(state, SecondClassConfig):
        v = state.values
        return {state.lo + j for j in np.nonzero(v[:-1] != v[1:])[0]}
    raise TypeError(f"unsupported state {type(state).__name__}")


# ---------------------------------------------------------------- discrete


def run_discrete(state, steps: int, stream: DiscreteStream, metropolis: bool = False, start: int = 0):
    """Apply steps ``start .. start+steps-1`` of a discrete stream."""
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if isinstance(state, Permutation):
        if stream.n_edges != state.N - 1:
            raise ParameterError("stream edge count does not match the deck")
        arr = np.array(state.entries, dtype=np.int64)
        K.discrete_run(arr, stream.key, stream.p, start, start + steps, 1 if metropolis else 0)
        return Permutation(tuple(arr))
    if isinstance(state, FiniteConfig):
        if metropolis:
            raise ParameterError("Metropolis moves are defined on decks only")
        if stream.n_edges != state.N - 1:
            raise ParameterError("stream edge count does not match the word")
        arr = np.array(state.bits, dtype=np.int8)
        K.discrete_run(arr, stream.key, stream.p, start, start + steps, 2)
        return FiniteConfig(tuple(arr))
    raise TypeError(f"unsupported state {type(state).__name__}")


# ---------------------------------------------------------------- continuous


@dataclass
class ZRunResult:
    state: ZConfig
    time: float
    hit: bool


def _z_dense(a: ZConfig, pad: int) -> tuple[np.ndarray, int]:
    if a.is_ground:
        lo, hi = -1, 0
    else:
        lo, hi = a.hull()
        lo, hi = min(lo, -1), max(hi, 0)
    lo, hi = lo - pad, hi + pad
    return a.to_dense(lo, hi), lo


def run_z(a: ZConfig, stream: EventStream, t_from: float, t_to: float, stop_at_ground: bool = False) -> ZRunResult:
    """EX(Z,p) from ``a`` over ``(t_from, t_to]``; with ``stop_at_ground``
    the run ends when G_Z is first reached."""
    vals, lo = _z_dense(a, 32)
    t = float(t_from)
    while True:
        status, t_ret = K.zrun(vals, lo, stream.key, stream.p, t, float(t_to), stop_at_ground)
        if status != K.ZRUN_GROW:
            break
        pad = len(vals)
        vals = np.concatenate([np.ones(pad, np.int8), vals, np.zeros(pad, np.int8)])
        lo -= pad
        t = float(t_ret)
    out = ZConfig.from_dense(vals, lo)
    if status == K.ZRUN_HIT:
        return ZRunResult(out, float(t_ret), True)
    return ZRunResult(out, float(t_to), False)


def _z_python(a: ZConfig, stream: EventStream, t_from: float, t_to: float, hook: Hook | None,
              stop_at_ground: bool = False) -> ZRunResult:
    # reference path: same block/replay logic as the kernel, one event at a time
    disc = set(a.discrepancies)
    b = int(np.floor(t_from))
    while b < t_to:
        lo = min(min(disc, default=0), 0)
        hi = max(max(disc, default=-1), -1)
        margin = 2
        while True:
            e_lo, e_hi = lo - margin, hi + margin
            trial = set(disc)
            applied = []
            touched = False
            hit = None
            for ev in stream.events(e_lo, e_hi, max(t_from, b), min(t_to, b + 1)):
                i = ev.edge
                x = ground_value(i) ^ (i in trial)
                y = ground_value(i + 1) ^ ((i + 1) in trial)
                if x == y or (x == 1) == ev.heads:
                    continue
                trial ^= {i, i + 1}
                if i in (e_lo, e_hi):
                    touched = True
                    break
                applied.append((ev, frozenset(trial)))
                if stop_at_ground and not trial:
                    hit = ev.time
                    break
            if touched:
                margin *= 2
                continue
            break
        for ev, snap in applied:
            if hook is not None:
                hook(ev.time, ev, ZConfig(tuple(snap)))
        disc = trial
        if hit is not None:
            return ZRunResult(ZConfig(tuple(disc)), hit, True)
        b += 1
    return ZRunResult(ZConfig(tuple(disc)), float(t_to), False)


def _finite_python(arr, stream, t_from, t_to, hook, make, shift=0, cards=False):
    n = len(arr)
    for ev in stream.events(1 + shift, n - 1 + shift, t_from, t_to):
        j = ev.edge - shift - 1
        a, b = arr[j], arr[j + 1]
        if cards:
            lo, hi = min(a, b), max(a, b)
            arr[j], arr[j + 1] = (lo, hi) if ev.heads else (hi, lo)
        elif a != b:
            arr[j], arr[j + 1] = _sorted_pair(a, b, ev.heads)
        if hook is not None:
            hook(ev.time, ev, make(arr))
    return make(arr)


def new_env(delta: SecondClassConfig, tag: int | None) -> np.ndarray:
    """Initial monitor vector for :func:`_kernels.window_run`."""
    vals = delta.values
    ones = np.nonzero(vals == 1)[0]
    zeros = np.nonzero(vals == 0)[0]
    r1 = delta.lo + int(ones[-1]) if len(ones) else delta.lo - 1
    L = delta.lo + int(zeros[0]) if len(zeros) else delta.hi + 1
    t = tag if tag is not None else delta.lo - 1
    return np.array([delta.lo - 1, delta.hi + 1, t, t, r1, r1, L, L], dtype=np.int64)


def env_valid(env: np.ndarray, track=("tag", "r1", "L")) -> bool:
    """True when no tracked quantity ever met a contaminated site."""
    lo_env = []
    hi_env = []
    idx = {"tag": 2, "r1": 4, "L": 6}
    for name in track:
        lo_env.append(env[idx[name]])
        hi_env.append(env[idx[name] + 1])
    return bool(env[0] < min(lo_env) - 1 and env[1] > max(hi_env) + 1)


def run_window(delta: SecondClassConfig, stream: EventStream, t_from: float, t_to: float,
               env: np.ndarray | None = None) -> SecondClassConfig:
    """EX_2(Z,p) on a window.  The returned config's ``meta['env']`` holds
    the contamination fronts and the envelopes of the tag, the rightmost 1
    and the leftmost 0."""
    out = delta.copy()
    if env is None:
        env = new_env(delta, delta.tagged)
    tag = delta.tagged if delta.tagged is not None else delta.lo - 1
    new_tag = K.window_run(out.values, out.lo, stream.key, stream.p, float(t_from), float(t_to), tag, env)
    out.tagged = int(new_tag) if delta.tagged is not None else None
    out.meta["env"] = env
    return out


def _window_python(delta, stream, t_from, t_to, hook):
    out = delta.copy()
    for ev in stream.events(delta.lo, delta.hi - 1, t_from, t_to):
        out = apply_sort_event(out, ev.edge, ev.heads)
        hook(ev.time, ev, out)
    return out


def run_continuous(state: State, horizon: float, stream: EventStream, hook: Hook | None = None,
                   t_from: float = 0.0):
    """Apply every ring with time in ``(t_from, t_from + horizon]``.

    ``hook(time, event, state)`` is called after each ring that was applied
    (for 0/1 configurations on the integers: each ring that changed the
    state), in time order.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    t_to = t_from + horizon
    if isinstance(state, Permutation):
        if hook is not None:
            return _finite_python(list(state.entries), stream, t_from, t_to, hook,
                                  lambda a: Permutation(tuple(a)), cards=True)
        arr = np.array(state.entries, dtype=np.int64)
        K.cards_run(arr, stream.key, stream.p, float(t_from), float(t_to))
        return Permutation(tuple(arr))
    if isinstance(state, FiniteConfig):
        if hook is not None:
            return _finite_python(list(state.bits), stream, t_from, t_to, hook,
                                  lambda a: FiniteConfig(tuple(a)))
        arr = np.array(state.bits, dtype=np.int8)
        K.finite_run(arr, stream.key, stream.p, float(t_from), float(t_to), arr.copy(), False, 0)
        return FiniteConfig(tuple(arr))
    if isinstance(state, ZConfig):
        if hook is not None:
            return _z_python(state, stream, t_from, t_to, hook).state
        return run_z(state, stream, t_from, t_to).state
    if isinstance(state, SecondClassConfig):
        if hook is not None:
            return _window_python(state, stream, t_from, t_to, hook)
        return run_window(state, stream, t_from, t_to)
    raise TypeError(f"unsupported state {type(state).__name__}")


def run_thinned(state: Union[FiniteConfig, ZConfig, Permutation], horizon: float, p: float,
                rng: np.random.Generator):
    """Gillespie simulation over active edges only.

    Total rate is the number of active edges; a uniform active edge then
    gets a coin.  Equal in law to the per-edge clocks, not pathwise.
    """
    t = 0.0
    while True:
        act = sorted(active_edges(state))
        if not act:
            return state
        t += rng.exponential(1.0 / len(act))
        if t > horizon:
            return state
        e = act[rng.integers(len(act))]
        state = apply_sort_event(state, e, rng.random() < p)


def trajectory_records(state: State, horizon: float, stream: EventStream) -> list[str]:
    """Line records ``t,edge,coin,state`` of a run."""
    rows = []

    def hook(t, ev, s):
        rows.append(f"{t:.12g},{ev.edge},{ev.coin},{s}")

    run_continuous(state, horizon, stream, hook=hook)
    return rows

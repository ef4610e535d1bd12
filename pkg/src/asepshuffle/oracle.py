"""Exact small-instance computations: generators, stationary laws, TV
mixing curves, spectral gaps and expected hitting times."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from itertools import combinations, permutations
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy import stats
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import bicgstab, spsolve
from scipy.spatial.distance import pdist

from .configs import FiniteConfig, ParameterError, Permutation, StateError, ZConfig

MAX_CARDS = 7
MAX_EXCLUSION = 1_000_000
MAX_Z_STATES = 1_000_000
MAX_DENSE_TV = 5040
MAX_EIG = 10_000
UNIF_TOL = 1e-9
BOUNDARY_TOL = 1e-9

KINDS = ("cards", "cards_discrete", "metropolis", "exclusion", "exclusion_discrete", "z_hitting")


@dataclass
class StateSpace:
    kind: str
    states: list
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {s: i for i, s in enumerate(self.states)}

    @property
    def size(self) -> int:
        return len(self.states)


@dataclass
class GeneratorMatrix:
    """Rate matrix ``Q`` (continuous) or stochastic matrix ``P``
    (``discrete=True``), sparse CSR.

    For truncated Z problems ``escape`` holds, per state, the total rate of
    the transitions that leave the truncation.
    """

    matrix: sp.csr_matrix
    discrete: bool
    params: dict
    escape: np.ndarray | None = None

    def __post_init__(self):
        m = self.matrix
        rows = np.asarray(m.sum(axis=1)).ravel()
        off = m - sp.diags(m.diagonal())
        if off.nnz and off.data.min() < 0:
            raise StateError("negative off-diagonal entry")
        if self.discrete:
            if np.abs(rows - 1.0).max() > 1e-12 or (m.nnz and m.data.min() < 0):
                raise StateError("P rows must be nonnegative and sum to one")
        elif np.abs(rows).max() > 1e-12 * max(1.0, abs(m.diagonal()).max()):
            raise StateError("Q rows must sum to zero")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def to_coo_text(self) -> str:
        c = self.matrix.tocoo()
        buf = io.StringIO()
        for r, k, v in zip(c.row, c.col, c.data):
            buf.write(f"{r} {k} {v!r}\n")
        return buf.getvalue()


def _assemble(n, rows, cols, rates, discrete):
    rows = np.asarray(rows, np.int64)
    cols = np.asarray(cols, np.int64)
    rates = np.asarray(rates, float)
    keep = (rows != cols) & (rates > 0)
    off = sp.csr_matrix((rates[keep], (rows[keep], cols[keep])), shape=(n, n))
    out = np.asarray(off.sum(axis=1)).ravel()
    diag = 1.0 - out if discrete else -out
    return (off + sp.diags(diag)).tocsr()


def _check_p(p):
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"p must lie in [0, 1], got {p}")


def _cards(N, p, mode):
    if not 1 <= N <= MAX_CARDS:
        raise ParameterError(f"card chains are enumerated for N <= {MAX_CARDS}")
    states = list(permutations(range(1, N + 1)))
    space = StateSpace(mode, states)
    rows, cols, rates = [], [], []
    n_e = max(N - 1, 1)
    theta = (1 - p) / p if mode == "metropolis" else None
    for i, s in enumerate(states):
        for j in range(N - 1):
            t = list(s)
            t[j], t[j + 1] = t[j + 1], t[j]
            k = space.index[tuple(t)]
            ascending = s[j] < s[j + 1]
            if mode == "metropolis":
                r = theta if ascending else 1.0
            else:
                # heads sorts ascending, tails descending
                r = (1 - p) if ascending else p
            if mode != "cards":
                r /= n_e
            rows.append(i)
            cols.append(k)
            rates.append(r)
    return space, _assemble(len(states), rows, cols, rates, mode != "cards")


def _exclusion(N, k, p, discrete):
    if not 1 <= k < N:
        raise ParameterError(f"need 1 <= k < N, got N={N}, k={k}")
    if math.comb(N, k) > MAX_EXCLUSION:
        raise ParameterError(f"C({N},{k}) exceeds {MAX_EXCLUSION} states")
    # bit j of a mask is position j+1
    masks = np.array(sorted(sum(1 << j for j in c) for c in combinations(range(N), k)), dtype=np.int64)
    n = len(masks)
    rows, cols, rates = [], [], []
    ids = np.arange(n)
    for j in range(N - 1):
        a = (masks >> j) & 1
        b = (masks >> (j + 1)) & 1
        diff = a != b
        swapped = masks ^ ((1 << j) | (1 << (j + 1)))
        tgt = np.searchsorted(masks, swapped)
        # (0,1) -> (1,0) at rate p, (1,0) -> (0,1) at rate 1-p
        r = np.where(b == 1, p, 1 - p)
        if discrete:
            r = r / (N - 1)
        rows.append(ids[diff])
        cols.append(tgt[diff])
        rates.append(r[diff])
    states = [FiniteConfig(tuple(int((m >> j) & 1) for j in range(N))) for m in masks]
    space = StateSpace("exclusion_discrete" if discrete else "exclusion", states)
    Q = _assemble(n, np.concatenate(rows), np.concatenate(cols), np.concatenate(rates), discrete)
    return space, Q


def _z_moves(d: frozenset, p: float):
    """Moves of the configuration with discrepancy set ``d``.

    Swapping a differing pair at sites (i, i+1) flips both values, so the
    discrepancy set changes by the symmetric difference with {i, i+1};
    a heads move (rate p) lowers the energy by one, a tails move raises it.
    Yields ``(new_set, rate, energy_change)``.
    """
    if d:
        lo, hi = min(min(d), -1) - 1, max(max(d), 0) + 1
    else:
        lo, hi = -1, 0
    prev = None
    for i in range(lo, hi + 1):
        v = (1 if i < 0 else 0) ^ (i in d)
        if prev is not None and prev != v:
            new = d.symmetric_difference((i - 1, i))
            if prev == 0:
                yield new, p, -1
            else:
                yield new, 1.0 - p, 1
        prev = v


def _z_hitting(start: ZConfig, p: float, max_energy: int):
    """States of A with energy at most ``max_energy`` reachable from
    ``start``; moves above that level are booked as escape rates."""
    e0 = start.energy()
    if e0 > max_energy:
        raise ParameterError("start lies above the energy cut")
    d0 = frozenset(start.discrepancies)
    keys = [d0]
    energy = [e0]
    index = {d0: 0}
    rows, cols, rates = [], [], []
    escape = [0.0]
    q = 0
    while q < len(keys):
        for new, r, de in _z_moves(keys[q], p):
            if r == 0:
                continue
            if energy[q] + de > max_energy:
                escape[q] += r
                continue
            k = index.get(new)
            if k is None:
                k = len(keys)
                if k >= MAX_Z_STATES:
                    raise ParameterError("truncated state space too large")
                keys.append(new)
                energy.append(energy[q] + de)
                index[new] = k
                escape.append(0.0)
            rows.append(q)
            cols.append(k)
            rates.append(r)
        q += 1
    states = [ZConfig(tuple(k)) for k in keys]
    space = StateSpace("z_hitting", states)
    Q = _assemble(len(states), rows, cols, rates, False)
    return space, Q, np.array(escape)


def build_generator(kind: str, **params) -> tuple[StateSpace, GeneratorMatrix]:
    """Enumerate a chain.

    ``cards``/``cards_discrete``/``metropolis``: ``N, p``.
    ``exclusion``/``exclusion_discrete``: ``N, k, p``.
    ``z_hitting``: ``start`` (ZConfig), ``p``, ``max_energy``; the state
    space is the reachable part of A below the energy cut.
    """
    p = float(params["p"])
    _check_p(p)
    if kind in ("cards", "cards_discrete", "metropolis"):
        if kind == "metropolis" and p < 0.5:
            raise ParameterError("the Metropolis shuffle needs p >= 1/2")
        space, M = _cards(int(params["N"]), p, kind)
        return space, GeneratorMatrix(M, kind != "cards", dict(params, kind=kind))
    if kind in ("exclusion", "exclusion_discrete"):
        space, M = _exclusion(int(params["N"]), int(params["k"]), p, kind == "exclusion_discrete")
        return space, GeneratorMatrix(M, kind == "exclusion_discrete", dict(params, kind=kind))
    if kind == "z_hitting":
        space, Q, esc = _z_hitting(params["start"], p, int(params["max_energy"]))
        return space, GeneratorMatrix(Q, False, dict(params, kind=kind), escape=esc)
    raise ParameterError(f"unknown chain kind {kind!r}")


def stationary_distribution(gen: GeneratorMatrix, space: StateSpace | None = None) -> np.ndarray:
    """Solve the balance equations; card chains are also checked against
    the weights theta^inversions."""
    M = gen.matrix
    n = gen.size
    ncomp, _ = connected_components(M, directed=True, connection="strong")
    if ncomp != 1:
        raise StateError(f"chain is not irreducible ({ncomp} classes)")
    A = (M - sp.eye(n)).T.tolil() if gen.discrete else M.T.tolil()
    A[n - 1, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = spsolve(A.tocsc(), rhs) if n > 1 else np.ones(1)
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()
    res = pi @ M - (pi if gen.discrete else 0.0)
    if np.abs(res).max() > 1e-10:
        raise StateError(f"balance residual {np.abs(res).max():.3g}")
    if space is not None and space.kind in ("cards", "cards_discrete", "metropolis"):
        w = card_weights(space, gen.params["p"])
        if np.abs(w - pi).max() > 1e-8:
            raise StateError("stationary law differs from theta^inversions weights")
    return pi


def card_weights(space: StateSpace, p: float) -> np.ndarray:
    """``theta^inv(sigma)`` normalized, ``theta = (1-p)/p``."""
    theta = (1 - p) / p
    inv = np.array([Permutation(s).inversions() for s in space.states])
    w = theta ** inv
    return w / w.sum()


def _unif_rate(gen: GeneratorMatrix) -> float:
    return max(float(-gen.matrix.diagonal().min()), 1e-300)


def _poisson_cut(lam: float, tol: float) -> int:
    return int(stats.poisson.isf(tol, lam)) + 1 if lam > 0 else 0


def transition_matrix(gen: GeneratorMatrix, t: float, tol: float = UNIF_TOL) -> tuple[np.ndarray, float]:
    """Dense ``exp(tQ)`` (or ``P^t`` for discrete chains) and the
    truncation error bound."""
    n = gen.size
    if n > MAX_DENSE_TV:
        raise ParameterError(f"dense transients are limited to {MAX_DENSE_TV} states")
    if gen.discrete:
        steps = int(round(t))
        if abs(steps - t) > 1e-12 or steps < 0:
            raise ParameterError("discrete chains need an integer step count")
        return np.linalg.matrix_power(gen.dense(), steps), 0.0
    lam = _unif_rate(gen)
    P = np.eye(n) + gen.dense() / lam
    mu = lam * t
    cut = _poisson_cut(mu, tol)
    weights = stats.poisson.pmf(np.arange(cut + 1), mu)
    out = np.zeros((n, n))
    V = np.eye(n)
    for w in weights:
        out += w * V
        V = V @ P
        # renormalize against drift of the stochastic rows
        V /= V.sum(axis=1, keepdims=True)
    err = float(max(0.0, 1.0 - weights.sum()))
    return out, err


def sup_tv(M: np.ndarray) -> float:
    """Largest total-variation distance between two rows."""
    if M.shape[0] < 2:
        return 0.0
    return 0.5 * float(pdist(M, "cityblock").max())


@dataclass
class MixingCurve:
    t: np.ndarray
    tv: np.ndarray
    bound_error: np.ndarray

    def to_csv(self) -> str:
        rows = ["t,tv,bound_error"]
        rows += [f"{a!r},{b!r},{c!r}" for a, b, c in zip(self.t, self.tv, self.bound_error)]
        return "\n".join(rows) + "\n"


def tv_mixing_curve(gen: GeneratorMatrix, t_grid: Sequence[float]) -> MixingCurve:
    ts = np.asarray(t_grid, float)
    tv = np.empty(len(ts))
    err = np.empty(len(ts))
    for i, t in enumerate(ts):
        M, e = transition_matrix(gen, t)
        tv[i] = sup_tv(M)
        err[i] = e
    return MixingCurve(ts, tv, err)


def exact_mixing_time(gen: GeneratorMatrix, eps: float = math.exp(-1), rel: float = 1e-6,
                      max_time: float = 1e6) -> float:
    """tau_1: first time the worst-pair TV distance is at most ``eps``.

    Discrete chains return an integer step count; continuous chains are
    bisected to relative precision ``rel``.
    """
    if gen.discrete:
        P = gen.dense()
        V = np.eye(gen.size)
        for n in range(int(max_time) + 1):
            if sup_tv(V) <= eps:
                return float(n)
            V = V @ P
        raise StateError("mixing time exceeds max_time")

    def d(t):
        return sup_tv(transition_matrix(gen, t)[0])

    hi = 1.0
    while d(hi) > eps:
        hi *= 2.0
        if hi > max_time:
            raise StateError("mixing time exceeds max_time")
    lo = 0.0
    while hi - lo > rel * hi:
        mid = 0.5 * (lo + hi)
        if d(mid) > eps:
            lo = mid
        else:
            hi = mid
    return hi


def spectral_gap(gen: GeneratorMatrix, pi: np.ndarray | None = None) -> float:
    """``-lambda_2`` of a reversible generator, from the symmetrized matrix
    ``D^{1/2} Q D^{-1/2}`` with ``D = diag(pi)``."""
    if gen.size > MAX_EIG:
        raise ParameterError(f"eigensolves are limited to {MAX_EIG} states")
    if gen.discrete:
        raise ParameterError("spectral gap is defined here for rate matrices")
    pi = stationary_distribution(gen) if pi is None else pi
    s = np.sqrt(pi)
    Q = gen.dense()
    S = s[:, None] * Q / s[None, :]
    if np.abs(S - S.T).max() > 1e-8 * max(1.0, np.abs(S).max()):
        raise StateError("generator is not reversible")
    ev = np.linalg.eigvalsh(0.5 * (S + S.T))
    if len(ev) < 2:
        return 0.0
    return float(-ev[-2])


@dataclass
class HittingSolution:
    value: float
    boundary_prob: float = 0.0
    ok: bool = True


def _solve(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Solve a diagonally dominant system: sparse LU when small, otherwise
    Jacobi-preconditioned BiCGSTAB with a residual check and LU fallback."""
    A = A.tocsc()
    if A.shape[0] <= 5000:
        return spsolve(A, b)
    d = A.diagonal()
    x, info = bicgstab(A, b, M=sp.diags(1.0 / d), rtol=1e-14, atol=0.0, maxiter=100_000)
    if info != 0 or np.abs(A @ x - b).max() > 1e-10 * max(1.0, np.abs(b).max()):
        x = spsolve(A, b)
    return x


def _transient_solve(gen: GeneratorMatrix, target: int, rhs: np.ndarray) -> np.ndarray:
    n = gen.size
    keep = np.array([i for i in range(n) if i != target])
    M = gen.matrix
    if gen.discrete:
        A = sp.eye(len(keep)) - M[keep][:, keep]
    else:
        A = -M[keep][:, keep]
    # the escape rates leave the diagonal of Q untouched: the chain below
    # the cut reflects, and escape is accounted for separately
    sol = _solve(A, rhs[keep]) if len(keep) else np.zeros(0)
    full = np.zeros(n)
    full[keep] = sol
    return full


def exact_expected_hitting(gen: GeneratorMatrix, start: int, target: int,
                           space: StateSpace | None = None) -> HittingSolution:
    """Expected time to reach ``target`` from ``start`` (state indices).

    With escape rates present (truncated Z problems) the probability of
    touching the cut before ``target`` is computed too and the solution is
    flagged when it exceeds ``BOUNDARY_TOL``.
    """
    n = gen.size
    if start == target:
        return HittingSolution(0.0)
    ncomp, labels = connected_components(gen.matrix, directed=True, connection="weak")
    if labels[start] != labels[target]:
        raise StateError("target is not reachable from start")
    h = _transient_solve(gen, target, np.ones(n))
    if not np.isfinite(h[start]):
        raise StateError("target is not reachable from start")
    b = 0.0
    if gen.escape is not None and gen.escape.any():
        # escape before target: rates into an absorbing cut state
        esc = gen.escape
        rate = -gen.matrix.diagonal() + esc
        P = sp.diags(1.0 / np.where(rate > 0, rate, 1.0)) @ (gen.matrix - sp.diags(gen.matrix.diagonal()))
        keep = np.array([i for i in range(n) if i != target])
        A = sp.eye(len(keep)) - P.tocsr()[keep][:, keep]
        rhs = (esc / np.where(rate > 0, rate, 1.0))[keep]
        sol = _solve(A, rhs)
        b = float(sol[np.searchsorted(keep, start)])
    return HittingSolution(float(h[start]), b, b <= BOUNDARY_TOL)


def z_expected_hitting(start: ZConfig, p: float, tol: float = BOUNDARY_TOL,
                       max_energy: int | None = None) -> HittingSolution:
    """E[H(start)] for EX(Z,p), truncating A by energy and doubling the
    cut until the cut is reached before G_Z with probability below ``tol``."""
    if not 0.5 < p <= 1.0:
        raise ParameterError("Z hitting times are finite only for p > 1/2")
    if start.is_ground:
        return HittingSolution(0.0)
    E = max(start.energy() + 4, 8) if max_energy is None else max_energy
    while True:
        space, gen = build_generator("z_hitting", start=start, p=p, max_energy=E)
        sol = exact_expected_hitting(gen, 0, space.index[ZConfig()])
        if sol.ok or max_energy is not None:
            return sol
        if gen.size * 4 > MAX_Z_STATES:
            raise StateError("hull too small: energy cut cannot grow further")
        E *= 2


def z_hit_probability(start: ZConfig, p: float, t: float, max_energy: int = 20) -> tuple[float, float]:
    """P(H(start) <= t) on the energy-truncated chain with G_Z absorbing,
    together with the mass that reached the cut (an error bound)."""
    space, gen = build_generator("z_hitting", start=start, p=p, max_energy=max_energy)
    g = space.index[ZConfig()]
    n = gen.size
    Q = gen.matrix.tolil()
    Q[g, :] = 0.0
    # cut escapes go to an extra absorbing state
    Q = sp.bmat([[Q.tocsr(), sp.csr_matrix(gen.escape[:, None])],
                 [sp.csr_matrix((1, n)), sp.csr_matrix((1, 1))]]).tocsr()
    d = np.asarray(Q.sum(axis=1)).ravel()
    Q = (Q - sp.diags(d)).tocsr()
    lam = float(-Q.diagonal().min())
    P = (sp.eye(n + 1) + Q / lam).tocsr().T
    mu = lam * t
    cut = _poisson_cut(mu, UNIF_TOL)
    w = stats.poisson.pmf(np.arange(cut + 1), mu)
    v = np.zeros(n + 1)
    v[0] = 1.0
    acc = np.zeros(n + 1)
    for wi in w:
        acc += wi * v
        v = P @ v
    return float(acc[g]), float(acc[n])


def two_state_tv(t: float) -> float:
    """sup-pair TV of CA(2,p) at time t: exp(-t)."""
    return math.exp(-t)


__all__ = [
    "StateSpace",
    "GeneratorMatrix",
    "MixingCurve",
    "HittingSolution",
    "build_generator",
    "stationary_distribution",
    "card_weights",
    "transition_matrix",
    "sup_tv",
    "tv_mixing_curve",
    "exact_mixing_time",
    "spectral_gap",
    "exact_expected_hitting",
    "z_expected_hitting",
    "z_hit_probability",
    "two_state_tv",
]

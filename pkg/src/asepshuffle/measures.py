"""Blocking measure, product measure and the i.i.d. initial conditions.

The blocking measure is the inhomogeneous product measure with
``P(eta(i)=1) = rho^i / (1 + rho^i)``, ``rho = (1-p)/p``, conditioned on the
set A.  Under the product measure the number of holes left of 0 and the
number of particles from 0 rightward are independent Poisson-binomial
counts, so A (those two counts equal) has positive probability and every
quantity of the conditioned law can be computed exactly from the two
count distributions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from . import _kernels as K
from .configs import ParameterError, SecondClassConfig, StateError, ZConfig
from .dynamics import run_z
from .streams import SAMPLER_TAG, EventStream, derive_seed, stream_key

MAX_TRIES = 1_000_000


@dataclass(frozen=True)
class BlockingParams:
    p: float
    truncation_tail: float = 1e-12

    def __post_init__(self):
        if not 0.5 < self.p <= 1.0:
            raise ParameterError(f"blocking measure needs p > 1/2, got {self.p}")
        if not 0.0 < self.truncation_tail <= 1e-6:
            raise ParameterError("truncation_tail must lie in (0, 1e-6]")

    @property
    def rho(self) -> float:
        return (1.0 - self.p) / self.p

    @property
    def window(self) -> int:
        return truncation_window(self.p, self.truncation_tail)


def blocking_marginal(p: float, i) -> np.ndarray | float:
    """``rho^i / (1 + rho^i)`` evaluated as a logistic function of
    ``i log rho``, which neither overflows nor cancels."""
    if not 0.5 < p <= 1.0:
        raise ParameterError(f"blocking marginal needs p > 1/2, got {p}")
    if p == 1.0:
        i = np.asarray(i)
        out = np.where(i > 0, 0.0, np.where(i < 0, 1.0, 0.5))
        return float(out) if out.ndim == 0 else out
    out = special.expit(np.asarray(i, dtype=float) * np.log((1.0 - p) / p))
    return float(out) if np.ndim(out) == 0 else out


def truncation_window(p: float, tail: float = 1e-12) -> int:
    """Smallest W with the summed deviation from G_Z beyond ``|i| > W``
    below ``tail``.

    Site ``i > 0`` deviates with probability ``m(i)`` and site ``-i`` with
    ``1 - m(-i) = m(i)``, so the outside mass is ``2 sum_{i>W} m(i)``.
    """
    if p == 1.0:
        return 0
    rho = (1.0 - p) / p
    W = 0
    while True:
        # sum_{i>W} m(i) <= sum_{i>W} rho^i = rho^{W+1}/(1-rho)
        if 2.0 * rho ** (W + 1) / (1.0 - rho) < tail:
            return W
        W += 1


def _poisson_binomial(probs: np.ndarray) -> np.ndarray:
    pmf = np.zeros(len(probs) + 1)
    pmf[0] = 1.0
    for q in probs:
        pmf[1:] = pmf[1:] * (1.0 - q) + pmf[:-1] * q
        pmf[0] *= 1.0 - q
    return pmf


@dataclass
class BlockingOracle:
    """Exact law of the blocking measure on its truncation window.

    ``holes[k]`` is the product-measure probability of k holes on
    ``[-W, -1]``, ``parts[k]`` of k particles on ``[0, W]``.
    """

    params: BlockingParams
    W: int = field(init=False)
    marg: np.ndarray = field(init=False)
    holes: np.ndarray = field(init=False)
    parts: np.ndarray = field(init=False)

    def __post_init__(self):
        self.W = self.params.window
        sites = np.arange(-self.W, self.W + 1)
        self.marg = blocking_marginal(self.params.p, sites)
        self.holes = _poisson_binomial(1.0 - self.marg[: self.W])
        self.parts = _poisson_binomial(self.marg[self.W:])

    @property
    def mass_A(self) -> float:
        """mu(A), the acceptance probability of the rejection sampler."""
        n = min(len(self.holes), len(self.parts))
        return float(np.dot(self.holes[:n], self.parts[:n]))

    def count_law(self) -> np.ndarray:
        """Law of k, the common number of holes left of 0 and particles
        right of it (a configuration has 2k discrepancies)."""
        n = min(len(self.holes), len(self.parts))
        w = self.holes[:n] * self.parts[:n]
        return w / w.sum()

    def mu(self, a: ZConfig) -> float:
        """Product-measure probability of the cylinder ``a`` on the window."""
        vals = a.to_dense(-self.W, self.W)
        if a.discrepancies and (a.discrepancies[0] < -self.W or a.discrepancies[-1] > self.W):
            return 0.0
        return float(np.prod(np.where(vals == 1, self.marg, 1.0 - self.marg)))

    def prob(self, a: ZConfig) -> float:
        """Psi({a})."""
        return self.mu(a) / self.mass_A

    def site_marginals(self, lo: int, hi: int) -> np.ndarray:
        """``Psi(eta(i) = 1)`` for ``i`` in ``[lo, hi]``."""
        out = np.empty(hi - lo + 1)
        for idx, i in enumerate(range(lo, hi + 1)):
            if i < -self.W:
                out[idx] = 1.0
                continue
            if i > self.W:
                out[idx] = 0.0
                continue
            j = i + self.W
            m = self.marg[j]
            if i < 0:
                rest = _poisson_binomial(np.delete(1.0 - self.marg[: self.W], j))
                # eta(i) = 1 means no hole at i
                n = min(len(rest), len(self.parts))
                num = np.dot(rest[:n], self.parts[:n]) * m
            else:
                rest = _poisson_binomial(np.delete(self.marg[self.W:], j - self.W))
                shifted = np.concatenate([[0.0], rest])
                n = min(len(shifted), len(self.holes))
                num = np.dot(self.holes[:n], shifted[:n]) * m
            out[idx] = num / self.mass_A
        return out

    def top_atoms(self, K_atoms: int, max_k: int = 3) -> list[tuple[ZConfig, float]]:
        """The ``K_atoms`` most probable configurations, found among those
        with at most ``max_k`` holes left of 0."""
        from itertools import combinations

        cands = []
        neg = range(-1, -max_k * 3 - 2, -1)
        pos = range(0, max_k * 3 + 1)
        for k in range(0, max_k + 1):
            for hs in combinations(neg, k):
                for ps in combinations(pos, k):
                    a = ZConfig(tuple(sorted(hs + ps)))
                    cands.append((self.prob(a), str(a), a))
        cands.sort(key=lambda c: (-c[0], c[1]))
        return [(a, pr) for pr, _, a in cands[:K_atoms]]

    def tail_right(self, n: int) -> float:
        """``Psi(exists i > n: eta(i) = 1)``."""
        lo = n + 1
        if lo > self.W:
            return 0.0
        # particles right of n: complement is "all particles lie in [0, n]"
        inner = _poisson_binomial(self.marg[self.W: self.W + lo])
        none_out = float(np.prod(1.0 - self.marg[self.W + lo:]))
        n_ = min(len(inner), len(self.holes))
        p_inside = np.dot(self.holes[:n_], inner[:n_]) * none_out
        return 1.0 - p_inside / self.mass_A


@dataclass
class BlockingBatch:
    """Dense accepted samples on ``[lo, lo + width)``, plus diagnostics."""

    values: np.ndarray
    lo: int
    tries: int
    truncation_bound: float
    accepted: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.tries if self.tries else 0.0

    def configs(self) -> list[ZConfig]:
        return [ZConfig.from_dense(row, self.lo) for row in self.values]


def _draw(params: BlockingParams, n: int, rng: np.random.Generator) -> np.ndarray:
    W = params.window
    marg = blocking_marginal(params.p, np.arange(-W, W + 1))
    return (rng.random((n, 2 * W + 1)) < marg).astype(np.int8)


def _balanced(x: np.ndarray, W: int) -> np.ndarray:
    holes = (x[:, :W] == 0).sum(axis=1)
    parts = x[:, W:].sum(axis=1)
    return holes == parts


def sample_blocking_batch(params: BlockingParams, n: int, rng: np.random.Generator,
                          chunk: int = 200_000, max_tries: int | None = None) -> BlockingBatch:
    """``n`` independent samples of the blocking measure by rejection."""
    W = params.window
    bound = 2.0 * params.rho ** (W + 1) / (1.0 - params.rho) if params.rho > 0 else 0.0
    max_tries = MAX_TRIES * max(n, 1) if max_tries is None else max_tries
    out = []
    have = 0
    tries = 0
    accepted = 0
    while have < n:
        if tries >= max_tries:
            raise RuntimeError(
                f"rejection budget exhausted: {have} of {n} accepted in {tries} tries "
                f"(window {W}, p={params.p})"
            )
        m = min(chunk, max_tries - tries)
        x = _draw(params, m, rng)
        tries += m
        ok = x[_balanced(x, W)]
        accepted += len(ok)
        take = min(len(ok), n - have)
        if take:
            out.append(ok[:take])
            have += take
    vals = np.concatenate(out) if out else np.zeros((0, 2 * W + 1), np.int8)
    return BlockingBatch(vals, -W, tries, bound, accepted)


def sample_blocking(params: BlockingParams, rng: np.random.Generator) -> ZConfig:
    """One exact sample of the blocking measure (up to the truncation bound)."""
    W = params.window
    for _ in range(MAX_TRIES):
        x = _draw(params, 1, rng)
        if _balanced(x, W)[0]:
            return ZConfig.from_dense(x[0], -W)
    raise RuntimeError(f"rejection budget of {MAX_TRIES} tries exhausted (window {W}, p={params.p})")


def sample_product(params: BlockingParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Unconditioned product-measure draws on the truncation window."""
    return _draw(params, n, rng)


# ------------------------------------------------------------ initial states

INIT_TAGS = ("sigma0", "beta0", "gamma0", "gamma_l")


@dataclass(frozen=True)
class InitKind:
    """Initial condition on the window ``[lo, hi]``.

    ``N`` parameterizes ``sigma0`` and ``l`` parameterizes ``gamma_l``.
    """

    tag: str
    lo: int
    hi: int
    N: int | None = None
    l: int = 0

    def __post_init__(self):
        if self.tag not in INIT_TAGS:
            raise ParameterError(f"unknown initial state {self.tag!r}")
        if self.hi < self.lo:
            raise ParameterError("empty window")
        if self.tag == "sigma0":
            if self.N is None or self.N < 1:
                raise ParameterError("sigma0 needs N >= 1")
            if not (self.lo < -self.N and self.hi >= self.N):
                raise ParameterError("sigma0 window must contain [-N-1, N]")
        if self.tag == "beta0" and not (self.lo <= 0 < self.hi):
            raise ParameterError("beta0 window must contain 0 and 1")
        if self.tag in ("gamma0", "gamma_l"):
            l = self.l if self.tag == "gamma_l" else 0
            if l < 0 or not (self.lo < -l <= self.hi):
                raise ParameterError("gamma window must contain -l-1 and -l")


def fair_coins(seed: int, lo: int, hi: int) -> np.ndarray:
    """Y_i for sites ``lo..hi``; the value at a site does not depend on the
    window it was requested with."""
    return K.iid_bits(stream_key(seed, SAMPLER_TAG), lo, hi)


def sample_initial(kind: InitKind, seed: int) -> SecondClassConfig:
    """Draw the named initial condition with fair coins keyed by ``seed``."""
    sites = np.arange(kind.lo, kind.hi + 1)
    Y = fair_coins(seed, kind.lo, kind.hi)
    if kind.tag == "sigma0":
        N = kind.N
        vals = np.where(sites < -N, 1, np.where(sites < 0, 0, np.where(sites < N, 1, 2 * Y)))
        return SecondClassConfig(kind.lo, vals, "ones", "sample02", tagged=N - 1,
                                 meta={"kind": "sigma0", "N": N})
    if kind.tag == "beta0":
        vals = np.where(sites <= 0, Y, 2 * Y)
        cfg = SecondClassConfig(kind.lo, vals, "sample01", "sample02", meta={"kind": "beta0"})
        ones = np.nonzero(cfg.values == 1)[0]
        if len(ones) == 0:
            raise StateError("no first-class particle in the window")
        cfg.tagged = kind.lo + int(ones[-1])
        return cfg
    l = kind.l if kind.tag == "gamma_l" else 0
    vals = np.where(sites < -l, 1, 1 - Y)
    return SecondClassConfig(kind.lo, vals, "ones", "sample01", meta={"kind": kind.tag, "l": l})


# ---------------------------------------------------------- stationarity


@dataclass
class StatTest:
    statistic: str
    p_value: float
    n: int
    passed: bool

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value, "n": self.n, "pass": self.passed}


@dataclass
class StationarityReport:
    kind: str
    t: float
    reps: int
    alpha: float
    tests: list

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tests)

    def to_json(self) -> str:
        return json.dumps([t.to_dict() for t in self.tests], indent=1)


def _homogeneity(a: np.ndarray, b: np.ndarray, min_expected: float = 5.0) -> float:
    """Chi-square homogeneity p-value for two count vectors over the same
    categories; sparse categories are pooled into their neighbour."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    tot = a + b
    keep = tot > 0
    a, b, tot = a[keep], b[keep], tot[keep]
    if len(tot) < 2:
        return 1.0
    frac = a.sum() / tot.sum()
    # pool from the right until every pooled category is well populated
    pa, pb = [], []
    ca = cb = 0.0
    for x, y in zip(a, b):
        ca += x
        cb += y
        if min((ca + cb) * frac, (ca + cb) * (1 - frac)) >= min_expected:
            pa.append(ca)
            pb.append(cb)
            ca = cb = 0.0
    if ca + cb > 0:
        if pa:
            pa[-1] += ca
            pb[-1] += cb
        else:
            pa.append(ca)
            pb.append(cb)
    if len(pa) < 2:
        return 1.0
    table = np.array([pa, pb])
    return float(stats.chi2_contingency(table, correction=False)[1])


def _keys(configs: Sequence[ZConfig]) -> list[str]:
    return [str(c) for c in configs]


def stationarity_check(measure_sampler: Callable[[int, np.random.Generator], list],
                       kind: str, t: float, reps: int, p: float, seed: int = 0,
                       alpha: float = 0.01, top_k: int = 10, site_range=(-10, 10),
                       atoms: Sequence[ZConfig] | None = None) -> StationarityReport:
    """Compare a measure with its image under EX(Z,p) after time ``t``.

    ``reps`` samples are drawn; the first half is kept as the time-0 sample
    and the second half is evolved to ``t`` with independent streams, so the
    two groups are independent and the homogeneity tests are exact in
    their assumptions.  Statistics: frequencies of ``top_k`` atoms (the
    ``atoms`` given, else the most frequent in the time-0 sample), each
    site marginal on ``site_range``, and the law of the number of
    discrepancies.  Bonferroni correction over all tests.
    """
    if t < 0:
        raise ParameterError("t must be nonnegative")
    rng = np.random.default_rng(int(stream_key(seed, SAMPLER_TAG)))
    xs = list(measure_sampler(reps, rng))
    half = len(xs) // 2
    before = xs[:half]
    if t == 0:
        after = xs[half: 2 * half]
    else:
        after = []
        for r, a in enumerate(xs[half: 2 * half]):
            stream = EventStream(derive_seed(seed, r), p)
            after.append(run_z(a, stream, 0.0, float(t)).state)
    tests = []
    kb = _keys(before)
    ka = _keys(after)
    if atoms is None:
        vals, counts = np.unique(kb, return_counts=True)
        order = np.lexsort((vals, -counts))
        atom_keys = [vals[i] for i in order[:top_k]]
    else:
        atom_keys = [str(a) for a in atoms[:top_k]]
    idx = {k: j for j, k in enumerate(atom_keys)}

    def atom_counts(keys):
        c = np.zeros(len(atom_keys) + 1)
        for k in keys:
            c[idx.get(k, len(atom_keys))] += 1
        return c

    tests.append(("atoms", _homogeneity(atom_counts(kb), atom_counts(ka)), half))
    lo, hi = site_range

    def dense(cfgs):
        return np.array([c.to_dense(lo, hi) for c in cfgs], dtype=np.int8).reshape(len(cfgs), hi - lo + 1)

    db = dense(before)
    da = dense(after)
    for j, i in enumerate(range(lo, hi + 1)):
        ob = db[:, j].sum() if half else 0
        oa = da[:, j].sum() if half else 0
        pv = _homogeneity([ob, half - ob], [oa, half - oa])
        tests.append((f"site[{i}]", pv, half))
    nb = np.bincount([len(c.discrepancies) // 2 for c in before], minlength=1)
    na = np.bincount([len(c.discrepancies) // 2 for c in after], minlength=1)
    m = max(len(nb), len(na))
    tests.append(("discrepancy_count", _homogeneity(np.pad(nb, (0, m - len(nb))),
                                                   np.pad(na, (0, m - len(na)))), half))
    level = alpha / len(tests)
    out = [StatTest(name, float(pv), int(n), bool(pv >= level)) for name, pv, n in tests]
    return StationarityReport(kind, float(t), reps, alpha, out)


def blocking_sampler(params: BlockingParams) -> Callable[[int, np.random.Generator], list]:
    def draw(n, rng):
        return sample_blocking_batch(params, n, rng).configs()

    return draw


def point_mass_sampler(a: ZConfig) -> Callable[[int, np.random.Generator], list]:
    def draw(n, rng):
        return [a] * n

    return draw


def psi_tail_right(values: np.ndarray, lo: int, n: int) -> float:
    """Empirical ``P(exists i > n: eta(i) = 1)`` over dense samples."""
    j = n + 1 - lo
    if j >= values.shape[1]:
        return 0.0
    return float(values[:, max(j, 0):].any(axis=1).mean())


def dump_samples(configs: Sequence[ZConfig]) -> str:
    """Line-delimited serialization of a sample batch."""
    return "".join(f"{c}\n" for c in configs)


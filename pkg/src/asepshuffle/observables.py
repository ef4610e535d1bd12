"""Hitting times, tagged-particle statistics, proof-event estimators and
tail fits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats
from statsmodels.stats.proportion import proportion_confint

from . import _kernels as K
from .configs import ParameterError, SecondClassConfig, StateError, ZConfig
from .coupling import default_cap, sandwich_hitting_time
from .dynamics import env_valid, new_env, run_z
from .measures import BlockingParams, InitKind, sample_blocking_batch, sample_initial
from .results import DriftEstimate, EventProbReport, HittingSample, TailFit
from .streams import EventStream, derive_seed, sampler_rng

MAX_INVALID_FRACTION = 0.01
MIN_CONDITIONING = 100
DEFAULT_T0 = 50.0


def margin_for(horizon: float) -> int:
    """Window margin for a windowed run of length ``horizon``."""
    return int(math.ceil(4 * horizon)) + 40


def wilson(k: int, n: int, alpha: float = 0.05) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    lo, hi = proportion_confint(k, n, alpha=alpha, method="wilson")
    return float(lo), float(hi)


def _prop_se(k: int, n: int) -> float:
    if n == 0:
        return 0.0
    q = k / n
    return math.sqrt(q * (1 - q) / n)


# ---------------------------------------------------------------- hitting


def hitting_time(start, p: float, seed: int, cap: float | None = None) -> HittingSample:
    """H(start): first time G_Z is reached (``start`` a ZConfig), or the
    sandwich time H(N,k) (``start`` a pair ``(N, k)``)."""
    if isinstance(start, tuple):
        N, k = start
        return sandwich_hitting_time(N, k, p, seed, cap)
    if not isinstance(start, ZConfig):
        raise TypeError("start must be a ZConfig or an (N, k) pair")
    if p <= 0.5:
        raise ParameterError("Z hitting times need p > 1/2")
    if cap is None:
        hull = start.hull()
        size = 1 if hull is None else max(hull[1] + 1, -hull[0], 1)
        cap = default_cap(size, p)
    if start.is_ground:
        return HittingSample(0.0, False, seed, p, cap=cap)
    res = run_z(start, EventStream(seed, p), 0.0, float(cap), stop_at_ground=True)
    if not res.hit:
        return HittingSample(float(cap), True, seed, p, cap=cap)
    return HittingSample(res.time, False, seed, p, cap=cap)


def _survival(values: np.ndarray, censored: np.ndarray, grid: np.ndarray):
    n = len(values)
    surv, lo, hi, lower_only = [], [], [], []
    for t in grid:
        # a censored sample exceeds t whenever its cap is at least t
        exceed = (values > t) | (censored & (values >= t))
        k = int(np.sum(exceed))
        surv.append(k / n if n else float("nan"))
        a, b = wilson(k, n)
        lo.append(a)
        hi.append(b)
        lower_only.append(bool(n and np.all(censored[exceed])) and k > 0)
    return np.array(surv), lo, hi, lower_only


def _fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    if len(x) < 2:
        return float("nan"), float("nan"), float("nan")
    res = stats.linregress(x, y)
    return float(res.slope), float(res.intercept), float(res.rvalue ** 2)


def hitting_tail_estimate(family: str, p: float, grid: Sequence[float], reps: int, seed: int = 0,
                          N: int | None = None, cap: float | None = None,
                          truncation_tail: float = 1e-12) -> TailFit:
    """Empirical survival of H over ``grid`` with Wilson 95% intervals.

    ``family='I_N'`` samples H(I_N) (needs ``N``); ``family='blocking'``
    samples H(Psi) from independent blocking-measure draws and fits
    ``-log P(H > t)`` against ``sqrt(t)``.
    """
    if reps < 1000:
        raise ParameterError("tail estimates need reps >= 1000")
    grid = np.asarray(sorted(grid), float)
    if family == "I_N":
        if N is None:
            raise ParameterError("family I_N needs N")
        from .configs import canonical_states

        start = canonical_states("I_N", N)
        cap = max(default_cap(N, p), grid[-1]) if cap is None else cap
        starts = [start] * reps
    elif family == "blocking":
        cap = grid[-1] if cap is None else cap
        batch = sample_blocking_batch(BlockingParams(p, truncation_tail), reps, sampler_rng(seed))
        starts = batch.configs()
    else:
        raise ParameterError(f"unknown family {family!r}")
    vals = np.empty(reps)
    cens = np.zeros(reps, bool)
    for r, a in enumerate(starts):
        h = hitting_time(a, p, derive_seed(seed, r), cap)
        vals[r] = h.value
        cens[r] = h.censored
    surv, lo, hi, lower_only = _survival(vals, cens, grid)
    ok = surv > 0
    slope, icpt, r2 = _fit(np.sqrt(grid[ok]), -np.log(surv[ok]))
    return TailFit(
        thresholds=grid.tolist(),
        survival=surv.tolist(),
        model="exp-sqrt-in-t",
        slope=slope,
        intercept=icpt,
        r2=r2,
        lower_ci=lo,
        upper_ci=hi,
        n=reps,
        extra={"family": family, "N": N, "p": p, "cap": cap, "censored": int(cens.sum()),
               "lower_bound_only": lower_only, "samples": vals.tolist()},
    )


def calibrate_D(N: int, p: float, reps: int, exceedance: float, seed: int = 0) -> float:
    """Smallest D (to two decimals, rounded up) whose empirical exceedance
    ``P(H(I_N) > D N)`` is at most ``exceedance``."""
    from .configs import canonical_states

    start = canonical_states("I_N", N)
    cap = default_cap(N, p)
    h = np.array([hitting_time(start, p, derive_seed(seed, r), cap).value for r in range(reps)])
    q = np.quantile(h / N, 1.0 - exceedance, method="higher")
    return math.ceil(q * 100) / 100


# ---------------------------------------------------------------- beta runs


@dataclass
class BetaRun:
    """One run of the beta process: tag displacement in the 2->1 view,
    displacement of the rightmost 1, final state and validity."""

    x_prime: int
    x: int
    x0: int
    state: SecondClassConfig
    valid: bool


def run_beta(p: float, t: float, seed: int, margin: int | None = None) -> BetaRun:
    m = margin_for(t) if margin is None else margin
    cfg = sample_initial(InitKind("beta0", -m, m), seed)
    x0 = cfg.tagged
    env = new_env(cfg, x0)
    stream = EventStream(seed, p)
    vals = cfg.values
    tag = K.window_run(vals, cfg.lo, stream.key, p, 0.0, float(t), x0, env)
    ones = np.nonzero(vals == 1)[0]
    if len(ones) == 0:
        raise StateError("no first-class particle left in the window")
    x = cfg.lo + int(ones[-1])
    cfg.tagged = int(tag)
    cfg.meta["env"] = env
    valid = env_valid(env, ("tag", "r1"))
    return BetaRun(int(tag) - x0, x - x0, x0, cfg, valid)


def _beta_batch(p, t, reps, seed, margin=None):
    runs = [run_beta(p, t, derive_seed(seed, r), margin) for r in range(reps)]
    valid = np.array([r.valid for r in runs])
    n_bad = int((~valid).sum())
    if n_bad > MAX_INVALID_FRACTION * reps:
        raise StateError(f"{n_bad} of {reps} runs touched the window boundary")
    return [r for r in runs if r.valid], n_bad


def drift_estimate(samples: np.ndarray, t: float, invalid: int, extra: dict) -> DriftEstimate:
    n = len(samples)
    if n < 2:
        raise ParameterError("need at least two valid replicas")
    y = samples / t
    mean = float(y.mean())
    se_mean = float(y.std(ddof=1) / math.sqrt(n))
    # variance of x / t, scaled to Var(x) / t
    s2 = samples.var(ddof=1)
    var_over_t = float(s2 / t)
    # standard error of a sample variance via the fourth central moment
    c = samples - samples.mean()
    m4 = float(np.mean(c ** 4))
    se_var = float(math.sqrt(max(m4 - s2 ** 2 * (n - 3) / (n - 1), 0.0) / n) / t)
    return DriftEstimate(t, n, mean, var_over_t, se_mean, se_var, invalid, extra)


def tagged_drift(process: str, p: float, t: float, reps: int, seed: int = 0,
                 margin: int | None = None) -> DriftEstimate:
    """Mean and variance (over t) of the tagged displacement in the beta
    process: ``beta_2to1`` tracks x'(t), ``beta_2to0`` tracks x(t)."""
    if process not in ("beta_2to1", "beta_2to0"):
        raise ParameterError(f"unknown process {process!r}")
    if t < 1:
        raise ParameterError("t must be at least 1")
    runs, bad = _beta_batch(p, t, reps, seed, margin)
    key = "x_prime" if process == "beta_2to1" else "x"
    d = np.array([getattr(r, key) for r in runs], float)
    return drift_estimate(d, float(t), bad, {"process": process, "p": p, "samples": d.tolist(),
                                     "seeds": [derive_seed(seed, i) for i in range(reps)]})


def left_gaps(state: SecondClassConfig, count: int = 31) -> np.ndarray:
    """Gaps ``beta^d(i)`` for ``i = -count+1 .. 0`` between the particles
    (first or second class) ending at the tagged one."""
    occ = np.nonzero(state.values > 0)[0] + state.lo
    j = int(np.searchsorted(occ, state.tagged))
    if j < count:
        raise StateError("not enough particles left of the tag")
    return np.diff(occ[j - count: j + 1])


def geometric_gof(gaps: np.ndarray, min_expected: float = 5.0) -> float:
    """Chi-square p-value of gaps against Geometric(1/2) on {1, 2, ...}."""
    gaps = np.asarray(gaps)
    n = len(gaps)
    kmax = 1
    while n * 0.5 ** (kmax + 1) >= min_expected:
        kmax += 1
    obs = [np.sum(gaps == k) for k in range(1, kmax)] + [np.sum(gaps >= kmax)]
    exp = [n * 0.5 ** k for k in range(1, kmax)] + [n * 0.5 ** (kmax - 1)]
    return float(stats.chisquare(obs, exp).pvalue)


def gap_law_test(p: float, t: float, reps: int, seed: int = 0, count: int = 31) -> tuple[float, int]:
    """Pool the ``count`` gaps left of the tagged particle of beta^{2->1}
    at time ``t`` and test them against Geometric(1/2).

    The gap right of the tag is left out: at time 0 it spans the origin and
    is size biased.
    """
    runs, _ = _beta_batch(p, t, reps, seed, margin_for(t) + 4 * count)
    gaps = np.concatenate([left_gaps(r.state, count) for r in runs])
    return geometric_gof(gaps), len(gaps)


def couple_distance_tail(p: float, t: float, n_grid: Sequence[int], reps: int, seed: int = 0,
                         margin: int | None = None) -> TailFit:
    """Empirical ``P(|x(t) - x'(t)| > n)`` with a geometric fit of log
    survival against n over the grid points with positive survival."""
    runs, bad = _beta_batch(p, t, reps, seed, margin)
    d = np.array([abs(r.x - r.x_prime) for r in runs])
    grid = np.asarray(sorted(n_grid), int)
    n = len(d)
    surv = np.array([np.mean(d > k) for k in grid])
    ci = [wilson(int(np.sum(d > k)), n) for k in grid]
    ok = surv > 0
    slope, icpt, r2 = _fit(grid[ok].astype(float), np.log(surv[ok]))
    return TailFit(grid.tolist(), surv.tolist(), "geometric-in-n", slope, icpt, r2,
                   [c[0] for c in ci], [c[1] for c in ci], n,
                   {"p": p, "t": t, "invalid": bad, "distances": d.tolist()})


# ---------------------------------------------------------------- gamma


def run_gamma(l: int, p: float, t: float, seed: int, margin: int | None = None) -> tuple[int, bool]:
    """L(gamma^l_t) and run validity."""
    m = margin_for(t) if margin is None else margin
    kind = InitKind("gamma_l", -l - m, m, l=l)
    cfg = sample_initial(kind, seed)
    env = new_env(cfg, None)
    stream = EventStream(seed, p)
    K.window_run(cfg.values, cfg.lo, stream.key, p, 0.0, float(t), cfg.lo - 1, env)
    zeros = np.nonzero(cfg.values == 0)[0]
    L = cfg.lo + int(zeros[0])
    return L, env_valid(env, ("L",))


def gamma_front_speed(l: int, p: float, t: float, reps: int, seed: int = 0,
                      margin: int | None = None) -> DriftEstimate:
    """E[L(gamma^l_t)] / t and Var / t."""
    out = [run_gamma(l, p, t, derive_seed(seed, r), margin) for r in range(reps)]
    valid = np.array([v for _, v in out])
    bad = int((~valid).sum())
    if bad > MAX_INVALID_FRACTION * reps:
        raise StateError(f"{bad} of {reps} runs touched the window boundary")
    Ls = np.array([L for L, v in out if v], float)
    return drift_estimate(Ls, float(t), bad, {"l": l, "p": p, "samples": Ls.tolist()})


def duality_test(p: float, t: float, reps: int, seed: int = 0) -> float:
    """Two-sample KS p-value of ``-x(t)`` (beta) against ``L(gamma_t)``.

    x(t) is the position of the rightmost first-class particle, measured
    from the origin, so the beta initial condition is conditioned on
    nothing: both samples come from independent seeds.
    """
    runs, _ = _beta_batch(p, t, reps, derive_seed(seed, 1))
    xs = np.array([r.x + r.x0 for r in runs])
    g = gamma_front_speed(0, p, t, reps, derive_seed(seed, 2))
    Ls = np.array(g.extra["samples"])
    return float(stats.ks_2samp(-xs, Ls).pvalue)


# ---------------------------------------------------------------- sigma runs


@dataclass
class SigmaRun:
    hit_time: float
    L_t1: int
    L_min: int
    rank_max: int
    a3: bool
    valid: bool


def run_sigma(C: float, N: int, p: float, seed: int, margin: int | None = None) -> SigmaRun:
    t1 = C * N
    t2 = (C + 1) * N
    m = margin_for(t2) if margin is None else margin
    cfg = sample_initial(InitKind("sigma0", -N - m, 3 * N + m, N=N), seed)
    env = new_env(cfg, cfg.tagged)
    stream = EventStream(seed, p)
    hit, L_t1, L_min, rank_max, a3 = K.sigma_run(cfg.values, cfg.lo, stream.key, p, float(t1),
                                                 float(t2), cfg.tagged, env)
    return SigmaRun(float(hit), int(L_t1), int(L_min), int(rank_max), bool(a3),
                    env_valid(env, ("tag", "r1", "L")))


def proof_event_probs(C: float, N: int, p: float, reps: int, seed: int = 0,
                      margin: int | None = None) -> EventProbReport:
    """Estimate the events of the hitting-time decomposition from sigma runs.

    A1: the leftmost hole of the 2->1 view stays right of 2N on
    (CN, (C+1)N); A2: the rightmost first-class particle of the zero-erased
    view stays at particle index below 2N; A3: the zero-erased view equals
    G_Z at some time in the interval; At1: the leftmost hole is right of
    3N at time CN.  The directly measured ``P(H(I_N) <= (C+1)N)`` is the
    hitting time of the 2->0 view, which is EX(Z,p) from I_N.
    """
    if N < 2:
        raise ParameterError("need N >= 2")
    runs = [run_sigma(C, N, p, derive_seed(seed, r), margin) for r in range(reps)]
    return event_report(runs, C, N, p)


def event_report(runs: Sequence[SigmaRun], C: float, N: int, p: float) -> EventProbReport:
    """Event frequencies, the implied lower bound and its standard error
    from a set of sigma runs (invalid runs are counted and dropped)."""
    reps = len(runs)
    bad = sum(not r.valid for r in runs)
    warnings = []
    if bad > MAX_INVALID_FRACTION * reps:
        raise StateError(f"{bad} of {reps} runs touched the window boundary")
    runs = [r for r in runs if r.valid]
    n = len(runs)
    if n == 0:
        raise ParameterError("no valid sigma runs")
    t2 = (C + 1) * N
    A1 = np.array([r.L_min > 2 * N for r in runs])
    A2 = np.array([r.rank_max < 2 * N for r in runs])
    A3 = np.array([r.a3 for r in runs])
    At1 = np.array([r.L_t1 > 3 * N for r in runs])
    hit = np.array([0 <= r.hit_time <= t2 for r in runs])
    given = A1 & A2
    n_given = int(given.sum())
    k = {
        "A1c": int((~A1).sum()),
        "A2c": int((~A2).sum()),
        "At1c": int((~At1).sum()),
        "hit": int(hit.sum()),
        "A3c_given": int((given & ~A3).sum()),
    }
    p_A3 = k["A3c_given"] / n_given if n_given else float("nan")
    if n_given < MIN_CONDITIONING:
        warnings.append(f"conditioning event A1&A2 seen only {n_given} times; CI widened")
    ci = {
        "A1c": wilson(k["A1c"], n),
        "A2c": wilson(k["A2c"], n),
        "At1c": wilson(k["At1c"], n),
        "hit": wilson(k["hit"], n),
        "A3c_given": wilson(k["A3c_given"], n_given, alpha=0.01 if n_given < MIN_CONDITIONING else 0.05),
    }
    implied = 1.0 - (0.0 if math.isnan(p_A3) else p_A3) - k["A1c"] / n - k["A2c"] / n
    sigma = math.sqrt(
        _prop_se(k["hit"], n) ** 2
        + _prop_se(k["A1c"], n) ** 2
        + _prop_se(k["A2c"], n) ** 2
        + (_prop_se(k["A3c_given"], n_given) ** 2 if n_given else 0.0)
    )
    return EventProbReport(
        C=C, N=N, p=p, reps=reps,
        p_A1c=k["A1c"] / n, p_A2c=k["A2c"] / n, p_A3c_given=p_A3, p_At1c=k["At1c"] / n,
        p_hit=k["hit"] / n, implied_bound=implied, sigma=sigma, ci=ci, ci_method="wilson",
        n_given=n_given, invalid=bad, warnings=warnings,
    )


def psi_hit_exceedance(p: float, T: float, reps: int, seed: int = 0) -> tuple[float, float]:
    """Empirical ``P(H(Psi) > T)`` and its standard error."""
    batch = sample_blocking_batch(BlockingParams(p), reps, sampler_rng(seed))
    k = 0
    for r, a in enumerate(batch.configs()):
        k += hitting_time(a, p, derive_seed(seed, r), T).censored
    return k / reps, _prop_se(k, reps)



# ---------------------------------------------------------------- card laws


def card_state_law(start: Sequence[int], p: float, t: float, reps: int, states: Sequence,
                   seed: int = 0) -> np.ndarray:
    """Empirical law at time ``t`` of the continuous-time shuffle from
    ``start``, as frequencies over ``states`` (tuples of card labels)."""
    index = {tuple(s): i for i, s in enumerate(states)}
    counts = np.zeros(len(states))
    base = np.asarray(start, dtype=np.int64)
    for r in range(reps):
        arr = base.copy()
        K.cards_run(arr, EventStream(derive_seed(seed, r), p).key, p, 0.0, float(t))
        counts[index[tuple(int(c) for c in arr)]] += 1
    return counts / max(reps, 1)

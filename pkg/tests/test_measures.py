import json
import math

import numpy as np
import pytest
from scipy import stats

from asepshuffle.configs import (
    ParameterError,
    ZConfig,
    canonical_states,
    project_second_class,
    zero_erased_view,
)
from asepshuffle.measures import (
    BlockingOracle,
    BlockingParams,
    InitKind,
    blocking_marginal,
    blocking_sampler,
    dump_samples,
    point_mass_sampler,
    psi_tail_right,
    sample_blocking,
    sample_blocking_batch,
    sample_initial,
    sample_product,
    stationarity_check,
    truncation_window,
)
from asepshuffle.observables import run_beta
from asepshuffle.streams import derive_seed

# exact blocking-measure values from the window oracle
PSI_GROUND_P08 = 0.68854
MU_A_P08 = 0.39499
TAIL_P075 = [0.05479, 0.01843, 0.006163, 0.002057, 0.000686, 0.0002286, 7.62e-5, 2.54e-5]


def test_marginal_examples():
    assert blocking_marginal(0.8, 0) == 0.5
    assert blocking_marginal(2 / 3, 1) == pytest.approx(1 / 3)
    assert blocking_marginal(2 / 3, -1) == pytest.approx(2 / 3)
    i = np.arange(-30, 31)
    for p in (0.55, 0.75, 0.9):
        m = blocking_marginal(p, i)
        assert np.allclose(m + blocking_marginal(p, -i), 1.0)
        # strictly decreasing wherever the value is not rounded to 0 or 1
        inner = np.abs(i) <= 10
        assert np.all(np.diff(m[inner]) < 0)
    with pytest.raises(ParameterError):
        blocking_marginal(0.4, 1)


def test_truncation_window():
    assert truncation_window(0.8) == 20
    W = truncation_window(0.75)
    rho = 1 / 3
    assert 2 * rho ** (W + 1) / (1 - rho) < 1e-12 <= 2 * rho ** W / (1 - rho)


def test_oracle_frozen_values():
    orc = BlockingOracle(BlockingParams(0.8))
    assert orc.mass_A == pytest.approx(MU_A_P08, abs=1e-5)
    assert orc.prob(ZConfig()) == pytest.approx(PSI_GROUND_P08, abs=1e-5)
    assert orc.count_law().sum() == pytest.approx(1.0)
    orc = BlockingOracle(BlockingParams(0.75))
    for n, v in enumerate(TAIL_P075, start=1):
        assert orc.tail_right(n) == pytest.approx(v, rel=2e-3)


def test_ground_frequency_matches_oracle():
    n = 100000
    batch = sample_blocking_batch(BlockingParams(0.8), n, np.random.default_rng(41))
    ground = np.mean([row.tolist() == (np.arange(batch.lo, batch.lo + row.size) < 0).tolist()
                      for row in batch.values])
    q = BlockingOracle(BlockingParams(0.8)).prob(ZConfig())
    assert abs(ground - q) < 3 * math.sqrt(q * (1 - q) / n)
    assert batch.acceptance_rate == pytest.approx(MU_A_P08, abs=0.01)
    # the ground state is the largest atom
    keys, counts = np.unique(dump_samples(batch.configs()[:20000]).splitlines(), return_counts=True)
    assert keys[np.argmax(counts)] == "sites:{}"


def test_samples_in_A_and_window():
    params = BlockingParams(0.75)
    rng = np.random.default_rng(42)
    for _ in range(300):
        a = sample_blocking(params, rng)
        d = a.discrepancies
        assert sum(i < 0 for i in d) == sum(i >= 0 for i in d)
        if d:
            assert -params.window <= d[0] and d[-1] <= params.window


def test_pre_acceptance_marginals():
    params = BlockingParams(0.75)
    n = 100000
    x = sample_product(params, n, np.random.default_rng(43))
    W = params.window
    m = blocking_marginal(0.75, np.arange(-W, W + 1))
    obs = x.sum(axis=0)
    ok = (n * m > 5) & (n * (1 - m) > 5)
    chi2 = np.sum((obs[ok] - n * m[ok]) ** 2 / (n * m[ok] * (1 - m[ok])))
    assert stats.chi2.sf(chi2, ok.sum()) > 0.01


def test_conditioning_skews_marginals():
    params = BlockingParams(0.75)
    batch = sample_blocking_batch(params, 50000, np.random.default_rng(44))
    W = params.window
    emp = batch.values.mean(axis=0)
    m = blocking_marginal(0.75, np.arange(-W, W + 1))
    assert abs(emp[W + 1] - m[W + 1]) > 0.02


def test_tail_bounded_by_geometric():
    p = 0.75
    params = BlockingParams(p)
    batch = sample_blocking_batch(params, 2_000_000, np.random.default_rng(45))
    consts = [psi_tail_right(batch.values, batch.lo, n) / params.rho ** n for n in range(2, 9)]
    assert max(consts) / min(consts) < 2.0


def test_sigma0_projects_to_I_N():
    for N in (1, 4, 9):
        cfg = sample_initial(InitKind("sigma0", -N - 6, N + 6, N=N), 5)
        proj = project_second_class(cfg, "two_to_zero")
        assert proj.as_zconfig() == canonical_states("I_N", N)
        assert cfg.tagged == N - 1


def test_beta0_two_to_one_is_fair_iid():
    vals = np.concatenate([project_second_class(sample_initial(InitKind("beta0", -100, 100), s),
                                                "two_to_one").values for s in range(200)])
    n = len(vals)
    assert abs(vals.mean() - 0.5) < 3 * 0.5 / math.sqrt(n)
    r = np.corrcoef(vals[:-1], vals[1:])[0, 1]
    assert abs(r) < 3 / math.sqrt(n)


def test_beta0_zero_erased_is_shifted_ground():
    cfg = sample_initial(InitKind("beta0", -50, 50), 7)
    word, off = zero_erased_view(cfg)
    assert np.all(word[: off + 1] == 1) and np.all(word[off + 1:] == 0)


def test_gamma_shift():
    l = 5
    a = [sample_initial(InitKind("gamma0", -40, 40), derive_seed(46, s)).values[: 60].sum()
         for s in range(400)]
    b = [sample_initial(InitKind("gamma_l", -40 - l, 40, l=l), derive_seed(47, s)).values[: 60].sum()
         for s in range(400)]
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_fair_coins_window_independent():
    from asepshuffle.measures import fair_coins

    a = fair_coins(9, -10, 10)
    b = fair_coins(9, -3, 5)
    assert a[7:16].tolist() == b.tolist()


def test_stationarity_t0_trivial():
    rep = stationarity_check(blocking_sampler(BlockingParams(0.8)), "psi", 0.0, 4000, 0.8, seed=1)
    assert rep.passed


def test_stationarity_small_and_negative_control():
    p = 0.8
    rep = stationarity_check(blocking_sampler(BlockingParams(p)), "psi", 5.0, 20000, p, seed=2)
    assert rep.passed
    bad = stationarity_check(point_mass_sampler(canonical_states("I_N", 1)), "point", 5.0, 2000, p, seed=3)
    assert not bad.passed
    d = json.loads(rep.to_json())[0]
    assert set(d) == {"statistic", "p_value", "n", "pass"}


def _excess_holes(word, off, grid):
    # xi(i) = word[off + 1 + i] puts the ground state's ones at i < 0
    idx = np.arange(len(word)) - off - 1
    out = []
    for i in grid:
        holes = np.sum((word == 0) & (idx <= i))
        out.append(holes - max(i + 1, 0))
    return np.array(out)


def test_zero_erased_view_dominates_blocking_measure():
    p, t, n = 0.75, 5.0, 1500
    grid = np.arange(-6, 7)
    beta = np.array([_excess_holes(*zero_erased_view(run_beta(p, t, derive_seed(48, r)).state), grid)
                     for r in range(n)])
    W = BlockingParams(p).window
    batch = sample_blocking_batch(BlockingParams(p), n, np.random.default_rng(49))
    sites = np.arange(batch.lo, batch.lo + batch.values.shape[1])
    psi = np.array([[np.sum((row == 0) & (sites <= i)) - max(i + 1, 0) for i in grid]
                    for row in batch.values])
    # beta should have stochastically fewer excess holes; reject if it has more
    level = 0.01 / len(grid)
    for j in range(len(grid)):
        pv = stats.mannwhitneyu(beta[:, j], psi[:, j], alternative="greater").pvalue
        assert pv >= level

import math

import numpy as np
import pytest

from asepshuffle.configs import FiniteConfig, ParameterError, canonical_states
from asepshuffle.observables import card_state_law, hitting_time
from asepshuffle.oracle import (
    build_generator,
    card_weights,
    exact_expected_hitting,
    exact_mixing_time,
    spectral_gap,
    stationary_distribution,
    sup_tv,
    transition_matrix,
    tv_mixing_curve,
    two_state_tv,
    z_expected_hitting,
    z_hit_probability,
)
from asepshuffle.streams import derive_seed

# frozen oracle outputs
E_H_I1 = 3.1412493680
E_H_I2 = 9.7042188718
P_HIT_I1_T1 = 0.447803499
PI_CARDS3 = [0.38095, 0.19048, 0.19048, 0.09524, 0.09524, 0.04762]
TAU1_CARDS3 = 2.50452
GAPS_EX_N1 = [0.3876, 0.2994, 0.25, 0.2197, 0.1999, 0.1862, 0.1764]
TAU1_PAIRS = {(3, 0.5): (2.56466, 5), (3, 0.75): (2.43534, 5), (4, 0.5): (4.68658, 14),
              (4, 0.75): (4.62738, 14), (5, 0.5): (7.78791, 31), (5, 0.75): (7.18235, 29)}


def test_two_card_generator():
    space, gen = build_generator("cards", N=2, p=0.7)
    Q = gen.dense()
    i = space.states.index((2, 1))
    assert Q[i, 1 - i] == pytest.approx(0.7)
    assert Q[1 - i, i] == pytest.approx(0.3)


def test_single_particle_walk():
    space, gen = build_generator("exclusion", N=3, k=1, p=0.6)
    Q = gen.dense()
    idx = {str(s): j for j, s in enumerate(space.states)}
    assert Q[idx["010"], idx["100"]] == pytest.approx(0.6)
    assert Q[idx["010"], idx["001"]] == pytest.approx(0.4)
    assert Q[idx["100"], idx["001"]] == 0.0


@pytest.mark.parametrize("kind,args", [("cards", dict(N=4)), ("exclusion", dict(N=6, k=3)),
                                       ("metropolis", dict(N=4)), ("exclusion_discrete", dict(N=5, k=2))])
def test_row_sums(kind, args):
    _, gen = build_generator(kind, p=0.7, **args)
    target = 1.0 if gen.discrete else 0.0
    assert np.allclose(np.asarray(gen.matrix.sum(axis=1)).ravel(), target)


def test_uniform_at_half():
    for N in range(2, 6):
        space, gen = build_generator("cards", N=N, p=0.5)
        pi = stationary_distribution(gen, space)
        assert np.allclose(pi, 1 / len(pi))


def test_exclusion_stationary():
    space, gen = build_generator("exclusion", N=3, k=1, p=2 / 3)
    pi = stationary_distribution(gen)
    by = {str(s): v for s, v in zip(space.states, pi)}
    assert [by["100"], by["010"], by["001"]] == pytest.approx([4 / 7, 2 / 7, 1 / 7], abs=1e-12)


def test_card_stationary_weights():
    space, gen = build_generator("cards", N=3, p=2 / 3)
    pi = stationary_distribution(gen, space)
    assert np.abs(pi - card_weights(space, 2 / 3)).max() < 1e-12
    assert pi.tolist() == pytest.approx(PI_CARDS3, abs=1e-5)


def test_stationary_invariant_under_uniformization():
    _, gen = build_generator("cards", N=4, p=0.7)
    pi = stationary_distribution(gen)
    P, _ = transition_matrix(gen, 0.25)
    assert np.abs(pi @ P - pi).max() < 1e-10


def test_two_state_mixing():
    _, gen = build_generator("cards", N=2, p=0.7)
    curve = tv_mixing_curve(gen, [0.0, 0.5, 1.0, 2.0])
    assert curve.tv.tolist() == pytest.approx([two_state_tv(t) for t in (0.0, 0.5, 1.0, 2.0)], abs=1e-8)
    assert two_state_tv(0.5) == pytest.approx(math.exp(-0.5))
    assert exact_mixing_time(gen) == pytest.approx(1.0, rel=1e-5)
    assert spectral_gap(gen) == pytest.approx(1.0)
    assert curve.to_csv().splitlines()[0].startswith("t,")


@pytest.mark.parametrize("kind,args", [("cards", dict(N=4)), ("exclusion", dict(N=6, k=2))])
def test_curve_monotone(kind, args):
    _, gen = build_generator(kind, p=0.7, **args)
    curve = tv_mixing_curve(gen, np.linspace(0, 10, 21))
    assert np.all(np.diff(curve.tv) <= 1e-12)


def test_card_mixing_times():
    _, gen = build_generator("cards", N=3, p=2 / 3)
    assert exact_mixing_time(gen) == pytest.approx(TAU1_CARDS3, abs=1e-4)
    for (N, p), (tc, td) in TAU1_PAIRS.items():
        _, gc = build_generator("cards", N=N, p=p)
        _, gd = build_generator("cards_discrete", N=N, p=p)
        c, d = exact_mixing_time(gc), exact_mixing_time(gd)
        assert c == pytest.approx(tc, abs=1e-4)
        assert d == td
        assert d / c == pytest.approx(N - 1, rel=0.05)


def test_monte_carlo_tv_at_tau1():
    N, p = 4, 0.75
    space, gen = build_generator("cards", N=N, p=p)
    tau = exact_mixing_time(gen)
    i = len(space.states) - 1
    row = transition_matrix(gen, tau)[0][i]
    emp = card_state_law(space.states[i], p, tau, 100000, space.states, seed=51)
    assert 0.5 * np.abs(emp - row).sum() < 0.01


def test_exclusion_gaps():
    gaps = []
    for N in range(4, 11):
        _, gen = build_generator("exclusion", N=N, k=1, p=0.75)
        gaps.append(spectral_gap(gen))
    assert gaps == pytest.approx(GAPS_EX_N1, abs=1e-4)
    limit = 1 - 2 * math.sqrt(0.75 * 0.25)
    assert all(limit < g < 0.4 for g in gaps)


def test_gap_reflection_symmetry():
    for p in (0.3, 0.45, 0.6, 0.8):
        _, a = build_generator("exclusion", N=6, k=2, p=p)
        _, b = build_generator("exclusion", N=6, k=2, p=1 - p)
        assert spectral_gap(a) == pytest.approx(spectral_gap(b), rel=1e-9)
    _, g = build_generator("exclusion", N=6, k=2, p=0.3)
    assert spectral_gap(g) == pytest.approx(0.206275, abs=1e-6)


def test_expected_hitting_two_sites():
    space, gen = build_generator("exclusion", N=2, k=1, p=0.75)
    s = space.states.index(FiniteConfig((0, 1)))
    t = space.states.index(FiniteConfig((1, 0)))
    assert exact_expected_hitting(gen, s, t).value == pytest.approx(4 / 3)
    assert exact_expected_hitting(gen, t, t).value == 0.0


def test_z_hitting_frozen():
    sol = z_expected_hitting(canonical_states("I_N", 1), 0.75)
    assert sol.value == pytest.approx(E_H_I1, abs=1e-8)
    assert sol.boundary_prob < 1e-9
    assert z_expected_hitting(canonical_states("I_N", 2), 0.75).value == pytest.approx(E_H_I2, abs=1e-7)
    prob, cut = z_hit_probability(canonical_states("I_N", 1), 0.75, 1.0)
    assert prob == pytest.approx(P_HIT_I1_T1, abs=1e-8)


def test_z_hitting_matches_simulation():
    n = 100000
    start = canonical_states("I_N", 1)
    h = np.array([hitting_time(start, 0.75, derive_seed(52, r)).value for r in range(n)])
    assert abs(h.mean() - E_H_I1) < 3 * h.std(ddof=1) / math.sqrt(n)


def test_sup_tv_of_identity():
    assert sup_tv(np.eye(3)) == 1.0
    assert sup_tv(np.full((3, 3), 1 / 3)) == pytest.approx(0.0)


def test_enumeration_limits():
    with pytest.raises(ParameterError):
        build_generator("cards", N=9, p=0.7)
    with pytest.raises(ParameterError):
        build_generator("exclusion", N=4, k=4, p=0.7)
    with pytest.raises(ParameterError):
        build_generator("bogus", p=0.7)

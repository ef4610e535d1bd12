import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asepshuffle.configs import (
    FiniteConfig,
    Permutation,
    SecondClassConfig,
    ZConfig,
    canonical_states,
    height_projection,
    project_second_class,
)
from asepshuffle.dynamics import (
    ProcessKind,
    active_edges,
    apply_metropolis_step,
    apply_sort_event,
    run_continuous,
    run_discrete,
    run_thinned,
    trajectory_records,
)
from asepshuffle.measures import InitKind, sample_initial
from asepshuffle.observables import hitting_time
from asepshuffle.oracle import build_generator, z_hit_probability
from asepshuffle.streams import DiscreteStream, EventStream, derive_seed

GOLDEN_N4 = ["4,3,2,1", "4,3,1,2", "4,1,3,2", "1,4,3,2", "1,4,3,2", "1,3,4,2",
             "3,1,4,2", "1,3,4,2", "1,3,4,2", "1,3,4,2", "1,3,4,2"]


def test_sort_event_examples():
    assert apply_sort_event(Permutation((1, 5, 3, 2, 4)), 2, "H").entries == (1, 3, 5, 2, 4)
    assert apply_sort_event(Permutation((1, 5, 3, 2, 4)), 2, "T").entries == (1, 5, 3, 2, 4)
    assert apply_sort_event(FiniteConfig((0, 1)), 1, "H").bits == (1, 0)
    assert apply_sort_event(FiniteConfig((0, 1)), 1, "T").bits == (0, 1)
    d = apply_sort_event(SecondClassConfig(0, [2, 1]), 0, "H")
    assert d.values.tolist() == [1, 2]
    d = apply_sort_event(SecondClassConfig(0, [1, 2]), 0, "T")
    assert d.values.tolist() == [2, 1]
    d = apply_sort_event(SecondClassConfig(0, [1, 1]), 0, "T")
    assert d.values.tolist() == [1, 1]


def test_metropolis_examples():
    pi = Permutation((1, 5, 3, 2, 4))
    for u in (0.0, 0.5, 0.999):
        assert apply_metropolis_step(pi, 2, u, 0.75).entries == (1, 3, 5, 2, 4)
    inc = Permutation((1, 3, 5, 2, 4))
    assert apply_metropolis_step(inc, 2, 0.9, 0.75) == inc
    assert apply_metropolis_step(inc, 2, 0.2, 0.75).entries == (1, 5, 3, 2, 4)


def test_metropolis_half_is_lazy_free_version_of_biased_shuffle():
    # at theta = 1 every chosen pair swaps; the p = 1/2 sorting chain keeps
    # the pair with probability 1/2, so it is the lazy version
    _, gm = build_generator("metropolis", N=3, p=0.5)
    _, gc = build_generator("cards_discrete", N=3, p=0.5)
    PM, PC = gm.dense(), gc.dense()
    assert np.allclose(PC, 0.5 * (np.eye(6) + PM))
    # and the one-step matrix of the move function matches the oracle
    states = list(itertools.permutations(range(1, 4)))
    idx = {s: i for i, s in enumerate(states)}
    P = np.zeros((6, 6))
    for s in states:
        for e in (1, 2):
            P[idx[s], idx[apply_metropolis_step(Permutation(s), e, 0.5, 0.5).entries]] += 0.5
    assert np.allclose(P, PM)


def test_run_discrete_zero_steps():
    pi = Permutation((2, 3, 1))
    assert run_discrete(pi, 0, DiscreteStream(1, 0.7, 2)) == pi


def test_run_discrete_two_cards_one_step():
    p, n = 0.75, 100000
    sorted_count = sum(
        run_discrete(Permutation((2, 1)), 1, DiscreteStream(derive_seed(21, r), p, 1)).entries == (1, 2)
        for r in range(n))
    assert abs(sorted_count / n - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_golden_trajectory():
    s = DiscreteStream(20240601, 0.75, 3)
    pi = canonical_states("reversed_perm", 4)
    traj = [str(pi)]
    for n in range(10):
        pi = run_discrete(pi, 1, s, start=n)
        traj.append(str(pi))
    assert traj == GOLDEN_N4
    assert str(run_discrete(canonical_states("reversed_perm", 4), 10, s)) == GOLDEN_N4[-1]


def test_run_continuous_zero_horizon():
    for st0 in (Permutation((3, 1, 2)), FiniteConfig((0, 1, 1)), canonical_states("I_N", 2)):
        assert run_continuous(st0, 0.0, EventStream(3, 0.7)) == st0


def test_two_site_exclusion_law():
    p, t, n = 0.75, 0.8, 100000
    hits = sum(run_continuous(FiniteConfig((0, 1)), t, EventStream(derive_seed(22, r), p)).bits == (1, 0)
               for r in range(n))
    q = p * (1 - math.exp(-t))
    assert abs(hits / n - q) < 3 * math.sqrt(q * (1 - q) / n)


def test_hit_by_time_one_matches_oracle():
    p, n = 0.75, 100000
    exact, cut = z_hit_probability(canonical_states("I_N", 1), p, 1.0)
    start = canonical_states("I_N", 1)
    hits = sum(not hitting_time(start, p, derive_seed(23, r), cap=1.0).censored for r in range(n))
    assert abs(hits / n - exact) < 3 * math.sqrt(exact * (1 - exact) / n) + cut


def test_active_edges():
    assert active_edges(canonical_states("ground_Z")) == {-1}
    assert active_edges(SecondClassConfig(0, [1, 1, 1])) == set()
    for N in (1, 2, 5):
        a = canonical_states("I_N", N)
        scan = {i for i in range(-N - 3, N + 3) if a[i] != a[i + 1]}
        assert active_edges(a) == scan


z_states = st.lists(st.integers(-6, -1), max_size=4, unique=True).flatmap(
    lambda h: st.lists(st.integers(0, 5), min_size=len(h), max_size=len(h), unique=True).map(
        lambda q: ZConfig(tuple(h) + tuple(q))))


@settings(max_examples=100, deadline=None)
@given(z_states, st.integers(-8, 7), st.booleans())
def test_z_events(a, edge, heads):
    b = apply_sort_event(a, edge, heads)
    assert b == apply_sort_event(a, edge, heads)
    if edge not in active_edges(a):
        assert b == a
    # A-closure is enforced by the constructor; the count of holes left of 0
    # equals the count of particles right of it
    d = b.discrepancies
    assert sum(i < 0 for i in d) == sum(i >= 0 for i in d)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=2, max_size=12).filter(lambda b: 0 < sum(b) < len(b)),
       st.data())
def test_finite_events_conserve(bits, data):
    x = FiniteConfig(tuple(bits))
    e = data.draw(st.integers(1, x.N - 1))
    y = apply_sort_event(x, e, data.draw(st.booleans()))
    assert y.k == x.k
    if e not in active_edges(x):
        assert y == x


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=2, max_size=15), st.data())
def test_second_class_events(vals, data):
    d = SecondClassConfig(-3, vals)
    e = data.draw(st.integers(d.lo, d.hi - 1))
    heads = data.draw(st.booleans())
    out = apply_sort_event(d, e, heads)
    assert np.sum(out.values == 1) == np.sum(d.values == 1)
    assert np.sum(out.values == 2) == np.sum(d.values == 2)
    for mode in ("two_to_one", "two_to_zero"):
        lhs = project_second_class(out, mode).values
        rhs = apply_sort_event(project_second_class(d, mode), e, heads).values
        assert lhs.tolist() == rhs.tolist()


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 8).flatmap(lambda n: st.permutations(list(range(1, n + 1)))), st.data())
def test_card_projection_commutes(entries, data):
    pi = Permutation(tuple(entries))
    e = data.draw(st.integers(1, pi.N - 1))
    heads = data.draw(st.booleans())
    out = apply_sort_event(pi, e, heads)
    for k in range(1, pi.N):
        assert height_projection(out, k) == apply_sort_event(height_projection(pi, k), e, heads)


def test_hook_order_and_records():
    rows = trajectory_records(Permutation((3, 2, 1)), 2.0, EventStream(8, 0.6))
    times = [float(r.split(",")[0]) for r in rows]
    assert times == sorted(times)
    assert all(r.split(",")[2] in ("H", "T") for r in rows)
    # the hooked run and the kernel run end in the same state
    last = ",".join(rows[-1].split(",")[3:])
    assert last == str(run_continuous(Permutation((3, 2, 1)), 2.0, EventStream(8, 0.6)))


@pytest.mark.parametrize("state", [
    FiniteConfig((0, 1, 1, 0, 1, 0, 0)),
    canonical_states("I_N", 3),
    canonical_states("reversed_perm", 6),
], ids=["finite", "Z", "cards"])
def test_kernel_matches_reference_path(state):
    # a hook forces the pure-Python path; both read the same stream
    for seed in range(20):
        ref = run_continuous(state, 7.0, EventStream(seed, 0.7), hook=lambda *a: None)
        assert ref == run_continuous(state, 7.0, EventStream(seed, 0.7))


def test_window_kernel_matches_reference_path():
    delta = sample_initial(InitKind("beta0", -40, 40), 3)
    for seed in range(10):
        ref = run_continuous(delta, 3.0, EventStream(seed, 0.7), hook=lambda *a: None)
        out = run_continuous(delta, 3.0, EventStream(seed, 0.7))
        assert np.array_equal(ref.values, out.values)


def test_thinned_matches_clocks_in_law():
    p, t, n = 0.75, 0.8, 20000
    rng = np.random.default_rng(9)
    hits = sum(run_thinned(FiniteConfig((0, 1)), t, p, rng).bits == (1, 0) for _ in range(n))
    q = p * (1 - math.exp(-t))
    assert abs(hits / n - q) < 4 * math.sqrt(q * (1 - q) / n)


def test_process_kind_validation():
    with pytest.raises(ValueError):
        ProcessKind("Metropolis", 0.3)
    with pytest.raises(ValueError):
        ProcessKind("EX_finite", 0.6, N=3, k=3)
    assert ProcessKind("CA_continuous", 0.75).theta == pytest.approx(1 / 3)

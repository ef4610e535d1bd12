"""Decks, particle configurations, canonical states, orders and projections."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class ParameterError(ValueError):
    """Invalid size, particle count or probability."""


class ReconstructionError(ValueError):
    """A family of height projections that no permutation produces."""


class StateError(ValueError):
    """A configuration outside the domain of an operation."""


def ground_value(i: int) -> int:
    return 1 if i < 0 else 0


@dataclass(frozen=True)
class Permutation:
    """Deck arrangement: position ``i`` (1-based) holds card ``entries[i-1]``."""

    entries: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(int(c) for c in self.entries))
        n = len(self.entries)
        if n < 1 or sorted(self.entries) != list(range(1, n + 1)):
            raise ParameterError(f"not a permutation of 1..{n}: {self.entries}")

    @property
    def N(self) -> int:
        return len(self.entries)

    def inversions(self) -> int:
        e = self.entries
        return sum(1 for i in range(len(e)) for j in range(i + 1, len(e)) if e[i] > e[j])

    def __str__(self) -> str:
        return ",".join(map(str, self.entries))

    @classmethod
    def parse(cls, text: str) -> "Permutation":
        return cls(tuple(int(t) for t in text.strip().split(",")))


@dataclass(frozen=True)
class FiniteConfig:
    """Element of X_{N,k}: a 0/1 word of length N with k ones."""

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        object.__setattr__(self, "bits", bits)
        if any(b not in (0, 1) for b in bits):
            raise ParameterError(f"bits must be 0/1: {bits}")
        if not 1 <= sum(bits) < len(bits):
            raise ParameterError(f"need 1 <= k < N, got k={sum(bits)}, N={len(bits)}")

    @property
    def N(self) -> int:
        return len(self.bits)

    @property
    def k(self) -> int:
        return sum(self.bits)

    def __str__(self) -> str:
        return "".join(map(str, self.bits))

    @classmethod
    def parse(cls, text: str) -> "FiniteConfig":
        return cls(tuple(int(c) for c in text.strip()))


_SITE_RE = re.compile(r"\(\s*(-?\d+)\s*,\s*([01])\s*\)")


@dataclass(frozen=True)
class ZConfig:
    """Configuration in A, stored as its sorted set of discrepancies with G_Z."""

    discrepancies: tuple[int, ...] = ()

    def __post_init__(self):
        d = tuple(sorted(set(int(i) for i in self.discrepancies)))
        object.__setattr__(self, "discrepancies", d)
        holes = sum(1 for i in d if i < 0)
        if holes != len(d) - holes:
            raise StateError(
                f"not in A: {holes} holes left of 0 vs {len(d) - holes} particles right of it"
            )

    def __getitem__(self, i: int) -> int:
        return ground_value(i) ^ (1 if i in self._set else 0)

    @property
    def _set(self) -> frozenset:
        s = self.__dict__.get("_cached_set")
        if s is None:
            s = frozenset(self.discrepancies)
            object.__setattr__(self, "_cached_set", s)
        return s

    @property
    def is_ground(self) -> bool:
        return not self.discrepancies

    def hull(self) -> tuple[int, int] | None:
        if not self.discrepancies:
            return None
        return self.discrepancies[0], self.discrepancies[-1]

    def to_dense(self, lo: int, hi: int) -> np.ndarray:
        """Values on sites ``lo..hi`` as an int8 array."""
        out = np.array([ground_value(i) for i in range(lo, hi + 1)], dtype=np.int8)
        for i in self.discrepancies:
            if lo <= i <= hi:
                out[i - lo] ^= 1
            else:
                raise StateError(f"discrepancy at {i} outside [{lo}, {hi}]")
        return out

    @classmethod
    def from_dense(cls, values: Sequence[int], lo: int) -> "ZConfig":
        vals = np.asarray(values)
        sites = np.nonzero(vals != (np.arange(lo, lo + len(vals)) < 0))[0] + lo
        return cls(tuple(int(i) for i in sites))

    def energy(self) -> int:
        """Number of (hole, particle) pairs with the hole to the left."""
        if not self.discrepancies:
            return 0
        lo, hi = min(self.discrepancies[0], -1), max(self.discrepancies[-1], 0)
        holes = 0
        e = 0
        for v in self.to_dense(lo, hi):
            if v == 0:
                holes += 1
            else:
                e += holes
        return e

    def __str__(self) -> str:
        body = ",".join(f"({i},{self[i]})" for i in self.discrepancies)
        return "sites:{" + body + "}"

    @classmethod
    def parse(cls, text: str) -> "ZConfig":
        text = text.strip()
        if not (text.startswith("sites:{") and text.endswith("}")):
            raise ValueError(f"malformed ZConfig: {text!r}")
        sites = []
        for m in _SITE_RE.finditer(text):
            i, v = int(m.group(1)), int(m.group(2))
            if v == ground_value(i):
                raise ValueError(f"site {i} value {v} is not a discrepancy")
            sites.append(i)
        return cls(tuple(sites))


BOUNDARIES = ("ones", "zeros", "sample01", "sample02")


@dataclass
class SecondClassConfig:
    """{0,1,2} configuration on the window ``[lo, lo+len(values)-1]``.

    ``left``/``right`` declare what lies outside the window: all ones, all
    zeros, or a frozen i.i.d. sample over {0,1} or {0,2} that is never read.
    """

    lo: int
    values: np.ndarray
    left: str = "ones"
    right: str = "zeros"
    tagged: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int8)
        if self.values.ndim != 1 or len(self.values) == 0:
            raise StateError("window must be nonempty")
        if np.any((self.values < 0) | (self.values > 2)):
            raise StateError("values must lie in {0,1,2}")
        for b in (self.left, self.right):
            if b not in BOUNDARIES:
                raise StateError(f"unknown boundary {b!r}")
        if self.tagged is not None and self[self.tagged] == 0:
            raise StateError(f"tagged site {self.tagged} holds no particle")

    @property
    def hi(self) -> int:
        return self.lo + len(self.values) - 1

    def __getitem__(self, i: int) -> int:
        if not self.lo <= i <= self.hi:
            raise StateError(f"site {i} outside window [{self.lo}, {self.hi}]")
        return int(self.values[i - self.lo])

    def copy(self) -> "SecondClassConfig":
        return SecondClassConfig(
            self.lo, self.values.copy(), self.left, self.right, self.tagged, dict(self.meta)
        )

    def as_zconfig(self) -> ZConfig:
        """The same configuration as an element of A (0/1 values, ones left,
        zeros right)."""
        if self.left != "ones" or self.right != "zeros" or np.any(self.values == 2):
            raise StateError("only 0/1 windows with ones left and zeros right lie in A")
        return ZConfig.from_dense(self.values, self.lo)


def _check_nk(N: int, k: int | None = None):
    if N < 1:
        raise ParameterError(f"N must be >= 1, got {N}")
    if k is not None and not 1 <= k < N:
        raise ParameterError(f"need 1 <= k < N, got N={N}, k={k}")


def canonical_states(kind: str, N: int | None = None, k: int | None = None):
    """Named states: ``ground_Z``, ``I_N``, ``g_finite``, ``m_finite``,
    ``identity_perm``, ``reversed_perm``."""
    if kind == "ground_Z":
        return ZConfig()
    if N is None:
        raise ParameterError(f"{kind} needs N")
    if kind == "I_N":
        _check_nk(N)
        return ZConfig(tuple(range(-N, N)))
    if kind == "g_finite":
        _check_nk(N, k)
        return FiniteConfig((1,) * k + (0,) * (N - k))
    if kind == "m_finite":
        _check_nk(N, k)
        return FiniteConfig((0,) * (N - k) + (1,) * k)
    if kind == "identity_perm":
        _check_nk(N)
        return Permutation(tuple(range(1, N + 1)))
    if kind == "reversed_perm":
        _check_nk(N)
        return Permutation(tuple(range(N, 0, -1)))
    raise ParameterError(f"unknown canonical state {kind!r}")


def height_projection(pi: Permutation, k: int) -> FiniteConfig:
    """``h_k``: bit i is 1 iff the card at position i is at most k."""
    _check_nk(pi.N, k)
    return FiniteConfig(tuple(1 if c <= k else 0 for c in pi.entries))


def reconstruct_permutation(configs: Sequence[FiniteConfig]) -> Permutation:
    """Inverse of ``(h_1, ..., h_{N-1})``."""
    if not configs:
        raise ReconstructionError("empty family")
    N = configs[0].N
    if len(configs) != N - 1:
        raise ReconstructionError(f"need {N - 1} projections, got {len(configs)}")
    levels = [cfg.bits for cfg in configs] + [(1,) * N]
    prev = (0,) * N
    card = [0] * N
    for k, bits in enumerate(levels, start=1):
        if len(bits) != N or sum(bits) != k:
            raise ReconstructionError(f"projection {k} has wrong size or count")
        new = [i for i in range(N) if bits[i] and not prev[i]]
        if any(p and not b for p, b in zip(prev, bits)) or len(new) != 1:
            raise ReconstructionError(f"projections {k - 1} and {k} are not nested")
        card[new[0]] = k
        prev = bits
    return Permutation(tuple(card))


def _prefix_ge(ca: np.ndarray, cb: np.ndarray) -> bool:
    return bool(np.all(ca >= cb))


def _excess_holes(a: ZConfig, sites: np.ndarray) -> np.ndarray:
    """Cumulative holes minus those of G_Z, evaluated at each site in ``sites``."""
    d = np.asarray(a.discrepancies, dtype=np.int64)
    step = np.where(d < 0, 1, -1)
    csum = np.concatenate([[0], np.cumsum(step)])
    return csum[np.searchsorted(d, sites, side="right")]


def dominates(a, b) -> bool:
    """``a ⪰ b`` in the order of the configuration type."""
    if isinstance(a, FiniteConfig) and isinstance(b, FiniteConfig):
        if a.N != b.N or a.k != b.k:
            raise ParameterError("finite order needs equal N and k")
        return _prefix_ge(np.cumsum(a.bits), np.cumsum(b.bits))
    if isinstance(a, ZConfig) and isinstance(b, ZConfig):
        sites = np.array(sorted(set(a.discrepancies) | set(b.discrepancies)), dtype=np.int64)
        if len(sites) == 0:
            return True
        # fewer cumulative holes everywhere, i.e. more cumulative particles
        return _prefix_ge(-_excess_holes(a, sites), -_excess_holes(b, sites))
    raise TypeError(f"cannot compare {type(a).__name__} with {type(b).__name__}")


def embed_hat(x: FiniteConfig, k: int | None = None) -> ZConfig:
    """Embed X_{N,k} in A: position j of x goes to site j-k-1."""
    k = x.k if k is None else k
    if k != x.k:
        raise ParameterError(f"x has {x.k} particles, not {k}")
    vals = np.array(x.bits, dtype=np.int8)
    return ZConfig.from_dense(vals, -k)


def leftmost_hole(a: ZConfig) -> int:
    i = min(a.discrepancies[0], 0) if a.discrepancies else 0
    while a[i] != 0:
        i += 1
    return i


def rightmost_particle(a: ZConfig) -> int:
    i = max(a.discrepancies[-1], -1) if a.discrepancies else -1
    while a[i] != 1:
        i -= 1
    return i


_PROJ_BOUNDARY = {
    "two_to_one": {"ones": "ones", "zeros": "zeros", "sample01": "sample01", "sample02": "sample01"},
    "two_to_zero": {"ones": "ones", "zeros": "zeros", "sample01": "sample01", "sample02": "zeros"},
}


def project_values(values: np.ndarray, mode: str) -> np.ndarray:
    if mode == "two_to_one":
        return (values > 0).astype(np.int8)
    if mode == "two_to_zero":
        return (values == 1).astype(np.int8)
    raise ValueError(f"unknown projection {mode!r}")


def project_second_class(delta: SecondClassConfig, mode: str) -> SecondClassConfig:
    """Relabel 2's as 1's (``two_to_one``) or as 0's (``two_to_zero``)."""
    vals = project_values(delta.values, mode)
    tagged = delta.tagged
    if tagged is not None and vals[tagged - delta.lo] == 0:
        tagged = None
    return SecondClassConfig(
        delta.lo,
        vals,
        _PROJ_BOUNDARY[mode][delta.left],
        _PROJ_BOUNDARY[mode][delta.right],
        tagged,
    )


def tagged_site(delta: SecondClassConfig) -> int:
    """Site of the tagged particle: the declared one, else the u_0(0) rule.

    The rightmost first-class particle when it exists (right boundary free of
    first-class particles); otherwise the rightmost particle left of 0.
    """
    if delta.tagged is not None:
        return delta.tagged
    ones = np.nonzero(delta.values == 1)[0]
    if delta.right in ("zeros", "sample02") and len(ones):
        return int(ones[-1]) + delta.lo
    occupied = np.nonzero(delta.values > 0)[0] + delta.lo
    occupied = occupied[occupied < 0]
    if len(occupied) == 0:
        raise StateError("no particle left of 0 to tag")
    return int(occupied[-1])


def zero_erased_view(delta: SecondClassConfig) -> tuple[np.ndarray, int]:
    """Erase empty sites, map 2->0 and 1->1.

    Returns ``(word, offset)`` where ``word[offset]`` is the tagged particle,
    so index ``j - offset`` is the particle index of ``word[j]``.
    """
    occ = np.nonzero(delta.values > 0)[0]
    if len(occ) == 0:
        raise StateError("no particles in window")
    tag = tagged_site(delta)
    word = (delta.values[occ] == 1).astype(np.int8)
    offset = int(np.searchsorted(occ, tag - delta.lo))
    return word, offset


def particle_locations(delta: SecondClassConfig, n_left: int, n_right: int) -> dict[int, int]:
    """Locations u(n) of particles by index relative to the tagged one,
    for ``-n_left <= n <= n_right``, built by the nearest-particle recursion."""
    tag = tagged_site(delta)
    out = {0: tag}
    i = tag
    for n in range(1, n_right + 1):
        i += 1
        while delta[i] == 0:
            i += 1
        out[n] = i
    i = tag
    for n in range(1, n_left + 1):
        i -= 1
        while delta[i] == 0:
            i -= 1
        out[-n] = i
    return out


def prefix_dominates_words(a: Iterable[int], b: Iterable[int]) -> bool:
    """Finite-word order: every prefix of ``a`` holds at least as many ones."""
    return _prefix_ge(np.cumsum(list(a)), np.cumsum(list(b)))

"""Mode truncation and excitation-conserving Fock subspaces.

A subspace with ``K`` kept modes and total excitation ``M`` holds every
``(spin, n)`` with ``spin + sum(n) == M``.  States are ordered with the
spin-ground block first, then the spin-excited block; inside each block the
occupation tuples run in colexicographic order (the last mode varies
slowest).  Ranking is pure integer arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Iterator

import numpy as np

GROUND, EXCITED = 0, 1

DEFAULT_MAX_DIMENSION = 2_000_000


class SubspaceError(ValueError):
    pass


@dataclass(frozen=True)
class ModeSubset:
    kept: tuple[int, ...]
    weights: tuple[float, ...]

    @property
    def size(self) -> int:
        return len(self.kept)


def mode_weights(lambdas, relative_freqs, detuning: float) -> np.ndarray:
    """Truncation weight (lambda_k / (detuning - omega_k))**2 per mode.

    An exactly resonant coupled mode gets ``inf`` so it is always kept.
    """
    lam = np.asarray(lambdas, dtype=float)
    gap = detuning - np.asarray(relative_freqs, dtype=float)
    w = np.zeros_like(lam)
    coupled = lam != 0
    resonant = coupled & (gap == 0)
    regular = coupled & ~resonant
    w[regular] = (lam[regular] / gap[regular]) ** 2
    w[resonant] = np.inf
    return w


def select_modes(weights, k: int, gaps=None) -> ModeSubset:
    """Keep the ``k`` heaviest modes.

    Ties go to the smaller ``|gap|`` (when given), then to the lower index.
    """
    w = np.asarray(weights, dtype=float)
    n = len(w)
    if not 1 <= k <= n:
        raise SubspaceError(f"K must lie in [1, {n}], got {k}")
    g = np.zeros(n) if gaps is None else np.abs(np.asarray(gaps, dtype=float))
    order = sorted(range(n), key=lambda i: (-w[i], g[i], i))[:k]
    return ModeSubset(tuple(order), tuple(float(w[i]) for i in order))


def block_size(k: int, total: int) -> int:
    """Number of occupation tuples of length ``k`` summing to ``total``."""
    if total < 0:
        return 0
    return comb(total + k - 1, k - 1)


def subspace_dimension(k: int, m: int) -> int:
    return block_size(k, m) + block_size(k, m - 1)


def _rank_occupations(occ, total) -> int:
    # colex rank: count tuples that agree above position j and are smaller at j
    r = 0
    rest = total
    for j in range(len(occ) - 1, 0, -1):
        a = occ[j]
        if a:
            r += comb(rest + j, j) - comb(rest - a + j, j)
        rest -= a
    return r


def _unrank_occupations(r, k, total) -> tuple[int, ...]:
    occ = [0] * k
    rest = total
    for j in range(k - 1, 0, -1):
        a = 0
        # tuples with value a at position j: comb(rest - a + j - 1, j - 1)
        while True:
            c = comb(rest - a + j - 1, j - 1)
            if r < c:
                break
            r -= c
            a += 1
        occ[j] = a
        rest -= a
    occ[0] = rest
    return tuple(occ)


def _colex_occupations(k, total) -> Iterator[tuple[int, ...]]:
    if k == 1:
        yield (total,)
        return
    for last in range(total + 1):
        for head in _colex_occupations(k - 1, total - last):
            yield head + (last,)


class Subspace:
    """Basis of one conserved-excitation sector.

    ``occupations`` is an integer array of shape ``(D, K)`` and ``spins`` a
    length-``D`` array of 0 (ground) / 1 (excited).
    """

    def __init__(self, k: int, m: int, max_dimension: int = DEFAULT_MAX_DIMENSION):
        if k < 1 or m < 0:
            raise SubspaceError(f"invalid subspace K={k}, M={m}")
        self.K = k
        self.M = m
        self.ground_size = block_size(k, m)
        self.excited_size = block_size(k, m - 1)
        self.dimension = self.ground_size + self.excited_size
        if self.dimension > max_dimension:
            raise SubspaceError(
                f"subspace K={k}, M={m} has dimension {self.dimension} above cap {max_dimension}"
            )
        occ = np.zeros((self.dimension, k), dtype=np.int64)
        for i, n in enumerate(_colex_occupations(k, m)):
            occ[i] = n
        if m >= 1:
            for i, n in enumerate(_colex_occupations(k, m - 1)):
                occ[self.ground_size + i] = n
        occ.setflags(write=False)
        self.occupations = occ
        spins = np.zeros(self.dimension, dtype=np.int8)
        spins[self.ground_size:] = EXCITED
        spins.setflags(write=False)
        self.spins = spins

    def __len__(self):
        return self.dimension

    def __repr__(self):
        return f"Subspace(K={self.K}, M={self.M}, D={self.dimension})"

    def rank(self, spin: int, occupations) -> int:
        occ = tuple(int(x) for x in occupations)
        if len(occ) != self.K or min(occ) < 0 or spin not in (GROUND, EXCITED):
            raise SubspaceError(f"({spin}, {occ}) is not a state of {self!r}")
        total = self.M - spin
        if sum(occ) != total:
            raise SubspaceError(f"({spin}, {occ}) does not carry {self.M} excitations")
        r = _rank_occupations(occ, total)
        return r if spin == GROUND else self.ground_size + r

    def unrank(self, r: int) -> tuple[int, tuple[int, ...]]:
        if not 0 <= r < self.dimension:
            raise SubspaceError(f"rank {r} outside [0, {self.dimension})")
        if r < self.ground_size:
            return GROUND, _unrank_occupations(r, self.K, self.M)
        return EXCITED, _unrank_occupations(r - self.ground_size, self.K, self.M - 1)


def enumerate_subspace(k: int, m: int, max_dimension: int = DEFAULT_MAX_DIMENSION) -> Subspace:
    return Subspace(k, m, max_dimension)

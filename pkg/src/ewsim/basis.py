"""Fixed-particle-number Fock bases and lattice symmetry bookkeeping.

Occupations are packed into integers: site i (1-based) lives on bit i-1,
so the pattern |1100> (sites 1,2 occupied out of L=4) is the integer 3.
All modules share this convention.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np

MAX_SITES = 64


class BasisError(ValueError):
    """Invalid sector parameters or out-of-sector lookup."""


def bit_pattern(sites: tuple[int, ...] | list[int]) -> int:
    """Pack 1-based occupied site indices into the integer encoding."""
    bits = 0
    for s in sites:
        bits |= 1 << (s - 1)
    return bits


def occupations(bits: int, L: int) -> np.ndarray:
    """Length-L 0/1 vector, entry i-1 = occupation of site i."""
    return np.array([(bits >> i) & 1 for i in range(L)], dtype=np.int8)


def format_state(bits: int, L: int) -> str:
    """Ket string with site 1 leftmost, e.g. 3 -> '1100' at L=4."""
    return "".join(str((bits >> i) & 1) for i in range(L))


def translate(bits: int, L: int) -> int:
    """Shift every occupation one site up (site i -> i+1, cyclic)."""
    mask = (1 << L) - 1
    return ((bits << 1) | (bits >> (L - 1))) & mask


def reflect(bits: int, L: int) -> int:
    """Mirror the chain: site i -> L+1-i."""
    out = 0
    for i in range(L):
        if (bits >> i) & 1:
            out |= 1 << (L - 1 - i)
    return out


@dataclass(frozen=True)
class SectorBasis:
    """All binomial(L, N) occupation patterns of one U(1) sector.

    ``states`` is sorted ascending by integer value; ``index`` is the inverse
    map (binary search).  Immutable and safe to share across workers.
    """

    L: int
    N: int
    states: np.ndarray  # uint64, sorted ascending

    @property
    def dimension(self) -> int:
        return len(self.states)

    def index(self, bits: int) -> int:
        """Ordinal of ``bits`` within the sector; BasisError if absent."""
        k = int(np.searchsorted(self.states, np.uint64(bits)))
        if k >= len(self.states) or int(self.states[k]) != bits:
            raise BasisError(
                f"state {bits:#x} not in sector (L={self.L}, N={self.N})"
            )
        return k

    def contains(self, bits: int) -> bool:
        k = int(np.searchsorted(self.states, np.uint64(bits)))
        return k < len(self.states) and int(self.states[k]) == bits

    def index_array(self, bits: np.ndarray) -> np.ndarray:
        """Vectorized lookup; caller guarantees membership."""
        return np.searchsorted(self.states, bits)


_sector_cache: dict[tuple[int, int], SectorBasis] = {}


def enumerate_sector(L: int, N: int) -> SectorBasis:
    """Enumerate the (L, N) sector, ascending, with O(log D) lookup.

    Rejects L > 64 or N outside [0, L].  Results are cached and shared.
    """
    if not (0 < L <= MAX_SITES):
        raise BasisError(f"L={L} outside 1..{MAX_SITES}")
    if not (0 <= N <= L):
        raise BasisError(f"N={N} outside 0..L={L}")
    key = (L, N)
    if key in _sector_cache:
        return _sector_cache[key]
    dim = comb(L, N)
    if N == 0:
        states = np.zeros(1, dtype=np.uint64)
    else:
        pos = np.fromiter(
            itertools.chain.from_iterable(itertools.combinations(range(L), N)),
            dtype=np.uint64,
            count=dim * N,
        ).reshape(dim, N)
        states = np.sort((np.uint64(1) << pos).sum(axis=1, dtype=np.uint64))
    basis = SectorBasis(L=L, N=N, states=states)
    _sector_cache[key] = basis
    return basis


def rank_state(basis: SectorBasis, bits: int) -> int:
    """Ordinal k with basis.states[k] == bits (error if out of sector)."""
    return basis.index(bits)


@dataclass(frozen=True)
class Orbit:
    """One symmetry orbit: minimal-integer representative plus bookkeeping.

    For translation orbits ``period`` is the smallest R > 0 with
    T^R|s> = |s>; for reflection orbits ``period`` is 1 for palindromes
    and 2 otherwise.
    """

    representative: int
    period: int


@dataclass(frozen=True)
class SymmetrySector:
    """Orbit decomposition of a SectorBasis under translation or reflection.

    kind 'momentum': ``blocks[k]`` lists the orbits compatible with integer
    momentum k (phase 2*pi*k/L); block dimensions over all k sum to the
    sector dimension.  kind 'reflection': ``blocks[+1]``/``blocks[-1]`` list
    orbits contributing an even/odd combination.
    """

    kind: str
    L: int
    N: int
    blocks: dict[int, list[Orbit]] = field(repr=False)

    def block_dimension(self, label: int) -> int:
        return len(self.blocks[label])

    @property
    def total_dimension(self) -> int:
        return sum(len(v) for v in self.blocks.values())


def _translation_orbit(bits: int, L: int) -> tuple[int, int]:
    """(minimal representative, period) of the translation orbit."""
    rep = bits
    t = bits
    period = 0
    for step in range(1, L + 1):
        t = translate(t, L)
        if t < rep:
            rep = t
        if t == bits:
            period = step
            break
    return rep, period


def translation_rep(bits: int, L: int) -> tuple[int, int]:
    """Representative r and shift l such that T^l |r> = |bits>."""
    rep = bits
    shift = 0
    t = bits
    for step in range(1, L):
        t = translate(t, L)
        if t < rep:
            rep = t
            shift = step
    # T^shift moves rep onto bits: translate(rep) applied shift times
    # undoes the search direction; verify orientation at call sites.
    l = (L - shift) % L
    return rep, l


def symmetry_orbits(basis: SectorBasis, kind: str, periodic: bool = True) -> SymmetrySector:
    """Orbit decomposition for 'momentum' (PBC) or 'reflection' sectors.

    Momentum k is compatible with an orbit of period R iff k*R = 0 mod L;
    the per-k orbit lists then tile the sector exactly.
    """
    L, N = basis.L, basis.N
    if kind == "momentum":
        if not periodic:
            raise BasisError("momentum sectors require periodic boundaries")
        blocks: dict[int, list[Orbit]] = {k: [] for k in range(L)}
        for bits in basis.states:
            bits = int(bits)
            rep, period = _translation_orbit(bits, L)
            if rep != bits:
                continue
            for k in range(L):
                if (k * period) % L == 0:
                    blocks[k].append(Orbit(representative=rep, period=period))
        return SymmetrySector(kind="momentum", L=L, N=N, blocks=blocks)
    if kind == "reflection":
        even: list[Orbit] = []
        odd: list[Orbit] = []
        for bits in basis.states:
            bits = int(bits)
            mirror = reflect(bits, L)
            if bits > mirror:
                continue
            if mirror == bits:
                even.append(Orbit(representative=bits, period=1))
            else:
                even.append(Orbit(representative=bits, period=2))
                odd.append(Orbit(representative=bits, period=2))
        return SymmetrySector(kind="reflection", L=L, N=N, blocks={+1: even, -1: odd})
    raise BasisError(f"unknown symmetry kind {kind!r}")

"""Constrained East/West hopping terms and sector-restricted sparse matrices.

Terms act on site triples (i, i+1, i+2), 1-based:
  West, amplitude j_west: site i occupied gates an exchange on (i+1, i+2);
  East, amplitude j_east: site i+2 occupied gates an exchange on (i, i+1).
Open chains sum i = 1..L-2; periodic chains sum i = 1..L with indices mod L.
Hard-core bosons carry no exchange sign, so every off-diagonal element is
+j_east or +j_west (or their sum when both processes connect a pair).
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import SectorBasis, SymmetrySector, translation_rep

DEFAULT_MAX_DIMENSION = 5_000_000


class HamiltonianError(ValueError):
    """Bad parameters or dimension overflow."""


@dataclass(frozen=True)
class HoppingParams:
    """East/West hopping amplitudes; normalized means j_east + j_west = 1."""

    j_east: float
    j_west: float
    normalized: bool = True

    def __post_init__(self):
        if self.j_east < 0 or self.j_west < 0:
            raise HamiltonianError("hopping amplitudes must be non-negative")
        if self.normalized and abs(self.j_east + self.j_west - 1.0) >= 1e-12:
            raise HamiltonianError(
                f"normalized params require j_east + j_west = 1, "
                f"got {self.j_east + self.j_west}"
            )

    @classmethod
    def from_j_west(cls, j_west: float) -> "HoppingParams":
        return cls(j_east=1.0 - j_west, j_west=j_west, normalized=True)

    def swapped(self) -> "HoppingParams":
        return HoppingParams(self.j_west, self.j_east, self.normalized)


@dataclass(frozen=True)
class BoundaryCondition:
    """'open' or 'periodic'; periodic wraps all triple indices mod L."""

    kind: str = "open"

    def __post_init__(self):
        if self.kind not in ("open", "periodic"):
            raise HamiltonianError(f"unknown boundary kind {self.kind!r}")

    @property
    def periodic(self) -> bool:
        return self.kind == "periodic"


OPEN = BoundaryCondition("open")
PERIODIC = BoundaryCondition("periodic")


def _triples(L: int, bc: BoundaryCondition) -> list[tuple[int, int, int]]:
    """0-based (i, i+1, i+2) site triples of the coupling sum."""
    if bc.periodic:
        if L < 3:
            raise HamiltonianError("periodic chains need L >= 3")
        return [(i, (i + 1) % L, (i + 2) % L) for i in range(L)]
    return [(i, i + 1, i + 2) for i in range(L - 2)]


def local_moves(
    bits: int, L: int, params: HoppingParams, bc: BoundaryCondition = OPEN
) -> dict[int, float]:
    """All states reachable from ``bits`` by one hop, with amplitudes.

    Duplicate targets (East and West processes connecting the same pair)
    are merged by summing amplitudes.  Particle number is preserved.
    """
    moves: dict[int, float] = {}
    for a, b, c in _triples(L, bc):
        # West: constraint on a, exchange (b, c)
        if params.j_west != 0.0 and (bits >> a) & 1:
            if ((bits >> b) & 1) != ((bits >> c) & 1):
                t = bits ^ ((1 << b) | (1 << c))
                moves[t] = moves.get(t, 0.0) + params.j_west
        # East: exchange (a, b), constraint on c
        if params.j_east != 0.0 and (bits >> c) & 1:
            if ((bits >> a) & 1) != ((bits >> b) & 1):
                t = bits ^ ((1 << a) | (1 << b))
                moves[t] = moves.get(t, 0.0) + params.j_east
    return moves


@dataclass
class SparseOperator:
    """Sector-restricted Hamiltonian in row-compressed form.

    ``matrix`` is real symmetric for full sectors and reflection blocks,
    complex Hermitian for momentum blocks with k not in {0, L/2}.
    """

    matrix: sp.csr_matrix
    L: int
    N: int
    params: HoppingParams
    bc: BoundaryCondition
    sector_label: str = "full"

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.matrix.data)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """H @ v; real H applied to complex v without upcasting the matrix."""
        if v.shape != (self.dimension,):
            raise HamiltonianError(
                f"vector length {v.shape} != dimension {self.dimension}"
            )
        if not self.is_complex and np.iscomplexobj(v):
            return self.matrix @ v.real + 1j * (self.matrix @ v.imag)
        return self.matrix @ v

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def dump_triplets(self, path) -> None:
        """Debug dump: 16-byte header {magic 'EWH1', L, N, flags} then
        little-endian (row:u32, col:u32, value:f64) triplets."""
        coo = self.matrix.tocoo()
        flags = 1 if self.is_complex else 0
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sIII", b"EWH1", self.L, self.N, flags))
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(struct.pack("<IId", int(r), int(c), float(np.real(v))))


def _term_masks(L: int, bc: BoundaryCondition):
    """(constraint_bit, swap_lo, swap_hi, amplitude_kind) per local term."""
    terms = []
    for a, b, c in _triples(L, bc):
        terms.append((a, b, c, "west"))
        terms.append((c, a, b, "east"))
    return terms


def build_sparse(
    basis: SectorBasis,
    params: HoppingParams,
    bc: BoundaryCondition = OPEN,
    sector: SymmetrySector | None = None,
    block: int | None = None,
    max_dimension: int = DEFAULT_MAX_DIMENSION,
) -> SparseOperator:
    """Assemble the sector Hamiltonian (optionally one symmetry block).

    Without ``sector`` this is the full U(1) sector, built vectorized over
    the states array.  With a momentum SymmetrySector, ``block`` selects the
    integer momentum k; with a reflection sector it selects parity +-1.
    """
    if params.j_west in (0.0, 1.0):
        warnings.warn(
            "j_west in {0, 1}: single-constraint model, sector is reducible",
            stacklevel=2,
        )
    if sector is None:
        if basis.dimension > max_dimension:
            raise HamiltonianError(
                f"sector dimension {basis.dimension} exceeds cap {max_dimension}; "
                "resolve symmetry sectors or raise max_dimension"
            )
        matrix = _build_full(basis, params, bc)
        label = "full"
    elif sector.kind == "momentum":
        if block is None:
            raise HamiltonianError("momentum build requires block=k")
        matrix = _build_momentum_block(basis, params, bc, sector, block)
        label = f"k={block}"
    elif sector.kind == "reflection":
        if block not in (+1, -1):
            raise HamiltonianError("reflection build requires block=+1 or -1")
        matrix = _build_reflection_block(basis, params, bc, sector, block)
        label = f"parity={block:+d}"
    else:
        raise HamiltonianError(f"unknown sector kind {sector.kind!r}")
    return SparseOperator(
        matrix=matrix, L=basis.L, N=basis.N, params=params, bc=bc,
        sector_label=label,
    )


def _build_full(basis: SectorBasis, params: HoppingParams, bc: BoundaryCondition) -> sp.csr_matrix:
    states = basis.states
    dim = basis.dimension
    one = np.uint64(1)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    idx = np.arange(dim, dtype=np.int64)
    for cbit, p, q, kindname in _term_masks(basis.L, bc):
        amp = params.j_west if kindname == "west" else params.j_east
        if amp == 0.0:
            continue
        occ_c = (states >> np.uint64(cbit)) & one
        occ_p = (states >> np.uint64(p)) & one
        occ_q = (states >> np.uint64(q)) & one
        sel = (occ_c == one) & (occ_p != occ_q)
        if not sel.any():
            continue
        swap = np.uint64((1 << p) | (1 << q))
        targets = states[sel] ^ swap
        rows.append(idx[sel])
        cols.append(basis.index_array(targets))
        vals.append(np.full(sel.sum(), amp))
    if not rows:
        return sp.csr_matrix((dim, dim))
    coo = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    )
    csr = coo.tocsr()
    csr.sum_duplicates()
    csr.sort_indices()
    return csr


def _build_momentum_block(
    basis: SectorBasis,
    params: HoppingParams,
    bc: BoundaryCondition,
    sector: SymmetrySector,
    k: int,
) -> sp.csr_matrix:
    """Translation-resolved block: states (1/sqrt(Na)) sum_r e^{-i k r} T^r |a>.

    Matrix element for a local term h|a> = c|b'>, |b'> = T^l |b>:
      <b(k)|h|a(k)> = c * exp(-i theta l) * sqrt(R_a / R_b),  theta = 2 pi k / L.
    """
    if not bc.periodic:
        raise HamiltonianError("momentum blocks require periodic boundaries")
    L = basis.L
    orbits = sector.blocks[k]
    # orbit periods are k-independent; k=0 lists every orbit
    all_periods = {orb.representative: orb.period for orb in sector.blocks[0]}
    index = {orb.representative: j for j, orb in enumerate(orbits)}
    dim = len(orbits)
    theta = 2.0 * np.pi * k / L
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []
    for a_idx, orb in enumerate(orbits):
        a_rep, a_period = orb.representative, orb.period
        for target, amp in local_moves(a_rep, L, params, bc).items():
            b_rep, shift = translation_rep(target, L)
            b_idx = index.get(b_rep)
            if b_idx is None:
                continue  # target orbit incompatible with this k
            phase = np.exp(1j * theta * shift)
            vals.append(amp * phase * np.sqrt(a_period / all_periods[b_rep]))
            rows.append(b_idx)
            cols.append(a_idx)
    mat = sp.coo_matrix(
        (np.array(vals, dtype=complex), (rows, cols)), shape=(dim, dim)
    ).tocsr()
    mat.sum_duplicates()
    if k == 0 or 2 * k == L:
        mat = sp.csr_matrix(mat.real)
    return mat


def _build_reflection_block(
    basis: SectorBasis,
    params: HoppingParams,
    bc: BoundaryCondition,
    sector: SymmetrySector,
    parity: int,
) -> sp.csr_matrix:
    """Reflection-parity block at the symmetric point j_east = j_west.

    Basis: |a,p> = (|a> + p|Ra>)/sqrt(2) for non-palindromes, |a> itself for
    palindromes (even block only).  Per visited target t of H|a_rep> with
    amplitude c the element onto |b,p> is:
      pair source:        c if t == b_rep else p*c    (pair target)
                          sqrt(2)*c                   (palindrome target, p=+1)
      palindrome source:  c (palindrome target), c/sqrt(2) (pair target).
    """
    from .basis import reflect

    if abs(params.j_east - params.j_west) > 1e-12:
        raise HamiltonianError("reflection blocks only valid at j_east == j_west")
    L = basis.L
    orbits = sector.blocks[parity]
    index = {orb.representative: j for j, orb in enumerate(orbits)}
    periods = {orb.representative: orb.period for orb in orbits}
    dim = len(orbits)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    sign = float(parity)
    sqrt2 = np.sqrt(2.0)
    for a_idx, orb in enumerate(orbits):
        a_rep, a_period = orb.representative, orb.period
        for target, amp in local_moves(a_rep, L, params, bc).items():
            b_rep = min(target, reflect(target, L))
            b_idx = index.get(b_rep)
            if b_idx is None:
                continue  # palindrome target has no odd component
            b_period = periods[b_rep]
            if a_period == 2:
                if b_period == 1:
                    contrib = sqrt2 * amp
                else:
                    contrib = amp if target == b_rep else sign * amp
            else:
                contrib = amp if b_period == 1 else amp / sqrt2
            vals.append(contrib)
            rows.append(b_idx)
            cols.append(a_idx)
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()
    mat.sum_duplicates()
    return mat

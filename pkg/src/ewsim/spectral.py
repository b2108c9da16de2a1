"""Dense diagonalization diagnostics: zero modes, level statistics, entanglement.

Level spacings are compared against the Wigner surmises
  P_GOE(s) = (pi/2) s exp(-pi s^2/4),  P_GUE(s) = (32/pi^2) s^2 exp(-4 s^2/pi)
and P_Poisson(s) = exp(-s) through Kolmogorov-Smirnov distances of the
unfolded-spacing CDF.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from math import erf, pi

import numpy as np
import scipy.linalg as la

from .basis import SectorBasis
from .hamiltonian import SparseOperator

DEFAULT_DENSE_CAP = 20_000


class SpectralError(ValueError):
    """Dimension cap exceeded or unusable spectrum."""


@dataclass
class SpectralReport:
    """Sorted sector spectrum plus labels; rescaled energies are E_n / L."""

    energies: np.ndarray
    L: int
    N: int
    bc: str
    j_west: float
    sector_label: str = "full"
    zero_tol: float | None = None

    def __post_init__(self):
        self.energies = np.sort(np.asarray(self.energies, dtype=float))

    @property
    def rescaled(self) -> np.ndarray:
        return self.energies / self.L

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.energies))) if len(self.energies) else 0.0

    def zero_mode_count(self, zero_tol: float | None = None) -> int:
        return count_zero_modes(self, zero_tol)


def diagonalize_dense(
    H: SparseOperator, dense_cap: int = DEFAULT_DENSE_CAP, want_vectors: bool = True
) -> tuple[SpectralReport, np.ndarray | None]:
    """Full eigendecomposition of a sector (or symmetry-block) Hamiltonian.

    Refuses dimensions above ``dense_cap``; resolve symmetry sectors first
    for anything larger.
    """
    if H.dimension > dense_cap:
        raise SpectralError(
            f"dimension {H.dimension} exceeds dense cap {dense_cap}; "
            "use symmetry-resolved blocks"
        )
    A = H.dense()
    if want_vectors:
        energies, vectors = la.eigh(A)
    else:
        # evr keeps the workspace tiny, which matters at dimension ~1e4
        energies = la.eigvalsh(A, driver="evr", overwrite_a=True)
        vectors = None
    report = SpectralReport(
        energies=energies, L=H.L, N=H.N, bc=H.bc.kind,
        j_west=H.params.j_west, sector_label=H.sector_label,
    )
    return report, vectors


def count_zero_modes(report: SpectralReport, zero_tol: float | None = None) -> int:
    """Number of eigenvalues with |E| below zero_tol (default 1e-10 max|E|)."""
    if zero_tol is None:
        zero_tol = 1e-10 * max(report.max_abs, 1e-300)
    return int(np.sum(np.abs(report.energies) < zero_tol))


def zero_mode_sensitivity(report: SpectralReport) -> dict[str, int]:
    """Counts at both ends of the tolerance decade [1e-12, 1e-8] * max|E|."""
    m = max(report.max_abs, 1e-300)
    return {
        "tol_1e-12": count_zero_modes(report, 1e-12 * m),
        "tol_1e-10": count_zero_modes(report, 1e-10 * m),
        "tol_1e-8": count_zero_modes(report, 1e-8 * m),
    }


@dataclass
class SpacingStatistics:
    """Unfolded nearest-neighbor spacings and their RMT distances."""

    spacings: np.ndarray
    bin_edges: np.ndarray
    densities: np.ndarray
    to_goe: float = field(default=np.nan)
    to_gue: float = field(default=np.nan)
    to_poisson: float = field(default=np.nan)

    @property
    def mean_spacing(self) -> float:
        return float(np.mean(self.spacings))


def goe_cdf(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return 1.0 - np.exp(-pi * s * s / 4.0)


def gue_cdf(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    vec_erf = np.vectorize(erf)
    return vec_erf(2.0 * s / np.sqrt(pi)) - (4.0 * s / pi) * np.exp(-4.0 * s * s / pi)


def poisson_cdf(s: np.ndarray) -> np.ndarray:
    return 1.0 - np.exp(-np.asarray(s, dtype=float))


def unfold_and_spacings(
    report: SpectralReport,
    fit_degree: int = 9,
    trim_fraction: float = 0.05,
    exclude_zero_modes: bool = True,
    zero_tol: float | None = None,
    n_bins: int = 40,
) -> SpacingStatistics:
    """Polynomial unfolding of the integrated density of states.

    Degenerate zero modes are removed first (they would flatten the
    staircase), then ``trim_fraction`` is cut from each spectral edge and the
    cumulative count is fit with a degree ``fit_degree`` polynomial.  The fit
    must be monotone on the data range.
    """
    E = report.energies
    if exclude_zero_modes:
        if zero_tol is None:
            zero_tol = 1e-10 * max(report.max_abs, 1e-300)
        E = E[np.abs(E) >= zero_tol]
    n = len(E)
    cut = int(np.floor(trim_fraction * n))
    if cut > 0:
        E = E[cut : n - cut]
    if len(E) < 200:
        raise SpectralError(f"only {len(E)} levels after trimming; need >= 200")
    counts = np.arange(1, len(E) + 1, dtype=float) - 0.5
    fit = np.polynomial.Polynomial.fit(E, counts, deg=fit_degree)
    deriv = fit.deriv()
    grid = np.linspace(E[0], E[-1], 4 * len(E))
    if np.min(deriv(grid)) <= 0:
        raise SpectralError(
            "unfolding fit is non-monotone on the data range; "
            f"degree={fit_degree}, range=({E[0]:.4g}, {E[-1]:.4g})"
        )
    unfolded = fit(E)
    spacings = np.diff(unfolded)
    spacings = spacings[spacings >= 0]
    mean = float(np.mean(spacings))
    if abs(mean - 1.0) > 0.02:
        raise SpectralError(f"unfolded mean spacing {mean:.4f} outside 1 +- 0.02")
    hist, edges = np.histogram(spacings, bins=n_bins, range=(0.0, max(4.0, spacings.max())), density=True)
    stats = SpacingStatistics(spacings=spacings, bin_edges=edges, densities=hist)
    return distribution_distances(stats)


def distribution_distances(stats: SpacingStatistics) -> SpacingStatistics:
    """Fill KS distances of the empirical spacing CDF to GOE/GUE/Poisson."""
    s = np.sort(stats.spacings)
    n = len(s)
    ecdf_hi = np.arange(1, n + 1) / n
    ecdf_lo = np.arange(0, n) / n
    for name, cdf in (("to_goe", goe_cdf), ("to_gue", gue_cdf), ("to_poisson", poisson_cdf)):
        F = cdf(s)
        d = max(np.max(np.abs(F - ecdf_hi)), np.max(np.abs(F - ecdf_lo)))
        setattr(stats, name, float(d))
    return stats


@dataclass
class EntanglementScan:
    """Half-chain von Neumann entropy per eigenstate."""

    energies: np.ndarray
    entropies: np.ndarray
    cut: int
    L: int
    N: int


def eigenstate_entropy(
    vectors: np.ndarray,
    basis: SectorBasis,
    cut: int | None = None,
    energies: np.ndarray | None = None,
) -> EntanglementScan:
    """S = -sum(l^2 ln l^2) across the cut for every eigenvector column.

    Vectors must live in the plain sector basis (momentum-resolved input has
    no well-defined spatial cut); amplitudes are scattered onto a
    (left configurations x right configurations) matrix and SVD'd.
    """
    L, N = basis.L, basis.N
    if cut is None:
        cut = L // 2
    if vectors.shape[0] != basis.dimension:
        raise SpectralError(
            "eigenvector rows do not match the sector dimension; "
            "momentum-resolved input is not supported here"
        )
    mask = (1 << cut) - 1
    states = basis.states.astype(np.uint64)
    left = (states & np.uint64(mask)).astype(np.int64)
    right = (states >> np.uint64(cut)).astype(np.int64)
    left_ids, left_ix = np.unique(left, return_inverse=True)
    right_ids, right_ix = np.unique(right, return_inverse=True)
    nl, nr = len(left_ids), len(right_ids)
    n_vec = vectors.shape[1]
    entropies = np.empty(n_vec)
    M = np.zeros((nl, nr), dtype=vectors.dtype)
    for j in range(n_vec):
        M[:, :] = 0.0
        M[left_ix, right_ix] = vectors[:, j]
        lam = la.svd(M, compute_uv=False)
        p = lam * lam
        total = p.sum()
        if abs(total - 1.0) > 1e-8:
            raise SpectralError(f"eigenvector {j} Schmidt weights sum to {total}")
        p = p[p > 1e-300]
        entropies[j] = float(-(p * np.log(p)).sum())
    if energies is None:
        energies = np.full(n_vec, np.nan)
    return EntanglementScan(
        energies=np.asarray(energies, dtype=float), entropies=entropies,
        cut=cut, L=L, N=N,
    )


def write_spectrum_csv(report: SpectralReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "E_n", "eps_n"])
        for n, (e, r) in enumerate(zip(report.energies, report.rescaled)):
            w.writerow([n, f"{e:.17g}", f"{r:.17g}"])


def write_spacings_csv(stats: SpacingStatistics, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "s_k"])
        for k, s in enumerate(stats.spacings):
            w.writerow([k, f"{s:.17g}"])


def write_entropy_csv(scan: EntanglementScan, energies: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "E_n", "S"])
        for n, (e, s) in enumerate(zip(energies, scan.entropies)):
            w.writerow([n, f"{e:.17g}", f"{s:.17g}"])


def write_spectral_sidecar(path, report: SpectralReport, stats: SpacingStatistics | None = None, extra: dict | None = None) -> None:
    payload = {
        "L": report.L,
        "N": report.N,
        "bc": report.bc,
        "j_west": report.j_west,
        "sector": report.sector_label,
        "levels": int(len(report.energies)),
        "zero_modes": zero_mode_sensitivity(report),
    }
    if stats is not None:
        payload["ks_distances"] = {
            "goe": stats.to_goe, "gue": stats.to_gue, "poisson": stats.to_poisson,
        }
        payload["mean_spacing"] = stats.mean_spacing
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

"""Numerically exact sector-vector time evolution and observable records.

The propagator is an adaptive Lanczos scheme: exp(-i dt H) psi is built in an
m-dimensional Krylov space with full reorthogonalization; substeps shrink
until the a-posteriori residual estimate beta_m * |[exp(-i tau T)]_{m,1}|
falls below the tolerance.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .basis import SectorBasis, enumerate_sector
from .hamiltonian import SparseOperator


class DynamicsError(RuntimeError):
    """Propagator failure (non-convergence, shape mismatch)."""


@dataclass
class StateVector:
    """Complex amplitudes over a SectorBasis, tagged with a time stamp."""

    amplitudes: np.ndarray
    basis: SectorBasis
    time: float = 0.0

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def density(self) -> np.ndarray:
        """Site-resolved occupation vector <n_i>, length L."""
        prob = np.abs(self.amplitudes) ** 2
        states = self.basis.states
        out = np.empty(self.basis.L)
        for i in range(self.basis.L):
            occ = ((states >> np.uint64(i)) & np.uint64(1)).astype(float)
            out[i] = float(prob @ occ)
        return out

    def copy(self) -> "StateVector":
        return StateVector(self.amplitudes.copy(), self.basis, self.time)


def prepare_ldw(L: int, N: int) -> StateVector:
    """Left domain wall: all N particles on sites 1..N, unit amplitude."""
    basis = enumerate_sector(L, N)
    psi = np.zeros(basis.dimension, dtype=complex)
    psi[basis.index((1 << N) - 1)] = 1.0
    return StateVector(psi, basis, 0.0)


def _lanczos(H: SparseOperator, v0: np.ndarray, m: int, breakdown_tol: float):
    """Tridiagonalize H on K_m(H, v0) with full reorthogonalization.

    Returns (alpha, beta_inner, beta_residual, V, exact) where V rows are the
    Lanczos vectors; exact=True flags a happy breakdown (invariant subspace).
    """
    dim = len(v0)
    V = np.empty((m, dim), dtype=complex)
    alpha = np.empty(m)
    beta = np.empty(m)
    V[0] = v0
    w = H.matvec(V[0])
    alpha[0] = np.vdot(V[0], w).real
    w -= alpha[0] * V[0]
    w -= np.vdot(V[0], w) * V[0]
    for j in range(1, m):
        beta[j - 1] = np.linalg.norm(w)
        if beta[j - 1] < breakdown_tol:
            return alpha[:j], beta[: j - 1], 0.0, V[:j], True
        V[j] = w / beta[j - 1]
        w = H.matvec(V[j])
        alpha[j] = np.vdot(V[j], w).real
        w -= alpha[j] * V[j] + beta[j - 1] * V[j - 1]
        # one classical Gram-Schmidt pass against the whole block
        w -= (np.conj(V[: j + 1]) @ w) @ V[: j + 1]
    beta[m - 1] = np.linalg.norm(w)
    return alpha, beta[: m - 1], float(beta[m - 1]), V, False


def _expm_tridiag(alpha: np.ndarray, beta: np.ndarray, tau: float):
    """y = exp(-i tau T) e_1 for the real symmetric tridiagonal T."""
    if len(alpha) == 1:
        return np.array([np.exp(-1j * tau * alpha[0])])
    w, U = la.eigh_tridiagonal(alpha, beta)
    return U @ (np.exp(-1j * tau * w) * U[0])


def krylov_evolve(
    H: SparseOperator,
    psi: StateVector,
    dt: float,
    krylov_dim: int = 30,
    tol: float = 1e-9,
    max_substeps: int = 100_000,
) -> StateVector:
    """Propagate psi by exp(-i dt H) with adaptive Krylov substeps."""
    if dt <= 0:
        raise DynamicsError("dt must be positive")
    if krylov_dim < 2:
        raise DynamicsError("krylov_dim must be at least 2")
    v = psi.amplitudes.astype(complex, copy=True)
    hnorm = _hnorm_estimate(H)
    breakdown = 1e-13 * max(hnorm, 1.0)
    remaining = dt
    tau = dt
    steps = 0
    while remaining > 1e-14 * dt:
        tau = min(tau, remaining)
        nv = np.linalg.norm(v)
        alpha, beta_in, beta_res, V, exact = _lanczos(H, v / nv, krylov_dim, breakdown)
        if exact:
            y = _expm_tridiag(alpha, beta_in, remaining)
            v = nv * (y @ V)
            remaining = 0.0
            break
        w, U = la.eigh_tridiagonal(alpha, beta_in)
        Ue1 = U[0]
        while True:
            y = U @ (np.exp(-1j * tau * w) * Ue1)
            err = beta_res * abs(y[-1])
            if err <= tol:
                break
            tau *= max(0.2, 0.8 * (tol / max(err, 1e-300)) ** (1.0 / krylov_dim))
            steps += 1
            if steps > max_substeps:
                raise DynamicsError(
                    f"no convergence after {max_substeps} substep reductions"
                )
        v = nv * (y @ V)
        remaining -= tau
        steps += 1
        if steps > max_substeps:
            raise DynamicsError(f"exceeded {max_substeps} substeps")
        if err > 0:
            tau *= min(4.0, max(0.3, 0.8 * (tol / err) ** (1.0 / krylov_dim)))
    return StateVector(v, psi.basis, psi.time + dt)


_hnorm_cache: dict[int, float] = {}


def _hnorm_estimate(H: SparseOperator) -> float:
    key = id(H)
    if key not in _hnorm_cache:
        m = H.matrix
        _hnorm_cache[key] = float(np.abs(m).sum(axis=1).max()) if m.nnz else 0.0
    return _hnorm_cache[key]


class DensePropagator:
    """exp(-i t H) through one dense eigendecomposition; the small-L oracle."""

    def __init__(self, H: SparseOperator):
        self.energies, self.vectors = la.eigh(H.dense())

    def evolve(self, psi: StateVector, t: float) -> StateVector:
        c = self.vectors.conj().T @ psi.amplitudes
        out = self.vectors @ (np.exp(-1j * self.energies * t) * c)
        return StateVector(out, psi.basis, psi.time + t)


@dataclass
class TimeSeriesRecord:
    """Sampled observables of one trajectory, the unit of persistence.

    density has shape (n_times, L); delta_n is the flow out of the initially
    occupied region (first ``flow_sites`` sites).
    """

    times: np.ndarray
    density: np.ndarray
    delta_n: np.ndarray
    metadata: dict = field(default_factory=dict)
    entropy: np.ndarray | None = None
    truncation: np.ndarray | None = None
    trace: np.ndarray | None = None

    @property
    def L(self) -> int:
        return self.density.shape[1]

    @property
    def flow_sites(self) -> int:
        return int(self.metadata.get("flow_sites", self.L // 2))

    def recompute_delta_n(self) -> np.ndarray:
        ref = self.density[0, : self.flow_sites].sum()
        return ref - self.density[:, : self.flow_sites].sum(axis=1)

    def validate(self, particle_tol: float = 1e-8, delta_tol: float = 1e-10) -> None:
        totals = self.density.sum(axis=1)
        if np.max(np.abs(totals - totals[0])) > particle_tol:
            raise DynamicsError(
                f"particle number drifts by {np.max(np.abs(totals - totals[0])):.3e}"
            )
        if self.density.min() < -particle_tol or self.density.max() > 1 + particle_tol:
            raise DynamicsError("densities leave [0, 1]")
        if np.max(np.abs(self.recompute_delta_n() - self.delta_n)) > delta_tol:
            raise DynamicsError("stored delta_n inconsistent with densities")

    def correlations(self, t_index: int) -> np.ndarray:
        """<n_i(0)><n_j(t)> products (the domain-wall state is a density
        eigenstate, so this equals the correlation function)."""
        return np.outer(self.density[0], self.density[t_index])


def sample_times_grid(t_max: float, per_decade: int = 48, t_min: float = 0.1) -> np.ndarray:
    """Geometric grid from t_min to t_max (inclusive) plus t = 0."""
    if t_max <= 0:
        return np.array([0.0])
    if t_max <= t_min:
        return np.array([0.0, t_max])
    n = int(np.floor(per_decade * np.log10(t_max / t_min))) + 1
    pts = t_min * 10 ** (np.arange(n) / per_decade)
    pts = pts[pts < t_max * (1 - 1e-12)]
    return np.concatenate(([0.0], pts, [t_max]))


def evolve_and_record(
    H: SparseOperator,
    psi0: StateVector,
    sample_times: np.ndarray,
    krylov_dim: int = 30,
    tol: float = 1e-9,
    flow_sites: int | None = None,
    metadata: dict | None = None,
    propagator: DensePropagator | None = None,
) -> TimeSeriesRecord:
    """Run the quench, sampling density and flow on ``sample_times``.

    With ``propagator`` given, the dense oracle is used instead of Krylov
    (only sensible for small sectors).
    """
    sample_times = np.asarray(sample_times, dtype=float)
    if np.any(np.diff(sample_times) <= 0):
        raise DynamicsError("sample times must be strictly ascending")
    if abs(sample_times[0] - psi0.time) > 1e-12:
        raise DynamicsError(
            "sample grid must start at the state's current time "
            f"({psi0.time}); the first row is the flow reference"
        )
    if flow_sites is None:
        flow_sites = psi0.basis.N
    L = psi0.basis.L
    dens = np.empty((len(sample_times), L))
    psi = psi0.copy()
    dens[0] = psi.density()
    t_now = psi0.time
    for k in range(1, len(sample_times)):
        step = sample_times[k] - t_now
        if propagator is not None:
            psi = propagator.evolve(psi, step)
        else:
            psi = krylov_evolve(H, psi, step, krylov_dim=krylov_dim, tol=tol)
        t_now = sample_times[k]
        dens[k] = psi.density()
    meta = {
        "L": L,
        "N": psi0.basis.N,
        "j_west": H.params.j_west,
        "j_east": H.params.j_east,
        "bc": H.bc.kind,
        "method": "dense" if propagator is not None else "krylov",
        "krylov_dim": krylov_dim,
        "tol": tol,
        "flow_sites": int(flow_sites),
    }
    if metadata:
        meta.update(metadata)
    ref = dens[0, :flow_sites].sum()
    delta = ref - dens[:, :flow_sites].sum(axis=1)
    return TimeSeriesRecord(times=sample_times, density=dens, delta_n=delta, metadata=meta)


def write_dynamics_csv(record: TimeSeriesRecord, path) -> None:
    """Long-form (t, i, density) dump; sites are 1-based."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "i", "density"])
        for k, t in enumerate(record.times):
            for i in range(record.L):
                w.writerow([f"{t:.17g}", i + 1, f"{record.density[k, i]:.17g}"])


def write_flow_csv(record: TimeSeriesRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "deltaN"])
        for t, d in zip(record.times, record.delta_n):
            w.writerow([f"{t:.17g}", f"{d:.17g}"])


def write_record_meta(record: TimeSeriesRecord, path) -> None:
    with open(path, "w") as fh:
        json.dump(record.metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_flow_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return np.atleast_1d(data["t"]), np.atleast_1d(data["deltaN"])

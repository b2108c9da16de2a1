"""Second-order TEBD with the model's native three-site gates.

The coupling sum splits into three layers of mutually commuting gates
(triples starting at s = 0, 1, 2 mod 3) applied in the symmetric order
A(dt/2) B(dt/2) C(dt) B(dt/2) A(dt/2).  Mixed states evolve on the doubled
local space with G (x) G* gates; optionally the layer pattern alternates
with its spatial mirror every step to cancel the ordering's reflection bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .dynamics import TimeSeriesRecord
from .hamiltonian import HoppingParams
from .mps import MatrixProductState, MPSError, TruncationPanic

N_OP = np.diag([0.0, 1.0])
HOP2 = np.zeros((4, 4))
HOP2[1, 2] = HOP2[2, 1] = 1.0  # |01><10| + |10><01| on a site pair


def triple_generator(params: HoppingParams) -> np.ndarray:
    """8x8 Hermitian block of one coupling triple (leftmost site slowest):
    j_west * n (x) hop + j_east * hop (x) n."""
    return params.j_west * np.kron(N_OP, HOP2) + params.j_east * np.kron(HOP2, N_OP)


def _exp_gate(h: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i dt h) blockwise over triple occupation numbers, so matrix
    entries between different particle counts are exactly zero (degenerate
    eigenvectors of a plain eigh could mix charge sectors)."""
    n = np.array([bin(i).count("1") for i in range(8)])
    G = np.zeros((8, 8), dtype=complex)
    for v in range(4):
        sel = np.nonzero(n == v)[0]
        w, U = la.eigh(h[np.ix_(sel, sel)])
        G[np.ix_(sel, sel)] = (U * np.exp(-1j * dt * w)) @ U.conj().T
    return G


def _double_gate(G: np.ndarray) -> np.ndarray:
    """G (x) G* on the doubled space, per-site index 2*ket + bra."""
    G6 = G.reshape(2, 2, 2, 2, 2, 2)
    D = np.einsum("abcdef,uvwxyz->aubvcwdxeyfz", G6, np.conj(G6))
    return D.reshape(64, 64)


@dataclass
class TrotterScheme:
    """Layer-ordered gate program for one time step."""

    dt: float
    L: int
    phys_dim: int
    params: HoppingParams
    order: int = 2
    passes: list[tuple[float, list[int]]] = field(default_factory=list)
    gates: dict[float, np.ndarray] = field(default_factory=dict)

    def gate(self, factor: float) -> np.ndarray:
        return self.gates[factor]


def _layer_starts(L: int) -> list[list[int]]:
    layers = [[], [], []]
    for s in range(L - 2):
        layers[s % 3].append(s)
    return [layer for layer in layers if layer]


def trotter_gates(
    L: int,
    params: HoppingParams,
    dt: float,
    phys_dim: int = 2,
    mirror: bool = False,
) -> TrotterScheme:
    """Build the symmetric second-order scheme for an open chain.

    With ``mirror`` the gate supports are reflected (s -> L-3-s), which swaps
    the roles of the B and C layers; alternating plain and mirrored steps
    averages away the layer ordering's left/right bias.
    """
    if dt < 0:
        raise MPSError("dt must be non-negative")
    if phys_dim not in (2, 4):
        raise MPSError("phys_dim must be 2 (pure) or 4 (vectorized operator)")
    h = triple_generator(params)
    gates = {}
    for factor in (0.5, 1.0):
        G = _exp_gate(h, factor * dt)
        gates[factor] = _double_gate(G) if phys_dim == 4 else G
    layers = _layer_starts(L)
    if mirror:
        layers = [sorted(L - 3 - s for s in layer) for layer in layers]
    if len(layers) == 1:
        passes = [(1.0, layers[0])]
    elif len(layers) == 2:
        passes = [(0.5, layers[0]), (1.0, layers[1]), (0.5, layers[0])]
    else:
        a, b, c = layers
        passes = [(0.5, a), (0.5, b), (1.0, c), (0.5, b), (0.5, a)]
    return TrotterScheme(
        dt=dt, L=L, phys_dim=phys_dim, params=params, passes=passes, gates=gates
    )


def _apply_pass(state: MatrixProductState, gate: np.ndarray, starts: list[int]) -> None:
    """Apply one commuting layer, sweeping toward the nearer end."""
    ascending = abs(state.center - starts[0]) <= abs(state.center - starts[-1])
    order = starts if ascending else list(reversed(starts))
    leave = "right" if ascending else "left"
    for s in order:
        state.move_center_into(s, s + 2)
        state.apply_three_site(s, gate, leave=leave)


def _check_panic(state: MatrixProductState, panic_discard: float, n_steps: int = 1) -> None:
    if state.step_discarded > panic_discard * n_steps:
        raise TruncationPanic(
            f"discarded weight {state.step_discarded:.3e} over {n_steps} step(s) "
            f"exceeds panic threshold {panic_discard:.0e}/step (chi={state.chi_max})"
        )


def tebd_step(
    state: MatrixProductState, scheme: TrotterScheme, panic_discard: float = 1e-4
) -> MatrixProductState:
    """Apply one full Trotter step in place; returns the state for chaining."""
    if state.L != scheme.L or state.phys_dim != scheme.phys_dim:
        raise MPSError("scheme does not match the state")
    state.step_discarded = 0.0
    for factor, starts in scheme.passes:
        _apply_pass(state, scheme.gate(factor), starts)
    state.time += scheme.dt
    _check_panic(state, panic_discard)
    return state


def tebd_steps_fused(
    state: MatrixProductState,
    scheme: TrotterScheme,
    n_steps: int,
    panic_discard: float = 1e-4,
) -> MatrixProductState:
    """Run n_steps, merging the trailing and leading half-layers of adjacent
    steps (the passes list is a palindrome, so the boundary halves combine
    into one full-weight pass).  Observables are only valid at the end."""
    if n_steps <= 0:
        return state
    if state.L != scheme.L or state.phys_dim != scheme.phys_dim:
        raise MPSError("scheme does not match the state")
    f0, layer0 = scheme.passes[0]
    fl, layerl = scheme.passes[-1]
    if layer0 != layerl or f0 != fl or len(scheme.passes) < 3:
        # not a symmetric splitting; fall back to plain steps
        for _ in range(n_steps):
            tebd_step(state, scheme, panic_discard=panic_discard)
        return state
    state.step_discarded = 0.0
    _apply_pass(state, scheme.gate(f0), layer0)
    for s in range(n_steps):
        for factor, starts in scheme.passes[1:-1]:
            _apply_pass(state, scheme.gate(factor), starts)
        last = s == n_steps - 1
        _apply_pass(state, scheme.gate(fl if last else 2 * fl), layerl)
    state.time += n_steps * scheme.dt
    _check_panic(state, panic_discard, n_steps)
    return state


def mps_from_bits(pattern: int, L: int, chi_max: int = 64) -> MatrixProductState:
    """Bond-1 product state for an occupation pattern (site i on bit i-1)."""
    vecs = []
    for i in range(L):
        occ = (pattern >> i) & 1
        v = np.zeros(2)
        v[occ] = 1.0
        vecs.append(v)
    return MatrixProductState.from_product(vecs, chi_max=chi_max, renormalize=True)


def mps_from_weak_dw(L: int, mu0: float, chi_max: int = 64) -> MatrixProductState:
    """Vectorized product operator with a +-mu0 chemical-potential step."""
    if abs(mu0) >= 0.5:
        raise MPSError("|mu0| must stay below 1/2 for a valid density operator")
    vecs = []
    for i in range(L):
        mu = mu0 if (i + 1) <= L // 2 else -mu0
        # local basis is (empty, occupied): occupation probability 1/2 + mu
        vecs.append(np.array([0.5 - mu, 0.0, 0.0, 0.5 + mu]))
    return MatrixProductState.from_product(vecs, chi_max=chi_max, renormalize=False)


def measure_density(state: MatrixProductState) -> np.ndarray:
    """<n_i> (pure) or tr(rho n_i)/tr(rho) (vectorized operator)."""
    if state.phys_dim == 2:
        return state.site_expectations(N_OP)
    return state.densities_mixed()


def measure_trace(state: MatrixProductState) -> float:
    return float(state.trace_mixed().real)


def evolve_mps(
    state: MatrixProductState,
    params: HoppingParams,
    dt: float,
    sample_steps: list[int],
    alternate_mirror: bool = False,
    panic_discard: float = 1e-4,
    flow_sites: int | None = None,
    metadata: dict | None = None,
    entropy_bond: int | None = None,
    progress: "callable | None" = None,
    record_initial: bool = True,
) -> TimeSeriesRecord:
    """Run TEBD up to max(sample_steps) steps, recording at the given steps.

    sample_steps are integer step counts relative to the current state (time
    advances by step * dt) and must include 0.  A continuation segment passes
    record_initial=False so the resumed state is not re-measured; pure-state
    measurement sweeps the canonical center, and the extra sweep would make
    results depend on where checkpoints fall.
    """
    L = state.L
    mixed = state.phys_dim == 4
    scheme = trotter_gates(L, params, dt, phys_dim=state.phys_dim)
    scheme_m = (
        trotter_gates(L, params, dt, phys_dim=state.phys_dim, mirror=True)
        if alternate_mirror
        else None
    )
    sample_steps = sorted(set(int(s) for s in sample_steps))
    if sample_steps[0] != 0:
        raise MPSError("sample steps are relative to the current state and must include 0")
    if flow_sites is None:
        flow_sites = L // 2
    if entropy_bond is None:
        entropy_bond = L // 2 - 1
    out_steps = sample_steps if record_initial else sample_steps[1:]
    n_samples = len(out_steps)
    times = state.time + np.array([s * dt for s in out_steps])
    dens = np.empty((n_samples, L))
    entropy = np.empty(n_samples) if not mixed else None
    trace = np.empty(n_samples) if mixed else None
    trunc = np.empty(n_samples)
    k = 0

    def record():
        nonlocal k
        dens[k] = measure_density(state)
        trunc[k] = state.cum_discarded
        if mixed:
            trace[k] = measure_trace(state)
        else:
            entropy[k] = state.bond_entropy(entropy_bond)
        k += 1

    if record_initial:
        record()
    total = sample_steps[-1]
    done = 0
    # mirror parity is global so a resumed run continues the alternation
    step_offset = int(round(state.time / dt)) if dt > 0 else 0
    for target in sample_steps[1:]:
        if alternate_mirror:
            for step in range(done, target):
                sch = scheme_m if (step_offset + step) % 2 == 1 else scheme
                tebd_step(state, sch, panic_discard=panic_discard)
        else:
            tebd_steps_fused(state, scheme, target - done, panic_discard=panic_discard)
        done = target
        record()
        if progress is not None:
            progress(done, total, state)
    meta = {
        "L": L,
        "j_west": params.j_west,
        "j_east": params.j_east,
        "bc": "open",
        "method": "tebd",
        "chi": state.chi_max,
        "dt": dt,
        "alternate_mirror": alternate_mirror,
        "flow_sites": int(flow_sites),
        "mixed": mixed,
    }
    if metadata:
        meta.update(metadata)
    ref = dens[0, :flow_sites].sum()
    delta = ref - dens[:, :flow_sites].sum(axis=1)
    return TimeSeriesRecord(
        times=times, density=dens, delta_n=delta, metadata=meta,
        entropy=entropy, truncation=trunc, trace=trace,
    )


def steps_for_times(times: np.ndarray, dt: float) -> list[int]:
    """Snap a time grid to integer step counts (deduplicated, keeps 0)."""
    steps = sorted(set(int(round(t / dt)) for t in np.asarray(times)))
    if not steps or steps[0] != 0:
        steps = [0] + steps
    return steps


@dataclass
class ConvergenceVerdict:
    """First time two bond dimensions disagree beyond tolerance."""

    diverged: bool
    divergence_time: float  # inf when fully converged
    max_difference: float
    tolerance: float
    chi_low: int
    chi_high: int

    @property
    def converged_window(self) -> tuple[float, float]:
        return (0.0, self.divergence_time)


def convergence_protocol(
    rec_low: TimeSeriesRecord,
    rec_high: TimeSeriesRecord,
    tolerance: float = 1e-3,
) -> ConvergenceVerdict:
    """Compare density histories of two chi runs with identical physics."""
    n = min(len(rec_low.times), len(rec_high.times))
    if not np.allclose(rec_low.times[:n], rec_high.times[:n], rtol=0, atol=1e-9):
        raise MPSError("convergence comparison requires a common time grid")
    diffs = np.max(np.abs(rec_low.density[:n] - rec_high.density[:n]), axis=1)
    over = np.nonzero(diffs > tolerance)[0]
    diverged = len(over) > 0
    t_div = float(rec_low.times[over[0]]) if diverged else float("inf")
    return ConvergenceVerdict(
        diverged=diverged,
        divergence_time=t_div,
        max_difference=float(diffs.max()) if n else 0.0,
        tolerance=tolerance,
        chi_low=int(rec_low.metadata.get("chi", 0)),
        chi_high=int(rec_high.metadata.get("chi", 0)),
    )

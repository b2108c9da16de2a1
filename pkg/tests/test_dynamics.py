import warnings

import numpy as np
import pytest

from ewsim.basis import enumerate_sector
from ewsim.dynamics import (
    DensePropagator,
    DynamicsError,
    StateVector,
    TimeSeriesRecord,
    evolve_and_record,
    krylov_evolve,
    load_flow_csv,
    prepare_ldw,
    sample_times_grid,
    write_dynamics_csv,
    write_flow_csv,
)
from ewsim.hamiltonian import OPEN, HoppingParams, build_sparse


@pytest.fixture(scope="module")
def sector_10_5():
    basis = enumerate_sector(10, 5)
    H = build_sparse(basis, HoppingParams.from_j_west(0.5), OPEN)
    return basis, H


def test_prepare_ldw_profile():
    psi = prepare_ldw(8, 4)
    assert psi.norm == 1.0
    assert np.array_equal(psi.density(), [1, 1, 1, 1, 0, 0, 0, 0])


def test_ldw_frozen_at_jw_zero():
    psi = prepare_ldw(8, 4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        H = build_sparse(psi.basis, HoppingParams.from_j_west(0.0), OPEN)
    assert np.linalg.norm(H.matvec(psi.amplitudes)) == 0.0


def test_krylov_matches_dense_oracle(sector_10_5):
    basis, H = sector_10_5
    psi0 = prepare_ldw(10, 5)
    psi_k = krylov_evolve(H, psi0, 10.0, krylov_dim=30, tol=1e-9)
    psi_d = DensePropagator(H).evolve(psi0, 10.0)
    assert np.linalg.norm(psi_k.amplitudes - psi_d.amplitudes) < 1e-7
    assert abs(psi_k.norm - 1.0) < 1e-9


def test_krylov_eigenvector_phase(sector_10_5):
    basis, H = sector_10_5
    E, W = np.linalg.eigh(H.dense())
    v = StateVector(W[:, 5].astype(complex), basis)
    out = krylov_evolve(H, v, 3.0, krylov_dim=20, tol=1e-10)
    assert np.linalg.norm(out.amplitudes - np.exp(-1j * E[5] * 3.0) * v.amplitudes) < 1e-9


def test_krylov_energy_conservation(sector_10_5):
    basis, H = sector_10_5
    psi = prepare_ldw(10, 5)
    e0 = np.vdot(psi.amplitudes, H.matvec(psi.amplitudes)).real
    for _ in range(4):
        psi = krylov_evolve(H, psi, 1.3, krylov_dim=30, tol=1e-9)
        assert abs(psi.norm - 1.0) < 1e-9
    e1 = np.vdot(psi.amplitudes, H.matvec(psi.amplitudes)).real
    assert abs(e1 - e0) < 1e-8


def test_krylov_step_size_robustness(sector_10_5):
    basis, H = sector_10_5
    psi0 = prepare_ldw(10, 5)
    a = krylov_evolve(H, psi0, 3.0, krylov_dim=30, tol=1e-9)
    b = krylov_evolve(H, krylov_evolve(H, psi0, 1.5, 30, 1e-9), 1.5, 30, 1e-9)
    assert np.linalg.norm(a.amplitudes - b.amplitudes) < 1e-8


def test_krylov_rejects_bad_args(sector_10_5):
    basis, H = sector_10_5
    psi = prepare_ldw(10, 5)
    with pytest.raises(DynamicsError):
        krylov_evolve(H, psi, -1.0)
    with pytest.raises(DynamicsError):
        krylov_evolve(H, psi, 1.0, krylov_dim=1)


def test_sample_grid_shape():
    ts = sample_times_grid(5.0, per_decade=48, t_min=0.1)
    assert ts[0] == 0.0
    assert ts[-1] == pytest.approx(5.0)
    assert np.all(np.diff(ts) > 0)
    logs = np.diff(np.log10(ts[1:-1]))
    assert np.allclose(logs, 1 / 48, atol=1e-12)


def test_record_and_validation(sector_10_5):
    basis, H = sector_10_5
    psi0 = prepare_ldw(10, 5)
    rec = evolve_and_record(H, psi0, sample_times_grid(3.0))
    rec.validate()
    assert rec.delta_n[0] == 0.0
    assert np.all(rec.delta_n <= 5 + 1e-12)
    # correlation products factorize for a density eigenstate
    corr = rec.correlations(len(rec.times) - 1)
    assert corr.shape == (10, 10)
    assert np.allclose(corr, np.outer(rec.density[0], rec.density[-1]))


def test_record_validation_catches_drift():
    times = np.array([0.0, 1.0])
    dens = np.array([[1.0, 0.0], [0.8, 0.1]])  # particle loss
    rec = TimeSeriesRecord(times=times, density=dens,
                           delta_n=np.array([0.0, 0.2]),
                           metadata={"flow_sites": 1})
    with pytest.raises(DynamicsError, match="drift"):
        rec.validate()


def test_frozen_point_flow_is_exactly_zero():
    psi0 = prepare_ldw(8, 4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        H = build_sparse(psi0.basis, HoppingParams.from_j_west(0.0), OPEN)
    rec = evolve_and_record(H, psi0, np.array([0.0, 10.0, 50.0]))
    assert np.abs(rec.delta_n).max() < 1e-12


def test_csv_roundtrip(tmp_path, sector_10_5):
    basis, H = sector_10_5
    rec = evolve_and_record(H, prepare_ldw(10, 5), np.array([0.0, 1.0, 2.0]))
    write_dynamics_csv(rec, tmp_path / "dynamics.csv")
    write_flow_csv(rec, tmp_path / "flow.csv")
    t, d = load_flow_csv(tmp_path / "flow.csv")
    assert np.array_equal(t, rec.times)
    assert np.array_equal(d, rec.delta_n)
    table = np.genfromtxt(tmp_path / "dynamics.csv", delimiter=",", names=True)
    assert len(table) == 3 * 10

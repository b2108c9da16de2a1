"""Acceptance gate: one test per primary criterion, each printing a verdict.

Heavy inputs (large spectra, TEBD ladders, the mixed-state sweeps) are
produced by tests/_heavy.py builders and cached on disk; run
scripts/precompute_acceptance.py first to front-load them (hours), after
which this module is cheap.  Run with `pytest tests/test_acceptance.py -s`
to see the per-criterion lines.
"""

import warnings

import numpy as np
import pytest

import _heavy
from ewsim import enumerate_sector, build_sparse
from ewsim.analysis import (
    ExponentSeries,
    extrapolate_mu0,
    instantaneous_exponent,
    plateau_exponent,
    scaling_collapse,
    structure_factor_skewness,
)
from ewsim.dynamics import evolve_and_record, prepare_ldw
from ewsim.hamiltonian import OPEN, HoppingParams
from ewsim.spectral import SpectralReport, count_zero_modes, unfold_and_spacings
from ewsim.tebd import convergence_protocol

pytestmark = pytest.mark.acceptance

SMOOTH_WINDOW = 5


def verdict(name: str, passed: bool, detail: str) -> None:
    print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    assert passed, f"{name}: {detail}"


def spectral_report(arrays, meta) -> SpectralReport:
    return SpectralReport(
        energies=arrays["energies"], L=meta["L"], N=meta["N"],
        bc=meta["bc"], j_west=meta["j_west"],
        sector_label=f"k={meta['k']}" if "k" in meta else "full",
    )


def exponent_series(rec, cutoff=np.inf, label="") -> ExponentSeries:
    return instantaneous_exponent(
        rec, window=SMOOTH_WINDOW, validity_cutoff=cutoff, label=label
    )


# 1 ---------------------------------------------------------------------------


def test_structural_exactness():
    from test_hamiltonian import brute_force_dense

    worst_anti = 0.0
    for L in (4, 6, 8, 10, 12):
        basis = enumerate_sector(L, L // 2)
        params = HoppingParams.from_j_west(1 / 3)
        H = build_sparse(basis, params, OPEN)
        oracle = brute_force_dense(basis, params, OPEN)
        assert np.array_equal(H.dense(), oracle), f"element mismatch at L={L}"
        E = np.sort(np.linalg.eigvalsh(H.dense()))
        worst_anti = max(worst_anti, np.abs(E + E[::-1]).max() / np.abs(E).max())
    verdict(
        "structural-exactness",
        worst_anti < 1e-9,
        f"sparse == brute force for L<=12; antisymmetry defect {worst_anti:.1e} < 1e-9",
    )


# 2 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_zero_mode_parity():
    counts = {}
    stable = True
    for L in (8, 10, 12, 14):
        arrays, meta = _heavy.spectrum_pbc(L)
        report = spectral_report(arrays, meta)
        m = report.max_abs
        z = count_zero_modes(report, 1e-10 * m)
        counts[(L, L // 2)] = z
        for tol in (1e-12, 1e-8):
            stable &= count_zero_modes(report, tol * m) == z
    ok = (counts[(8, 4)] > 0 and counts[(12, 6)] > 0
          and counts[(10, 5)] == 0 and counts[(14, 7)] == 0 and stable)
    verdict(
        "zero-mode-parity",
        ok,
        f"Z={counts} (PBC, j_w=1/3), stable across tolerance decade={stable}",
    )


# 3 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_level_statistics_goe():
    arrays, meta = _heavy.spectrum_goe()
    stats = unfold_and_spacings(spectral_report(arrays, meta))
    ok = stats.to_goe < stats.to_gue and stats.to_goe < stats.to_poisson
    verdict(
        "level-statistics-goe",
        ok,
        f"L=16 open j_w=1/3: KS goe={stats.to_goe:.4f} gue={stats.to_gue:.4f} "
        f"poisson={stats.to_poisson:.4f}",
    )


@pytest.mark.slow
def test_level_statistics_gue():
    arrays, meta = _heavy.spectrum_gue()
    stats = unfold_and_spacings(spectral_report(arrays, meta))
    ok = stats.to_gue < stats.to_goe and stats.to_gue < stats.to_poisson
    verdict(
        "level-statistics-gue",
        ok,
        f"L=16 PBC k={meta['k']} j_w=1/3: KS gue={stats.to_gue:.4f} "
        f"goe={stats.to_goe:.4f} poisson={stats.to_poisson:.4f}",
    )


# 4 ---------------------------------------------------------------------------


def test_frozen_point():
    L, N = 12, 6
    basis = enumerate_sector(L, N)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        H = build_sparse(basis, HoppingParams.from_j_west(0.0), OPEN)
    rec = evolve_and_record(H, prepare_ldw(L, N),
                            np.array([0.0, 1.0, 10.0, 25.0, 50.0]))
    worst = np.abs(rec.delta_n).max()
    verdict("frozen-point", worst < 1e-12,
            f"j_w=0 LDW flow |deltaN| <= {worst:.2e} for t <= 50")


# 5 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_ballistic_regime():
    s20 = exponent_series(_heavy.ballistic_record(20), label="L20")
    s24 = exponent_series(_heavy.ballistic_record(24), label="L24")
    # late half of the shared pre-divergence window (excludes the short-time
    # perturbative transient where deltaN ~ t^2)
    t_end = min(s20.times.max(), s24.times.max())
    val, err = plateau_exponent(s20, s24, t_min=t_end / 2)
    verdict("ballistic-regime", 0.85 <= val <= 1.15,
            f"j_w=1/2 L in (20,24): plateau 1/z = {val:.3f} +- {err:.3f} "
            f"over t in [{t_end / 2:.1f}, {t_end:.1f}]")


# 6 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_diffusive_regime():
    # KNOWN RED as stated: at the pinned scale (L=40, chi=512) the converged
    # window ends near t ~ 17 while the crossover from the early ballistic
    # transient to diffusion is still in progress (1/z decays 0.87 -> 0.78
    # over t = 8..18 with a clearly negative slope toward 1/2); reaching
    # [0.4, 0.6] needs the larger bond dimensions and times the source data
    # used.  The companion test pins the attainable desk-scale statement,
    # and the infinite-temperature criterion demonstrates the actual
    # diffusive fixed point.
    low = _heavy.diffusive_record(256)
    high = _heavy.diffusive_record(512)
    v = convergence_protocol(low, high, tolerance=1e-3)
    t_star = min(v.divergence_time, high.times.max())
    series = exponent_series(high, cutoff=t_star)
    val, err = plateau_exponent(series, series, t_min=t_star / 2)
    verdict(
        "diffusive-regime",
        0.4 <= val <= 0.6,
        f"j_w=2/3 L=40 chi=512: 1/z = {val:.3f} +- {err:.3f} over "
        f"converged window [{t_star / 2:.1f}, {t_star:.1f}]",
    )


@pytest.mark.slow
def test_diffusive_crossover_direction():
    """Companion: within the converged window the j_w=2/3 quench has left
    the ballistic plateau and decays monotonically toward diffusion."""
    low = _heavy.diffusive_record(256)
    high = _heavy.diffusive_record(512)
    v = convergence_protocol(low, high, tolerance=1e-3)
    t_star = min(v.divergence_time, high.times.max())
    series = exponent_series(high, cutoff=t_star)
    late = series.restricted(t_min=8.0)
    assert len(late.times) >= 8
    # clearly below ballistic, above the diffusive floor it is heading to
    assert 0.55 <= late.inv_z[-1] <= 0.9
    # monotone decay over the late window (smoothed series)
    assert np.all(np.diff(late.inv_z[len(late.inv_z) // 2:]) < 0)
    drop = late.inv_z[0] - late.inv_z[-1]
    print(f"[info] diffusive crossover: 1/z {late.inv_z[0]:.3f} -> "
          f"{late.inv_z[-1]:.3f} over t in [{late.times[0]:.1f}, {late.times[-1]:.1f}]")
    assert drop > 0.05


# 7 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_superdiffusive_point():
    # KNOWN RED as stated: the j_w=1 quench oscillates strongly before
    # settling (as the source data also show); at desk scale the two-size
    # and chi-converged windows close around t ~ 12-15, while the exponent
    # only clears 0.65 for t >~ 13.  Averaging 1/z over the late half of the
    # usable window therefore lands mid-crossover (~0.5) even though the
    # end-of-window estimate sits at ~0.71 and is still rising toward the
    # source's finite-time 0.8 (companion test below).
    series = []
    cuts = []
    for L in (32, 40):
        low = _heavy.superdiffusive_record(L, 256)
        high = _heavy.superdiffusive_record(L, 512)
        v = convergence_protocol(low, high, tolerance=1e-3)
        t_star = min(v.divergence_time, high.times.max())
        cuts.append(t_star)
        series.append(exponent_series(high, cutoff=t_star, label=f"L{L}"))
    t_hi = min(cuts)
    try:
        val, err = plateau_exponent(series[0], series[1], t_min=t_hi / 2, t_max=t_hi)
        detail = (f"j_w=1 L in (32,40) chi=512: late 1/z = {val:.3f} +- {err:.3f} "
                  f"(finite-time estimate, window up to t={t_hi:.1f})")
        ok = 0.65 <= val <= 0.9
    except Exception as exc:
        detail = f"j_w=1 L in (32,40) chi=512: no settled two-size window ({exc})"
        ok = False
    verdict("superdiffusive-point", ok, detail)


@pytest.mark.slow
def test_superdiffusive_finite_time_estimate():
    """Companion: the L=40 chi-converged window ends with the exponent in
    the superdiffusive band and still rising (oscillations damped)."""
    low = _heavy.superdiffusive_record(40, 256)
    high = _heavy.superdiffusive_record(40, 512)
    v = convergence_protocol(low, high, tolerance=1e-3)
    t_star = min(v.divergence_time, high.times.max())
    series = exponent_series(high, cutoff=t_star)
    tail = series.restricted(t_min=0.85 * t_star)
    est = float(tail.inv_z.mean())
    print(f"[info] superdiffusive finite-time estimate: 1/z = {est:.3f} over "
          f"t in [{tail.times[0]:.1f}, {tail.times[-1]:.1f}] (still rising)")
    assert 0.65 <= est <= 0.9
    assert tail.inv_z[-1] >= series.restricted(t_min=0.6 * t_star).inv_z[0]


# 8 ---------------------------------------------------------------------------


@pytest.mark.slow
def test_infinite_temperature_diffusion():
    rec = _heavy.inftemp_record()
    sel = (rec.times >= 20.0) & (rec.times <= 60.0)
    profile_times = rec.times[sel]
    keep = np.isclose(profile_times[:, None], _heavy.INFTEMP_PROFILE_TIMES[None, :]).any(axis=1)
    collapse = scaling_collapse(profile_times[keep], rec.density[sel][keep], rec.L)
    series = exponent_series(rec)
    late = series.inv_z[(series.times >= 30.0) & (series.times <= 60.0)]
    late_val = float(late.mean())
    ok = (1.8 <= collapse.best_z <= 2.2) and (0.4 <= late_val <= 0.6)
    verdict(
        "infinite-temperature-diffusion",
        ok,
        f"L=128 chi=128 mu0=0.05: collapse best_z = {collapse.best_z:.2f} "
        f"(t in [20,60]); late 1/z = {late_val:.3f}",
    )


# 9 ---------------------------------------------------------------------------


def _skew_table(j_west):
    times = None
    cols = []
    for mu in _heavy.SKEW_MU_GRID:
        rec = _heavy.skewness_record(j_west, mu)
        t_sel = rec.times >= 5.0
        t = rec.times[t_sel]
        S = np.array([
            structure_factor_skewness(rec.density[k], mu).skewness
            for k in np.nonzero(t_sel)[0]
        ])
        if times is None:
            times = t
        cols.append(S)
    return times, np.column_stack(cols)


@pytest.mark.slow
def test_skewness():
    jw3 = _heavy.JW_THIRD
    t3, S3 = _skew_table(jw3)
    t5, S5 = _skew_table(0.5)
    t7, S7 = _skew_table(2.0 / 3.0)
    mu = np.array(_heavy.SKEW_MU_GRID)
    ex3 = extrapolate_mu0(mu, S3, t3)
    ex5 = extrapolate_mu0(mu, S5, t5)
    ex7 = extrapolate_mu0(mu, S7, t7)
    # symmetric point: intercept consistent with zero at every recorded time
    sym_ok = bool(np.all(np.abs(ex5.intercept) <= 2.0 * ex5.intercept_err))
    # asymmetric point: finite negative skewness at mu=0.05 late, and S0 < 0
    late = t3 >= 25.0
    raw_ok = bool(np.all(S3[late, -1] < 0.0))
    neg_ok = bool(np.all(ex3.intercept[late] < 0.0))
    # reflection: S0(j_w) = -S0(1 - j_w) within combined fit errors
    refl = np.abs(ex3.intercept[late] + ex7.intercept[late])
    refl_tol = 2.0 * (ex3.intercept_err[late] + ex7.intercept_err[late])
    refl_ok = bool(np.all(refl <= refl_tol))
    ok = sym_ok and raw_ok and neg_ok and refl_ok
    verdict(
        "skewness",
        ok,
        f"S0(1/2) ~ 0 within 2 s.e. at all t: {sym_ok}; "
        f"S(mu=0.05, late; j_w=1/3) < 0: {raw_ok}; S0(1/3) < 0 late: {neg_ok} "
        f"(S0={ex3.intercept[-1]:.3f} +- {ex3.intercept_err[-1]:.3f}); "
        f"mirror |S0(1/3)+S0(2/3)| <= comb. err: {refl_ok}",
    )


# 10 --------------------------------------------------------------------------


@pytest.mark.slow
def test_cross_engine_oracle():
    # KNOWN RED as stated: the honest second-order constant of the three-site
    # layered splitting gives 1.2e-4 (j_w <= 1/2) to 3.6e-4 (j_w = 1) at
    # dt=0.05, t <= 12; no ordering variant (outer-layer swaps, mirror
    # alternation, symmetric sweep) reaches 1e-4 at this step.  The
    # dt-halving ratio is exactly 4.0, and the companion test below shows the
    # same comparison passes 1e-4 once dt honors the measured constant.
    details = []
    ok = True
    for jw in (_heavy.JW_THIRD, 0.5, 1.0):
        dense = _heavy.crossengine_dense(jw)
        coarse = _heavy.crossengine_tebd(jw, 0.05)
        fine = _heavy.crossengine_tebd(jw, 0.025)
        assert np.allclose(dense.times, coarse.times, atol=1e-9)
        err_c = np.abs(coarse.density - dense.density).max()
        err_f = np.abs(fine.density - dense.density).max()
        ratio = err_c / err_f
        ok &= err_c <= 1e-4 and 3.0 <= ratio <= 5.0
        details.append(f"j_w={jw:.2f}: err={err_c:.1e}, dt-halving ratio={ratio:.2f}")
    verdict("cross-engine-oracle", ok, "; ".join(details))


@pytest.mark.slow
def test_cross_engine_attainable_contract():
    """Companion: engines agree within 1e-4 at the step size the measured
    Trotter constant actually supports, with clean second-order scaling."""
    details = []
    for jw in (_heavy.JW_THIRD, 0.5, 1.0):
        dense = _heavy.crossengine_dense(jw)
        fine = _heavy.crossengine_tebd(jw, 0.025)
        err = np.abs(fine.density - dense.density).max()
        details.append(f"j_w={jw:.2f}: err(dt=0.025)={err:.1e}")
        assert err <= 1e-4, details[-1]
    print(f"[info] cross-engine attainable: {'; '.join(details)}")


# 11 --------------------------------------------------------------------------


@pytest.mark.slow
def test_even_odd_confinement():
    # KNOWN RED as stated: the 0.1-level front at j_w=0.25 moves at ~0.14
    # sites per unit time, so at L=22 it cannot reach the right edge by
    # t = 2L (measured edge max 0.005 there), and the even-N confined block's
    # evanescent tail leaks past 0.02 at the edge before t = 3L at L=20
    # (measured 0.059).  The confinement physics itself is demonstrated by
    # the flow-contrast companion test below.
    odd = _heavy.evenodd_record(22)   # N = 11
    even = _heavy.evenodd_record(20)  # N = 10
    odd_edge = odd.density[odd.times <= 44.0, -1].max()
    even_edge = even.density[even.times <= 60.0, -1].max()
    ok = odd_edge > 0.1 and even_edge < 0.02
    verdict(
        "even-odd-confinement",
        ok,
        f"j_w=0.25 right-edge density: odd N=11 max={odd_edge:.3f} (> 0.1 by t=2L), "
        f"even N=10 max={even_edge:.4f} (< 0.02 through t=3L)",
    )


@pytest.mark.slow
def test_even_odd_flow_contrast():
    """Companion: the confinement shows up in the particle flow at desk
    scale.  Even N saturates (particles stay in a bounded region) while odd
    N keeps flowing right through the chain; thresholds frozen from the
    Krylov records backing the suite."""
    odd = _heavy.evenodd_record(22)
    even = _heavy.evenodd_record(20)
    odd_flow_2L = odd.delta_n[odd.times <= 44.0].max()
    even_flow_3L = even.delta_n.max()
    print(f"[info] even-odd flow contrast: odd deltaN(<=2L) = {odd_flow_2L:.2f}, "
          f"even deltaN(<=3L) = {even_flow_3L:.2f}")
    assert odd_flow_2L > 3.0        # keeps melting through the chain
    assert even_flow_3L < 2.0       # bounded: confined within R < L
    assert odd_flow_2L > 1.8 * even_flow_3L


# runner invariant: engine-boundary consistency at the cutover size --------


@pytest.mark.slow
def test_engine_boundary_consistency():
    exact = _heavy.engine_boundary_krylov()
    low = _heavy.engine_boundary_tebd(256)
    high = _heavy.engine_boundary_tebd(512)
    v = convergence_protocol(low, high, tolerance=1e-3)
    usable = exact.times <= min(v.divergence_time, exact.times.max())
    assert np.allclose(exact.times, high.times, atol=1e-9)
    diff = np.abs(exact.density[usable] - high.density[usable]).max()
    print(f"[info] engine boundary L=20: exact vs TEBD(chi=512) density "
          f"difference {diff:.2e} up to t={exact.times[usable].max():.1f}")
    assert diff < 1e-4


# analysis invariant: symmetric-point structure factor is even in x ---------


@pytest.mark.slow
def test_symmetric_point_gradient_even():
    rec = _heavy.skewness_record(0.5, 0.05)
    worst = 0.0
    for k, t in enumerate(rec.times):
        if t < 5.0:
            continue
        grad = np.abs(np.diff(rec.density[k]))
        worst = max(worst, float(np.abs(grad - grad[::-1]).max()))
    print(f"[info] j_w=1/2 gradient reflection asymmetry <= {worst:.2e}")
    assert worst < 1e-3  # TEBD tolerance


# 12 --------------------------------------------------------------------------


@pytest.mark.slow
def test_entanglement_outliers():
    arrays, meta = _heavy.entanglement_scan_L14()
    E = arrays["energies"]
    S = arrays["entropies"]
    mid = np.abs(E) < 0.1 * np.abs(E).max()
    median = np.median(S[mid])
    outliers = int(np.sum(S[mid] < 0.5 * median))
    verdict(
        "entanglement-outliers",
        outliers >= 1,
        f"L=14 open j_w=1/3: {outliers} mid-spectrum eigenstates below half the "
        f"mid-spectrum median entropy ({median:.3f})",
    )

"""Derived transport quantities: instantaneous dynamical exponents, scaling
collapses, density-gradient skewness, and the linear-response extrapolation.

The instantaneous exponent is the logarithmic derivative
  1/z(t) = d log(deltaN) / d log(t),
smoothed with a short moving average; the gradient skewness is the discrete
third moment
  S = sum_y P(y) ((y - mu1) / sigma)^3
of the normalized nearest-neighbor density gradient.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dynamics import TimeSeriesRecord


class AnalysisError(ValueError):
    """Insufficient or degenerate input data."""


@dataclass
class ExponentSeries:
    """1/z(t) on a log-spaced grid, with smoothing metadata."""

    times: np.ndarray
    inv_z: np.ndarray
    window: int
    validity_cutoff: float = np.inf
    label: str = ""

    def restricted(self, t_min: float = 0.0, t_max: float = np.inf) -> "ExponentSeries":
        t_max = min(t_max, self.validity_cutoff)
        sel = (self.times >= t_min) & (self.times <= t_max)
        return ExponentSeries(
            times=self.times[sel], inv_z=self.inv_z[sel],
            window=self.window, validity_cutoff=self.validity_cutoff,
            label=self.label,
        )


def _moving_average(y: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; the window shrinks near the edges."""
    half = window // 2
    out = np.empty_like(y)
    for i in range(len(y)):
        lo = max(0, i - half)
        hi = min(len(y), i + half + 1)
        out[i] = y[lo:hi].mean()
    return out


def instantaneous_exponent(
    flow: TimeSeriesRecord | tuple[np.ndarray, np.ndarray],
    window: int = 5,
    min_flow: float = 1e-6,
    validity_cutoff: float = np.inf,
    label: str = "",
) -> ExponentSeries:
    """Central log-log differences of deltaN(t), then moving-average smoothing.

    Times with deltaN below ``min_flow`` (initial transient) and t = 0 are
    dropped; endpoints use one-sided differences.
    """
    if isinstance(flow, TimeSeriesRecord):
        times, delta = flow.times, flow.delta_n
    else:
        times, delta = flow
    sel = (times > 0) & (delta > min_flow)
    t = np.asarray(times, dtype=float)[sel]
    d = np.asarray(delta, dtype=float)[sel]
    if len(t) < window + 2:
        raise AnalysisError(
            f"only {len(t)} usable flow points; need at least window+2 = {window + 2}"
        )
    x = np.log(t)
    y = np.log(d)
    deriv = np.empty_like(y)
    deriv[1:-1] = (y[2:] - y[:-2]) / (x[2:] - x[:-2])
    deriv[0] = (y[1] - y[0]) / (x[1] - x[0])
    deriv[-1] = (y[-1] - y[-2]) / (x[-1] - x[-2])
    smooth = _moving_average(deriv, window)
    return ExponentSeries(
        times=t, inv_z=smooth, window=window,
        validity_cutoff=validity_cutoff, label=label,
    )


def plateau_exponent(
    series_a: ExponentSeries,
    series_b: ExponentSeries | None = None,
    agree_tol: float = 0.05,
    t_min: float = 0.0,
    t_max: float = np.inf,
) -> tuple[float, float]:
    """Average 1/z over the maximal late-time window where two system sizes
    agree within ``agree_tol``; uncertainty is half the value spread.

    With a single series the window is just [t_min, min(t_max, cutoff)].
    """
    if series_b is None:
        series_b = series_a
    a = series_a.restricted(t_min, t_max)
    b = series_b.restricted(t_min, t_max)
    common = np.intersect1d(a.times, b.times)
    if len(common) == 0:
        # interpolate onto the coarser grid over the overlap
        lo = max(a.times.min(), b.times.min())
        hi = min(a.times.max(), b.times.max())
        if hi <= lo:
            raise AnalysisError("exponent series do not overlap in time")
        base = a.times if len(a.times) <= len(b.times) else b.times
        common = base[(base >= lo) & (base <= hi)]
    ya = np.interp(common, a.times, a.inv_z)
    yb = np.interp(common, b.times, b.inv_z)
    agree = np.abs(ya - yb) < agree_tol
    if not agree[-1]:
        raise AnalysisError("series disagree even at the latest common time")
    k = len(agree) - 1
    while k > 0 and agree[k - 1]:
        k -= 1
    vals = np.concatenate([ya[k:], yb[k:]])
    return float(vals.mean()), float((vals.max() - vals.min()) / 2.0)


@dataclass
class CollapseResult:
    """Self-similarity scan: cost(z) over the z grid and its minimizer."""

    z_grid: np.ndarray
    costs: np.ndarray
    best_z: float

    @property
    def best_cost(self) -> float:
        return float(self.costs.min())


def scaling_collapse(
    times: np.ndarray,
    profiles: np.ndarray,
    L: int,
    z_grid: np.ndarray | None = None,
    n_points: int = 201,
) -> CollapseResult:
    """Scan z for the best collapse of profiles onto f(x / t^(1/z)).

    Profiles are centered on the initial step (x = i - L/2, 1-based i); for
    each z every profile is linearly interpolated on the shared rescaled
    range and the mean squared pairwise deviation is the cost.
    """
    times = np.asarray(times, dtype=float)
    profiles = np.asarray(profiles, dtype=float)
    if len(times) < 3:
        raise AnalysisError("collapse needs at least 3 profile times")
    if np.any(times <= 0):
        raise AnalysisError("collapse times must be positive")
    if z_grid is None:
        z_grid = np.arange(1.0, 3.0 + 1e-9, 0.01)
    x = np.arange(1, L + 1, dtype=float) - L / 2.0
    costs = np.empty(len(z_grid))
    for iz, z in enumerate(z_grid):
        scale = times ** (1.0 / z)
        lo = max(x[0] / s for s in scale)
        hi = min(x[-1] / s for s in scale)
        if hi <= lo:
            costs[iz] = np.inf
            continue
        u = np.linspace(lo, hi, n_points)
        interp = np.array([
            np.interp(u, x / s, prof) for s, prof in zip(scale, profiles)
        ])
        diffs = interp[:, None, :] - interp[None, :, :]
        costs[iz] = float(np.mean(diffs ** 2))
    best = int(np.argmin(costs))
    return CollapseResult(z_grid=np.asarray(z_grid), costs=costs, best_z=float(z_grid[best]))


@dataclass
class StructureFactorProfile:
    """Normalized density-gradient distribution and its moments at one time."""

    positions: np.ndarray         # bond offsets y from the chain center
    gradient: np.ndarray          # |<n_i> - <n_{i+1}>| per bond
    distribution: np.ndarray      # gradient / sum(gradient)
    mean: float
    sigma: float
    skewness: float
    structure_factor: np.ndarray  # gradient / mu0
    mu0: float
    time: float = np.nan


def structure_factor_skewness(
    density: np.ndarray, mu0: float, time: float = np.nan
) -> StructureFactorProfile:
    """Gradient distribution moments per Eq.-style discrete skewness.

    y is measured from the central bond (between sites L/2 and L/2+1), so a
    reflection-symmetric profile has zero skewness exactly.
    """
    if mu0 <= 0:
        raise AnalysisError("mu0 must be positive")
    density = np.asarray(density, dtype=float)
    L = len(density)
    grad = np.abs(np.diff(density))
    total = grad.sum()
    if total <= 0:
        raise AnalysisError("flat profile: gradient vanishes everywhere")
    y = np.arange(1, L, dtype=float) - L / 2.0  # bond i sits at i - L/2
    P = grad / total
    mu1 = float(P @ y)
    var = float(P @ (y - mu1) ** 2)
    if var <= 0:
        raise AnalysisError("gradient concentrated on one bond: sigma = 0")
    sigma = np.sqrt(var)
    skew = float(P @ ((y - mu1) / sigma) ** 3)
    return StructureFactorProfile(
        positions=y, gradient=grad, distribution=P,
        mean=mu1, sigma=sigma, skewness=skew,
        structure_factor=grad / mu0, mu0=mu0, time=time,
    )


@dataclass
class SkewnessExtrapolation:
    """Per-time linear fits S(mu) = S0 + alpha*mu over the mu grid."""

    times: np.ndarray
    mu_grid: np.ndarray
    samples: np.ndarray           # (n_times, n_mu)
    intercept: np.ndarray         # S0(t)
    intercept_err: np.ndarray
    slope: np.ndarray             # alpha(t)
    slope_err: np.ndarray
    residual_rms: np.ndarray


def extrapolate_mu0(
    mu_grid: np.ndarray, samples: np.ndarray, times: np.ndarray | None = None
) -> SkewnessExtrapolation:
    """Unweighted least-squares line per time slice with standard errors."""
    mu = np.asarray(mu_grid, dtype=float)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(np.unique(mu)) < 3:
        raise AnalysisError("extrapolation needs at least 3 distinct mu values")
    if samples.shape[1] != len(mu):
        raise AnalysisError("samples must have one column per mu value")
    n_t = samples.shape[0]
    if times is None:
        times = np.arange(n_t, dtype=float)
    A = np.column_stack([np.ones_like(mu), mu])
    # covariance factor (A^T A)^-1 for the standard errors
    cov = np.linalg.inv(A.T @ A)
    intercept = np.empty(n_t)
    slope = np.empty(n_t)
    ierr = np.empty(n_t)
    serr = np.empty(n_t)
    rrms = np.empty(n_t)
    dof = max(len(mu) - 2, 1)
    for k in range(n_t):
        coef, *_ = np.linalg.lstsq(A, samples[k], rcond=None)
        resid = samples[k] - A @ coef
        s2 = float(resid @ resid) / dof
        intercept[k], slope[k] = coef
        ierr[k] = np.sqrt(s2 * cov[0, 0])
        serr[k] = np.sqrt(s2 * cov[1, 1])
        rrms[k] = np.sqrt(np.mean(resid ** 2))
    return SkewnessExtrapolation(
        times=np.asarray(times, dtype=float), mu_grid=mu, samples=samples,
        intercept=intercept, intercept_err=ierr, slope=slope, slope_err=serr,
        residual_rms=rrms,
    )


# -- CSV output ----------------------------------------------------------


def write_exponent_csv(series: ExponentSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "inv_z"])
        for t, v in zip(series.times, series.inv_z):
            w.writerow([f"{t:.17g}", f"{v:.17g}"])


def write_collapse_csv(result: CollapseResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z_scan", "cost"])
        for z, c in zip(result.z_grid, result.costs):
            w.writerow([f"{z:.17g}", f"{c:.17g}"])


def write_skewness_csv(rows: list[tuple[float, float, float]], path) -> None:
    """rows of (t, mu, S)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mu", "S"])
        for t, mu, s in rows:
            w.writerow([f"{t:.17g}", f"{mu:.17g}", f"{s:.17g}"])


def write_skew_extrap_csv(ex: SkewnessExtrapolation, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "S0", "S0_err", "alpha"])
        for t, s0, e, a in zip(ex.times, ex.intercept, ex.intercept_err, ex.slope):
            w.writerow([f"{t:.17g}", f"{s0:.17g}", f"{e:.17g}", f"{a:.17g}"])

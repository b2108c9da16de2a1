"""Experiment orchestration: grid dispatch, checkpoints, manifests.

Each grid point owns one subdirectory under points/ and is resumable from
its latest checkpoint; the manifest lists every output file with a sha256
hash and is rewritten atomically.  Engines follow the configured cutover:
sector Krylov up to ``exact_cutoff`` sites, TEBD (with a chi convergence
ladder) above it and for all mixed states.
"""

from __future__ import annotations

import hashlib
import json
import os
import resource
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import analysis as ana
from .basis import enumerate_sector, symmetry_orbits
from .config import ExperimentConfig, load_config
from .dynamics import (
    StateVector,
    TimeSeriesRecord,
    krylov_evolve,
    prepare_ldw,
    sample_times_grid,
    write_dynamics_csv,
    write_flow_csv,
    write_record_meta,
)
from .hamiltonian import OPEN, PERIODIC, HoppingParams, build_sparse
from .mps import MatrixProductState
from .spectral import (
    SpectralError,
    diagonalize_dense,
    eigenstate_entropy,
    unfold_and_spacings,
    write_entropy_csv,
    write_spacings_csv,
    write_spectral_sidecar,
    write_spectrum_csv,
)
from .tebd import (
    ConvergenceVerdict,
    convergence_protocol,
    evolve_mps,
    mps_from_bits,
    mps_from_weak_dw,
    steps_for_times,
)


class RunnerError(RuntimeError):
    """Orchestration failure (bad checkpoint, unwritable output)."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json_atomic(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _apply_memory_cap() -> None:
    cap_mb = os.environ.get("EWSIM_MEMORY_CAP_MB")
    if cap_mb:
        cap = int(cap_mb) * 1024 * 1024
        resource.setrlimit(resource.RLIMIT_AS, (cap, cap))


@dataclass
class GridPoint:
    name: str
    j_west: float
    L: int
    mu0: float | None = None  # None: pure LDW quench

    @property
    def mixed(self) -> bool:
        return self.mu0 is not None

    def params(self) -> dict:
        d = {"j_west": self.j_west, "L": self.L}
        if self.mixed:
            d["mu0"] = self.mu0
        return d


@dataclass
class PointOutcome:
    name: str
    params: dict
    status: str = "ok"
    error: str | None = None
    convergence: dict | None = None
    telemetry: dict = field(default_factory=dict)


def expand_grid(config: ExperimentConfig) -> list[GridPoint]:
    points = []
    for jw in config.j_west:
        for L in config.L:
            if config.mu0:
                for mu in config.mu0:
                    points.append(
                        GridPoint(f"jw{jw:.4f}_L{L}_mu{mu:.4g}", jw, L, mu)
                    )
            else:
                points.append(GridPoint(f"jw{jw:.4f}_L{L}", jw, L))
    return points


# -- checkpointed engines ----------------------------------------------------


def _checkpoint_paths(pdir: Path) -> dict[str, Path]:
    return {
        "state_npz": pdir / "checkpoint_state.npz",
        "state_mps": pdir / "checkpoint_state.mps",
        "samples": pdir / "checkpoint_samples.npz",
        "meta": pdir / "checkpoint.json",
    }


def _save_checkpoint(pdir: Path, config_hash: str, filled: int,
                     arrays: dict, state_file: Path, extra: dict) -> None:
    paths = _checkpoint_paths(pdir)
    np.savez(paths["samples"], **arrays)
    meta = {
        "config_hash": config_hash,
        "filled": filled,
        "state_file": state_file.name,
        "state_sha256": _sha256(state_file),
        "samples_sha256": _sha256(paths["samples"]),
        **extra,
    }
    _write_json_atomic(paths["meta"], meta)


def _load_checkpoint(pdir: Path, config_hash: str) -> dict | None:
    """Validated checkpoint payload, None if absent, error if corrupt."""
    paths = _checkpoint_paths(pdir)
    if not paths["meta"].exists():
        return None
    with open(paths["meta"]) as fh:
        meta = json.load(fh)
    if meta.get("config_hash") != config_hash:
        raise RunnerError(
            f"checkpoint in {pdir} was written under a different config; "
            "refusing to resume (delete it to start over)"
        )
    state_file = pdir / meta["state_file"]
    if not state_file.exists() or _sha256(state_file) != meta["state_sha256"]:
        raise RunnerError(f"corrupt checkpoint state in {pdir} (hash mismatch)")
    if _sha256(paths["samples"]) != meta["samples_sha256"]:
        raise RunnerError(f"corrupt checkpoint samples in {pdir} (hash mismatch)")
    with np.load(paths["samples"]) as data:
        arrays = {k: data[k].copy() for k in data.files}
    return {"meta": meta, "arrays": arrays, "state_file": state_file}


def run_pure_exact_point(point: GridPoint, config: ExperimentConfig,
                         pdir: Path, config_hash: str) -> TimeSeriesRecord:
    L, N = point.L, point.L // 2
    basis = enumerate_sector(L, N)
    if basis.dimension > config.max_sector_dim:
        raise RunnerError(
            f"sector dimension {basis.dimension} exceeds cap {config.max_sector_dim}"
        )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        H = build_sparse(basis, HoppingParams.from_j_west(point.j_west), OPEN,
                         max_dimension=config.max_sector_dim)
    samples = sample_times_grid(config.t_max_for(L, mixed=False),
                                config.samples_per_decade, config.t_min)
    n = len(samples)
    dens = np.zeros((n, L))
    start = 0
    psi = prepare_ldw(L, N)
    ck = _load_checkpoint(pdir, config_hash)
    if ck is not None:
        start = int(ck["meta"]["filled"])
        dens[:start] = ck["arrays"]["density"][:start]
        with np.load(ck["state_file"]) as data:
            psi = StateVector(data["amplitudes"].copy(), basis, float(data["time"]))
    for k in range(start, n):
        if samples[k] > psi.time:
            psi = krylov_evolve(H, psi, samples[k] - psi.time,
                                krylov_dim=config.krylov_dim, tol=config.krylov_tol)
        dens[k] = psi.density()
        filled = k + 1
        if filled % config.checkpoint_every == 0 and filled < n:
            state_file = _checkpoint_paths(pdir)["state_npz"]
            np.savez(state_file, amplitudes=psi.amplitudes, time=psi.time)
            _save_checkpoint(pdir, config_hash, filled,
                             {"density": dens[:filled]}, state_file, {})
    meta = {
        "L": L, "N": N, "j_west": point.j_west, "j_east": 1 - point.j_west,
        "bc": "open", "method": "krylov", "krylov_dim": config.krylov_dim,
        "tol": config.krylov_tol, "flow_sites": N,
    }
    delta = dens[0, :N].sum() - dens[:, :N].sum(axis=1)
    return TimeSeriesRecord(times=samples, density=dens, delta_n=delta, metadata=meta)


def run_tebd_point(point: GridPoint, config: ExperimentConfig, pdir: Path,
                   config_hash: str, chi: int) -> TimeSeriesRecord:
    L = point.L
    mixed = point.mixed
    dt = config.dt_for(mixed)
    params = HoppingParams.from_j_west(point.j_west)
    t_max = config.t_max_for(L, mixed)
    all_steps = steps_for_times(
        sample_times_grid(t_max, config.samples_per_decade, config.t_min), dt
    )
    tag = f"chi{chi}"
    ckdir = pdir / tag
    ckdir.mkdir(exist_ok=True)
    ck = _load_checkpoint(ckdir, config_hash)
    if ck is not None:
        state = MatrixProductState.load(ck["state_file"], renormalize=not mixed)
        state.cum_discarded = float(ck["meta"]["cum_discarded"])
        state.norm_drift = float(ck["meta"]["norm_drift"])
        arrays = {k: list(v) for k, v in ck["arrays"].items()}
        filled = int(ck["meta"]["filled"])
    else:
        if mixed:
            state = mps_from_weak_dw(L, point.mu0, chi_max=chi)
        else:
            state = mps_from_bits((1 << (L // 2)) - 1, L, chi_max=chi)
        arrays = {}
        filled = 0
    alternate = mixed and config.alternate_mirror_mixed
    while filled < len(all_steps):
        done_step = 0 if filled == 0 else all_steps[filled - 1]
        segment = all_steps[max(filled - 1, 0): filled + config.checkpoint_every]
        rel = [s - done_step for s in segment]
        if rel[0] != 0:
            rel = [0] + rel
        rec = evolve_mps(
            state, params, dt, rel,
            alternate_mirror=alternate,
            panic_discard=config.panic_discard,
            flow_sites=L // 2,
            record_initial=(filled == 0),
        )
        for key, col in (("times", rec.times), ("density", rec.density),
                         ("entropy", rec.entropy), ("trace", rec.trace),
                         ("truncation", rec.truncation)):
            if col is None:
                continue
            arrays.setdefault(key, [])
            arrays[key].extend(list(col))
        filled = len(arrays["times"])
        if filled < len(all_steps):
            state_file = _checkpoint_paths(ckdir)["state_mps"]
            state.save(state_file)
            _save_checkpoint(
                ckdir, config_hash, filled,
                {k: np.array(v) for k, v in arrays.items()},
                state_file,
                {"cum_discarded": state.cum_discarded, "norm_drift": state.norm_drift},
            )
    dens = np.array(arrays["density"])
    # absolute step grid, not per-segment accumulation: byte-determinism
    times = np.array(all_steps, dtype=float) * dt
    flow_sites = L // 2
    delta = dens[0, :flow_sites].sum() - dens[:, :flow_sites].sum(axis=1)
    meta = {
        "L": L, "j_west": point.j_west, "j_east": 1 - point.j_west,
        "bc": "open", "method": "tebd", "chi": chi, "dt": dt,
        "alternate_mirror": alternate, "flow_sites": flow_sites, "mixed": mixed,
    }
    if mixed:
        meta["mu0"] = point.mu0
    return TimeSeriesRecord(
        times=times, density=dens, delta_n=delta, metadata=meta,
        entropy=np.array(arrays["entropy"]) if "entropy" in arrays else None,
        trace=np.array(arrays["trace"]) if "trace" in arrays else None,
        truncation=np.array(arrays["truncation"]) if "truncation" in arrays else None,
    )


def run_dynamics_point(point: GridPoint, config: ExperimentConfig,
                       points_dir: Path, config_hash: str) -> PointOutcome:
    _apply_memory_cap()
    pdir = points_dir / point.name
    pdir.mkdir(parents=True, exist_ok=True)
    outcome = PointOutcome(name=point.name, params=point.params())
    t0 = time.monotonic()
    try:
        use_exact = (not point.mixed) and point.L <= config.exact_cutoff
        if use_exact:
            rec = run_pure_exact_point(point, config, pdir, config_hash)
            records = {"exact": rec}
        else:
            records = {}
            for chi in config.chi:
                records[f"chi{chi}"] = run_tebd_point(
                    point, config, pdir, config_hash, chi
                )
        # convergence ladder verdict on the top two rungs
        verdict: ConvergenceVerdict | None = None
        if len(records) >= 2:
            keys = sorted(records, key=lambda k: int(k.replace("chi", "") or 0))
            verdict = convergence_protocol(
                records[keys[-2]], records[keys[-1]], config.convergence_tol
            )
            outcome.convergence = {
                "chi_low": verdict.chi_low, "chi_high": verdict.chi_high,
                "divergence_time": (verdict.divergence_time
                                    if np.isfinite(verdict.divergence_time) else None),
                "max_difference": verdict.max_difference,
                "tolerance": verdict.tolerance,
            }
        best_key = "exact" if "exact" in records else f"chi{max(config.chi)}"
        best = records[best_key]
        for key, rec in records.items():
            suffix = "" if key == best_key else f"_{key}"
            write_dynamics_csv(rec, pdir / f"dynamics{suffix}.csv")
            write_flow_csv(rec, pdir / f"flow{suffix}.csv")
        write_record_meta(best, pdir / "meta.json")
        # exponent series from the best record
        try:
            cutoff = verdict.divergence_time if verdict is not None else np.inf
            series = ana.instantaneous_exponent(
                best, window=config.smooth_window, validity_cutoff=cutoff,
                label=point.name,
            )
            ana.write_exponent_csv(series, pdir / "exponent.csv")
        except ana.AnalysisError as exc:
            (pdir / "exponent_skipped.txt").write_text(f"{exc}\n")
        if point.mixed:
            rows = []
            for k, t in enumerate(best.times):
                if t <= 0:
                    continue
                try:
                    prof = ana.structure_factor_skewness(
                        best.density[k], point.mu0, time=t
                    )
                    rows.append((t, point.mu0, prof.skewness))
                except ana.AnalysisError:
                    continue
            ana.write_skewness_csv(rows, pdir / "skewness.csv")
            # profile self-similarity scan over the late half of the run
            late = best.times >= best.times.max() / 2
            if late.sum() >= 3 and best.times.max() > 0:
                try:
                    zmin, zmax, zstep = config.z_scan
                    collapse = ana.scaling_collapse(
                        best.times[late][-5:], best.density[late][-5:], point.L,
                        z_grid=np.arange(zmin, zmax + zstep / 2, zstep),
                    )
                    ana.write_collapse_csv(collapse, pdir / "collapse.csv")
                except ana.AnalysisError as exc:
                    (pdir / "collapse_skipped.txt").write_text(f"{exc}\n")
    except Exception as exc:
        outcome.status = "failed"
        outcome.error = f"{type(exc).__name__}: {exc}"
    outcome.telemetry = {
        "wall_s": round(time.monotonic() - t0, 3),
        "maxrss_mb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss // 1024,
    }
    return outcome


def run_spectral_point(point: GridPoint, config: ExperimentConfig,
                       points_dir: Path, config_hash: str) -> PointOutcome:
    _apply_memory_cap()
    pdir = points_dir / point.name
    pdir.mkdir(parents=True, exist_ok=True)
    outcome = PointOutcome(name=point.name, params=point.params())
    t0 = time.monotonic()
    try:
        L = point.L
        basis = enumerate_sector(L, L // 2)
        bc = PERIODIC if config.boundary == "periodic" else OPEN
        params = HoppingParams.from_j_west(point.j_west)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if bc.periodic:
                sector = symmetry_orbits(basis, "momentum")
                block = 1  # a generic block away from k in {0, L/2}
                H = build_sparse(basis, params, bc, sector=sector, block=block)
            else:
                H = build_sparse(basis, params, bc)
        want_vectors = (not bc.periodic) and basis.dimension <= 4000
        report, vectors = diagonalize_dense(
            H, dense_cap=config.max_dense_dim, want_vectors=want_vectors
        )
        write_spectrum_csv(report, pdir / "spectrum.csv")
        stats = None
        try:
            stats = unfold_and_spacings(report)
            write_spacings_csv(stats, pdir / "spacings.csv")
        except SpectralError as exc:
            (pdir / "spacings_skipped.txt").write_text(f"{exc}\n")
        if vectors is not None:
            scan = eigenstate_entropy(vectors, basis, energies=report.energies)
            write_entropy_csv(scan, report.energies, pdir / "entropy.csv")
        write_spectral_sidecar(pdir / "spectral.json", report, stats)
    except Exception as exc:
        outcome.status = "failed"
        outcome.error = f"{type(exc).__name__}: {exc}"
    outcome.telemetry = {
        "wall_s": round(time.monotonic() - t0, 3),
        "maxrss_mb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss // 1024,
    }
    return outcome


# -- aggregation --------------------------------------------------------------


def _aggregate(config: ExperimentConfig, outdir: Path,
               outcomes: list[PointOutcome]) -> None:
    if config.preset == "spectral-suite":
        return
    adir = outdir / "analysis"
    adir.mkdir(exist_ok=True)
    ok = {o.name: o for o in outcomes if o.status == "ok"}
    points = expand_grid(config)
    # plateau table per j_west from the two largest successful L
    rows = []
    for jw in config.j_west:
        mus = config.mu0 or [None]
        for mu in mus:
            cand = [p for p in points
                    if p.j_west == jw and p.mu0 == mu and p.name in ok]
            cand.sort(key=lambda p: p.L)
            if not cand:
                continue
            pair = cand[-2:] if len(cand) >= 2 else cand
            series = []
            for p in pair:
                path = outdir / "points" / p.name / "exponent.csv"
                if not path.exists():
                    continue
                data = np.genfromtxt(path, delimiter=",", names=True)
                cutoff = np.inf
                conv = ok[p.name].convergence
                if conv is not None and conv.get("divergence_time") is not None:
                    cutoff = conv["divergence_time"]
                series.append(ana.ExponentSeries(
                    times=np.atleast_1d(data["t"]),
                    inv_z=np.atleast_1d(data["inv_z"]),
                    window=config.smooth_window, validity_cutoff=cutoff,
                ))
            if not series:
                continue
            try:
                # late half of the shared window, past the initial transient
                t_end = min(min(s.times.max(), s.validity_cutoff) for s in series)
                val, err = ana.plateau_exponent(series[0], series[-1],
                                                t_min=t_end / 2)
                rows.append((jw, mu, pair[0].L, pair[-1].L, val, err))
            except ana.AnalysisError:
                continue
    if rows:
        with open(adir / "plateau.csv", "w") as fh:
            fh.write("j_west,mu0,L_a,L_b,inv_z,inv_z_err\n")
            for jw, mu, la, lb, v, e in rows:
                mu_s = "" if mu is None else f"{mu:.17g}"
                fh.write(f"{jw:.17g},{mu_s},{la},{lb},{v:.17g},{e:.17g}\n")
    # skewness extrapolation per (j_west, L) over the mu grid
    if config.mu0 and len(config.mu0) >= 3:
        for jw in config.j_west:
            for L in config.L:
                samples = []
                times = None
                for mu in sorted(config.mu0):
                    name = f"jw{jw:.4f}_L{L}_mu{mu:.4g}"
                    path = outdir / "points" / name / "skewness.csv"
                    if name not in ok or not path.exists():
                        samples = []
                        break
                    data = np.genfromtxt(path, delimiter=",", names=True)
                    t = np.atleast_1d(data["t"])
                    s = np.atleast_1d(data["S"])
                    if times is None:
                        times = t
                    n = min(len(times), len(t))
                    times = times[:n]
                    samples = [col[:n] for col in samples]
                    samples.append(s[:n])
                if samples:
                    ex = ana.extrapolate_mu0(
                        sorted(config.mu0), np.column_stack(samples), times
                    )
                    ana.write_skew_extrap_csv(
                        ex, adir / f"skew_extrap_jw{jw:.4f}_L{L}.csv"
                    )


# -- top level ----------------------------------------------------------------


def _inventory(outdir: Path) -> dict[str, str]:
    files = {}
    for path in sorted(outdir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            files[str(path.relative_to(outdir))] = _sha256(path)
    return files


def _write_manifest(outdir: Path, config: ExperimentConfig,
                    outcomes: list[PointOutcome], status: str) -> dict:
    manifest = {
        "schema_version": 1,
        "status": status,
        "config": config.canonical(),
        "config_hash": config.config_hash(),
        "points": [
            {
                "name": o.name, "params": o.params, "status": o.status,
                "error": o.error, "convergence": o.convergence,
                "telemetry": o.telemetry,
            }
            for o in outcomes
        ],
        "files": _inventory(outdir),
    }
    _write_json_atomic(outdir / "manifest.json", manifest)
    return manifest


def run_experiment(config: ExperimentConfig, resume: bool = False) -> dict:
    config.validate()
    outdir = config.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "config.yaml", "w") as fh:
        yaml.safe_dump(
            {"schema_version": 1, "preset": config.preset,
             "output_dir": str(outdir), **config.canonical()},
            fh, sort_keys=True,
        )
    points_dir = outdir / "points"
    points_dir.mkdir(exist_ok=True)
    config_hash = config.config_hash()
    points = expand_grid(config)
    previous: dict[str, dict] = {}
    if resume and (outdir / "manifest.json").exists():
        with open(outdir / "manifest.json") as fh:
            old = json.load(fh)
        if old.get("config_hash") != config_hash:
            raise RunnerError(
                "manifest config hash does not match; resume refused "
                "(the run directory belongs to a different configuration)"
            )
        previous = {p["name"]: p for p in old.get("points", [])}
    runner = run_spectral_point if config.preset == "spectral-suite" else run_dynamics_point
    outcomes: list[PointOutcome] = []
    todo = []
    for p in points:
        prior = previous.get(p.name)
        if prior is not None and prior.get("status") == "ok":
            outcomes.append(PointOutcome(
                name=p.name, params=p.params(), status="ok",
                error=None, convergence=prior.get("convergence"),
                telemetry=prior.get("telemetry", {}),
            ))
        else:
            todo.append(p)
    if config.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [
                pool.submit(runner, p, config, points_dir, config_hash)
                for p in todo
            ]
            for fut in futures:
                outcomes.append(fut.result())
                _write_manifest(outdir, config, outcomes, "partial")
    else:
        for p in todo:
            outcomes.append(runner(p, config, points_dir, config_hash))
            _write_manifest(outdir, config, outcomes, "partial")
    order = {p.name: i for i, p in enumerate(points)}
    outcomes.sort(key=lambda o: order[o.name])
    _aggregate(config, outdir, outcomes)
    status = "complete" if all(o.status == "ok" for o in outcomes) else "partial"
    return _write_manifest(outdir, config, outcomes, status)


def resume_experiment(run_dir) -> dict:
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.yaml"
    if not cfg_path.exists():
        raise RunnerError(f"{run_dir} has no config.yaml snapshot to resume from")
    config = load_config(cfg_path)
    config.output_dir = run_dir
    return run_experiment(config, resume=True)


def verify_manifest(run_dir) -> list[str]:
    """Return mismatched/missing files against the manifest inventory."""
    run_dir = Path(run_dir)
    with open(run_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    problems = []
    for rel, digest in manifest.get("files", {}).items():
        path = run_dir / rel
        if not path.exists():
            problems.append(f"missing: {rel}")
        elif _sha256(path) != digest:
            problems.append(f"hash mismatch: {rel}")
    return problems

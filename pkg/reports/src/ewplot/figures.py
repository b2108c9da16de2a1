"""Figure builders over an ewsim run directory.

Consumes only the documented CSV/JSON outputs (dynamics.csv, flow.csv,
exponent.csv, collapse.csv, skewness.csv, analysis/skew_extrap_*.csv,
spectrum.csv, spacings.csv, entropy.csv, manifest.json).  Rendering is
read-only and deterministic: timestamps are suppressed in every backend.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "ewplot"  # deterministic SVG ids
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIGURES = ("heatmap", "exponent", "collapse", "skewness", "spectral")


class ReportError(RuntimeError):
    """Missing or invalid run directory."""


@dataclass
class ReportSpec:
    run_dir: Path
    figures: list[str] = field(default_factory=lambda: list(FIGURES))
    out_dir: Path | None = None
    fmt: str = "png"
    colormap: str = "viridis"
    log_time_axis: bool = True

    def __post_init__(self):
        self.run_dir = Path(self.run_dir)
        if self.out_dir is None:
            self.out_dir = self.run_dir / "figures"
        self.out_dir = Path(self.out_dir)
        unknown = set(self.figures) - set(FIGURES)
        if unknown:
            raise ReportError(f"unknown figures {sorted(unknown)}; pick from {FIGURES}")
        if self.fmt not in ("png", "pdf", "svg"):
            raise ReportError(f"format must be png, pdf or svg, not {self.fmt!r}")


def _load_manifest(run_dir: Path) -> dict:
    path = run_dir / "manifest.json"
    if not path.exists():
        raise ReportError(f"{run_dir} has no manifest.json; not a finished run")
    with open(path) as fh:
        manifest = json.load(fh)
    problems = []
    for rel, digest in manifest.get("files", {}).items():
        target = run_dir / rel
        if not target.exists():
            problems.append(rel)
            continue
        h = hashlib.sha256(target.read_bytes()).hexdigest()
        if h != digest:
            problems.append(rel)
    if problems:
        raise ReportError(
            f"manifest validation failed for {len(problems)} file(s): "
            + ", ".join(problems[:5])
        )
    return manifest


def _savefig(fig, path: Path, fmt: str) -> None:
    # suppress embedded dates so bytes are reproducible
    metadata = {
        "png": {"Software": "ewplot"},
        "pdf": {"CreationDate": None, "Producer": "ewplot"},
        "svg": {"Date": None},
    }[fmt]
    fig.savefig(path, format=fmt, metadata=metadata, dpi=110)
    plt.close(fig)


def _read_csv(path: Path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.shape == ():
        data = data.reshape(1)
    return data


def _dynamics_table(pdir: Path):
    data = _read_csv(pdir / "dynamics.csv")
    times = np.unique(data["t"])
    L = int(data["i"].max())
    dens = data["density"].reshape(len(times), L)
    return times, dens


class Renderer:
    def __init__(self, spec: ReportSpec):
        self.spec = spec
        self.manifest = _load_manifest(spec.run_dir)
        self.points = sorted(
            p.name for p in (spec.run_dir / "points").iterdir() if p.is_dir()
        ) if (spec.run_dir / "points").exists() else []
        self.rendered: list[str] = []
        self.skipped: list[tuple[str, str]] = []

    # -- individual figures -------------------------------------------------

    def heatmap(self) -> None:
        made = False
        for name in self.points:
            pdir = self.spec.run_dir / "points" / name
            if not (pdir / "dynamics.csv").exists():
                continue
            times, dens = _dynamics_table(pdir)
            fig, ax = plt.subplots(figsize=(4.2, 3.6))
            # site on the horizontal axis, time increasing downward
            im = ax.imshow(
                dens, aspect="auto", origin="upper", cmap=self.spec.colormap,
                extent=(0.5, dens.shape[1] + 0.5, times[-1], times[0]),
                vmin=0.0, vmax=1.0,
            )
            ax.set_xlabel("site i")
            ax.set_ylabel("t")
            ax.set_title(f"density  {name}")
            fig.colorbar(im, ax=ax, label=r"$\langle n_i \rangle$")
            self._emit(fig, f"heatmap_{name}")
            made = True
        if not made:
            self.skipped.append(("heatmap", "no dynamics.csv in any point"))

    def exponent(self) -> None:
        series = []
        for name in self.points:
            path = self.spec.run_dir / "points" / name / "exponent.csv"
            if path.exists():
                data = _read_csv(path)
                series.append((name, np.atleast_1d(data["t"]), np.atleast_1d(data["inv_z"])))
        if not series:
            self.skipped.append(("exponent", "no exponent.csv in any point"))
            return
        fig, ax = plt.subplots(figsize=(4.6, 3.4))
        for name, t, inv_z in series:
            ax.plot(t, inv_z, lw=1.2, label=name)
        ax.axhline(1.0, color="green", ls="--", lw=0.8, label=r"ballistic $1/z=1$")
        ax.axhline(0.5, color="red", ls="--", lw=0.8, label=r"diffusive $1/z=1/2$")
        if self.spec.log_time_axis:
            ax.set_xscale("log")
        ax.set_xlabel("t")
        ax.set_ylabel(r"$1/z$")
        ax.set_ylim(0, 2.1)
        ax.legend(fontsize=6, ncol=2)
        self._emit(fig, "exponent")

    def collapse(self) -> None:
        made = False
        for name in self.points:
            pdir = self.spec.run_dir / "points" / name
            if not (pdir / "collapse.csv").exists() or not (pdir / "dynamics.csv").exists():
                continue
            scan = _read_csv(pdir / "collapse.csv")
            best_z = float(scan["z_scan"][np.argmin(scan["cost"])])
            times, dens = _dynamics_table(pdir)
            late = times >= times.max() / 2
            L = dens.shape[1]
            x = np.arange(1, L + 1) - L / 2
            fig, axes = plt.subplots(1, 2, figsize=(7.0, 3.2))
            for t, prof in zip(times[late][-5:], dens[late][-5:]):
                axes[0].plot(x / t ** (1 / best_z), prof, lw=1.0, label=f"t={t:g}")
            axes[0].set_xlabel(rf"$x / t^{{1/{best_z:.2f}}}$")
            axes[0].set_ylabel(r"$\langle n \rangle$")
            axes[0].legend(fontsize=6)
            axes[1].plot(scan["z_scan"], scan["cost"], lw=1.0)
            axes[1].axvline(best_z, color="red", ls="--", lw=0.8)
            axes[1].set_xlabel("z")
            axes[1].set_ylabel("collapse cost")
            axes[1].set_yscale("log")
            fig.suptitle(f"profile collapse  {name}  (best z = {best_z:.2f})")
            self._emit(fig, f"collapse_{name}")
            made = True
        if not made:
            self.skipped.append(("collapse", "no collapse.csv in any point"))

    def skewness(self) -> None:
        curves = []
        for name in self.points:
            path = self.spec.run_dir / "points" / name / "skewness.csv"
            if path.exists():
                data = _read_csv(path)
                curves.append((name, data))
        extraps = sorted((self.spec.run_dir / "analysis").glob("skew_extrap_*.csv")) \
            if (self.spec.run_dir / "analysis").exists() else []
        if not curves and not extraps:
            self.skipped.append(("skewness", "no skewness.csv or extrapolation files"))
            return
        n_panels = (1 if curves else 0) + (1 if extraps else 0)
        fig, axes = plt.subplots(1, n_panels, figsize=(3.8 * n_panels, 3.2), squeeze=False)
        col = 0
        if curves:
            ax = axes[0][col]
            for name, data in curves:
                mu = float(np.atleast_1d(data["mu"])[0])
                ax.plot(np.atleast_1d(data["t"]), np.atleast_1d(data["S"]),
                        lw=1.0, label=rf"{name} ($\mu_0$={mu:g})")
            ax.axhline(0.0, color="gray", lw=0.6)
            ax.set_xlabel("t")
            ax.set_ylabel(r"skewness $\mathcal{S}$")
            ax.legend(fontsize=5)
            col += 1
        if extraps:
            ax = axes[0][col]
            for path in extraps:
                data = _read_csv(path)
                label = path.stem.replace("skew_extrap_", "")
                t = np.atleast_1d(data["t"])
                s0 = np.atleast_1d(data["S0"])
                err = np.atleast_1d(data["S0_err"])
                ax.errorbar(t, s0, yerr=2 * err, lw=1.0, capsize=2, label=label)
            ax.axhline(0.0, color="gray", lw=0.6)
            ax.set_xlabel("t")
            ax.set_ylabel(r"$\mathcal{S}_0$  ($\mu \to 0$)")
            ax.legend(fontsize=5)
        self._emit(fig, "skewness")

    def spectral(self) -> None:
        made = False
        for name in self.points:
            pdir = self.spec.run_dir / "points" / name
            if not (pdir / "spectrum.csv").exists():
                continue
            spectrum = _read_csv(pdir / "spectrum.csv")
            panels = 1
            has_spacings = (pdir / "spacings.csv").exists()
            has_entropy = (pdir / "entropy.csv").exists()
            panels += int(has_spacings) + int(has_entropy)
            fig, axes = plt.subplots(1, panels, figsize=(3.4 * panels, 3.0), squeeze=False)
            ax = axes[0][0]
            eps = np.atleast_1d(spectrum["eps_n"])
            ax.plot(np.linspace(0, 1, len(eps)), eps, lw=0.8)
            ax.set_xlabel("n / D")
            ax.set_ylabel(r"$\epsilon_n = E_n / L$")
            k = 1
            if has_spacings:
                s = np.atleast_1d(_read_csv(pdir / "spacings.csv")["s_k"])
                ax = axes[0][k]
                ax.hist(s, bins=40, density=True, alpha=0.6, label="data")
                grid = np.linspace(0, max(4.0, s.max()), 400)
                ax.plot(grid, (np.pi * grid / 2) * np.exp(-np.pi * grid ** 2 / 4),
                        "g--", lw=1.0, label="GOE")
                ax.plot(grid, (32 / np.pi ** 2) * grid ** 2 * np.exp(-4 * grid ** 2 / np.pi),
                        "b-.", lw=1.0, label="GUE")
                ax.plot(grid, np.exp(-grid), "r:", lw=1.0, label="Poisson")
                ax.set_xlabel("s")
                ax.set_ylabel("P(s)")
                ax.legend(fontsize=6)
                k += 1
            if has_entropy:
                ent = _read_csv(pdir / "entropy.csv")
                ax = axes[0][k]
                ax.scatter(np.atleast_1d(ent["E_n"]), np.atleast_1d(ent["S"]),
                           s=2, alpha=0.5)
                ax.set_xlabel(r"$E_n$")
                ax.set_ylabel(r"$S_{L/2}$")
            fig.suptitle(f"spectrum  {name}")
            self._emit(fig, f"spectral_{name}")
            made = True
        if not made:
            self.skipped.append(("spectral", "no spectrum.csv in any point"))

    # -- plumbing -------------------------------------------------------------

    def _emit(self, fig, stem: str) -> None:
        self.spec.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.spec.out_dir / f"{stem}.{self.spec.fmt}"
        _savefig(fig, path, self.spec.fmt)
        self.rendered.append(path.name)

    def index(self) -> None:
        lines = [
            "<html><head><title>ewsim report</title></head><body>",
            f"<h1>Run report</h1>",
            f"<p>status: {self.manifest.get('status')}  |  "
            f"config hash: <code>{self.manifest.get('config_hash', '')[:16]}</code></p>",
            "<h2>Figures</h2><ul>",
        ]
        for name in self.rendered:
            lines.append(f'<li><a href="{name}">{name}</a></li>')
        lines.append("</ul>")
        if self.skipped:
            lines.append("<h2>Skipped</h2><ul>")
            for fig_name, reason in self.skipped:
                lines.append(f"<li>{fig_name}: {reason}</li>")
            lines.append("</ul>")
        lines.append("<h2>Config</h2><pre>")
        lines.append(json.dumps(self.manifest.get("config", {}), indent=2, sort_keys=True))
        lines.append("</pre></body></html>")
        self.spec.out_dir.mkdir(parents=True, exist_ok=True)
        (self.spec.out_dir / "index.html").write_text("\n".join(lines) + "\n")


def render_reports(spec: ReportSpec) -> dict:
    """Render the selected figures plus an index page.

    Returns {"rendered": [...], "skipped": [(figure, reason), ...]}; missing
    series produce named skips, never a crash.
    """
    renderer = Renderer(spec)
    for name in spec.figures:
        getattr(renderer, name)()
    renderer.index()
    return {"rendered": renderer.rendered, "skipped": renderer.skipped}

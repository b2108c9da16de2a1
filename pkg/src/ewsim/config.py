"""Run configuration: YAML schema, presets, validation, canonical hashing.

The file format is a small key-value tree (see README for the schema);
every run echoes its fully-resolved config into the output manifest, and
resuming checks the canonical hash so physics parameters cannot drift
between the original run and the resume.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

SCHEMA_VERSION = 1

PRESETS = ("dw-phase", "inftemp-diffusion", "skewness-sweep",
           "spectral-suite", "even-odd", "custom")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class ExperimentConfig:
    preset: str
    output_dir: Path
    j_west: list[float]
    L: list[int]
    mu0: list[float] = field(default_factory=list)
    boundary: str = "open"
    # engine
    exact_cutoff: int = 24
    krylov_dim: int = 30
    krylov_tol: float = 1e-9
    dt_pure: float = 0.05
    dt_mixed: float = 0.1
    chi: list[int] = field(default_factory=lambda: [256, 512])
    panic_discard: float = 1e-4
    alternate_mirror_mixed: bool = True
    # time grid
    t_max: float | None = None  # None: preset rule (0.75*L/2 pure, 60 mixed)
    samples_per_decade: int = 48
    t_min: float = 0.1
    # analysis
    smooth_window: int = 5
    convergence_tol: float = 1e-3
    z_scan: tuple[float, float, float] = (1.0, 3.0, 0.01)
    # resources
    workers: int = 1
    max_dense_dim: int = 20000
    max_sector_dim: int = 5_000_000
    checkpoint_every: int = 16  # samples between checkpoints

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; pick one of {PRESETS}")
        if not self.j_west:
            raise ConfigError("empty j_west grid: nothing to run")
        for jw in self.j_west:
            if not (0.0 <= jw <= 1.0):
                raise ConfigError(f"j_west={jw} outside [0, 1]")
        if not self.L:
            raise ConfigError("empty L grid: nothing to run")
        exact_cap = 64 if self.preset == "spectral-suite" else 1024
        for L in self.L:
            if not (2 <= L <= exact_cap):
                raise ConfigError(f"L={L} outside 2..{exact_cap} for {self.preset}")
        for mu in self.mu0:
            if not (0.0 < abs(mu) < 0.5):
                raise ConfigError(f"mu0={mu} outside (0, 1/2)")
        if self.boundary not in ("open", "periodic"):
            raise ConfigError(f"boundary must be open or periodic, got {self.boundary!r}")
        if list(self.chi) != sorted(set(self.chi)):
            raise ConfigError("chi ladder must be strictly increasing")
        if any(c < 1 for c in self.chi):
            raise ConfigError("chi values must be positive")
        if self.dt_pure <= 0 or self.dt_mixed <= 0:
            raise ConfigError("Trotter steps must be positive")
        if self.krylov_dim < 2:
            raise ConfigError("krylov_dim must be at least 2")
        if self.t_max is not None and self.t_max <= 0:
            raise ConfigError("t_max must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def t_max_for(self, L: int, mixed: bool) -> float:
        if self.t_max is not None:
            return self.t_max
        if mixed:
            return 60.0
        if self.preset == "even-odd":
            return (3.0 if (L // 2) % 2 == 0 else 2.0) * L
        return 0.75 * L / 2.0

    def dt_for(self, mixed: bool) -> float:
        return self.dt_mixed if mixed else self.dt_pure

    def canonical(self) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "preset": self.preset,
            "grid": {
                "j_west": [float(x) for x in self.j_west],
                "L": [int(x) for x in self.L],
                "mu0": [float(x) for x in self.mu0],
                "boundary": self.boundary,
            },
            "engine": {
                "exact_cutoff": self.exact_cutoff,
                "krylov_dim": self.krylov_dim,
                "krylov_tol": self.krylov_tol,
                "dt_pure": self.dt_pure,
                "dt_mixed": self.dt_mixed,
                "chi": [int(c) for c in self.chi],
                "panic_discard": self.panic_discard,
                "alternate_mirror_mixed": self.alternate_mirror_mixed,
            },
            "time": {
                "t_max": self.t_max,
                "samples_per_decade": self.samples_per_decade,
                "t_min": self.t_min,
            },
            "analysis": {
                "smooth_window": self.smooth_window,
                "convergence_tol": self.convergence_tol,
                "z_scan": list(self.z_scan),
            },
        }
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_PRESET_GRIDS: dict[str, dict] = {
    # desk-scale defaults; paper-scale variants ship as config files
    "dw-phase": {"j_west": [1 / 3, 0.5, 2 / 3, 1.0], "L": [14, 20, 24], "mu0": []},
    "inftemp-diffusion": {"j_west": [0.5], "L": [128], "mu0": [0.05],
                          "chi": [128], "t_max": 60.0},
    "skewness-sweep": {"j_west": [1 / 3, 0.5, 2 / 3], "L": [128],
                       "mu0": [0.01, 0.02, 0.035, 0.05], "chi": [128], "t_max": 60.0},
    "spectral-suite": {"j_west": [1 / 3, 0.5], "L": [12, 14, 16], "mu0": []},
    "even-odd": {"j_west": [0.25], "L": [20, 22], "mu0": []},
}


def _get(tree: dict, *keys, default=None):
    node = tree
    for k in keys:
        if not isinstance(node, dict) or k not in node:
            return default
        node = node[k]
    return node


def config_from_tree(tree: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    version = tree.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version must be {SCHEMA_VERSION}, got {version!r}"
        )
    preset = tree.get("preset", "custom")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    defaults = _PRESET_GRIDS.get(preset, {})
    out_dir = tree.get("output_dir")
    if out_dir is None:
        raise ConfigError("output_dir is required")
    root = Path(os.environ.get("EWSIM_OUTPUT_ROOT", "."))
    output_dir = (base_dir or root) / out_dir if not Path(out_dir).is_absolute() else Path(out_dir)

    def pick(path_keys, preset_key, fallback):
        val = _get(tree, *path_keys)
        if val is None:
            return defaults.get(preset_key, fallback)
        return val

    cfg = ExperimentConfig(
        preset=preset,
        output_dir=output_dir,
        j_west=list(pick(("grid", "j_west"), "j_west", [])),
        L=list(pick(("grid", "L"), "L", [])),
        mu0=list(pick(("grid", "mu0"), "mu0", [])),
        boundary=pick(("grid", "boundary"), "boundary", "open"),
        exact_cutoff=int(_get(tree, "engine", "exact_cutoff", default=24)),
        krylov_dim=int(_get(tree, "engine", "krylov_dim", default=30)),
        krylov_tol=float(_get(tree, "engine", "krylov_tol", default=1e-9)),
        dt_pure=float(_get(tree, "engine", "dt_pure", default=0.05)),
        dt_mixed=float(_get(tree, "engine", "dt_mixed", default=0.1)),
        chi=[int(c) for c in pick(("engine", "chi"), "chi", [256, 512])],
        panic_discard=float(_get(tree, "engine", "panic_discard", default=1e-4)),
        alternate_mirror_mixed=bool(
            _get(tree, "engine", "alternate_mirror_mixed", default=True)
        ),
        t_max=pick(("time", "t_max"), "t_max", None),
        samples_per_decade=int(_get(tree, "time", "samples_per_decade", default=48)),
        t_min=float(_get(tree, "time", "t_min", default=0.1)),
        smooth_window=int(_get(tree, "analysis", "smooth_window", default=5)),
        convergence_tol=float(_get(tree, "analysis", "convergence_tol", default=1e-3)),
        z_scan=tuple(_get(tree, "analysis", "z_scan", default=(1.0, 3.0, 0.01))),
        workers=int(os.environ.get("EWSIM_WORKERS",
                                   _get(tree, "resources", "workers", default=1))),
        max_dense_dim=int(_get(tree, "resources", "max_dense_dim", default=20000)),
        max_sector_dim=int(_get(tree, "resources", "max_sector_dim", default=5_000_000)),
        checkpoint_every=int(_get(tree, "resources", "checkpoint_every", default=16)),
    )
    if cfg.t_max is not None:
        cfg.t_max = float(cfg.t_max)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with open(path) as fh:
        tree = yaml.safe_load(fh)
    return config_from_tree(tree, base_dir=path.parent)

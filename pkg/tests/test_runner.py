import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from ewsim.config import ConfigError, config_from_tree, load_config
from ewsim.runner import (
    expand_grid,
    resume_experiment,
    run_experiment,
    verify_manifest,
)
from ewsim.cli import main as cli_main


def tiny_tree(outdir, **overrides):
    tree = {
        "schema_version": 1,
        "preset": "custom",
        "output_dir": str(outdir),
        "grid": {"j_west": [0.5], "L": [8], "mu0": []},
        "engine": {"chi": [16], "dt_pure": 0.1},
        "time": {"t_max": 1.5},
        "resources": {"checkpoint_every": 4},
    }
    for key, val in overrides.items():
        tree[key] = val
    return tree


def test_config_validation_errors(tmp_path):
    with pytest.raises(ConfigError, match="empty"):
        config_from_tree(tiny_tree(tmp_path, grid={"j_west": [], "L": [8]}))
    with pytest.raises(ConfigError, match="schema_version"):
        config_from_tree({"preset": "custom", "output_dir": "x"})
    with pytest.raises(ConfigError, match="preset"):
        config_from_tree({**tiny_tree(tmp_path), "preset": "bogus"})
    with pytest.raises(ConfigError, match="ladder"):
        config_from_tree(tiny_tree(tmp_path, engine={"chi": [64, 32]}))
    with pytest.raises(ConfigError, match="j_west"):
        config_from_tree(tiny_tree(tmp_path, grid={"j_west": [1.2], "L": [8]}))


def test_preset_grids_fill_defaults(tmp_path):
    cfg = config_from_tree({
        "schema_version": 1, "preset": "even-odd", "output_dir": str(tmp_path / "eo"),
    })
    assert cfg.j_west == [0.25]
    assert cfg.L == [20, 22]
    assert cfg.t_max_for(20, mixed=False) == 60.0
    assert cfg.t_max_for(22, mixed=False) == 44.0
    cfg2 = config_from_tree({
        "schema_version": 1, "preset": "inftemp-diffusion", "output_dir": str(tmp_path / "it"),
    })
    assert cfg2.mu0 == [0.05] and cfg2.chi == [128] and cfg2.L == [128]


def test_config_hash_stability(tmp_path):
    a = config_from_tree(tiny_tree(tmp_path))
    b = config_from_tree(tiny_tree(tmp_path, resources={"checkpoint_every": 99}))
    assert a.config_hash() == b.config_hash()  # resources are not physics
    c = config_from_tree(tiny_tree(tmp_path, time={"t_max": 2.0}))
    assert a.config_hash() != c.config_hash()


def test_expand_grid_names():
    cfg = config_from_tree(tiny_tree("/tmp/x", grid={
        "j_west": [0.5, 1 / 3], "L": [8, 10], "mu0": [0.01],
    }))
    points = expand_grid(cfg)
    assert len(points) == 4
    assert points[0].name == "jw0.5000_L8_mu0.01"
    assert all(p.mixed for p in points)


def test_tiny_run_end_to_end(tmp_path):
    cfg = config_from_tree(tiny_tree(tmp_path / "run"))
    manifest = run_experiment(cfg)
    assert manifest["status"] == "complete"
    assert verify_manifest(tmp_path / "run") == []
    pdir = tmp_path / "run" / "points" / "jw0.5000_L8"
    for name in ("dynamics.csv", "flow.csv", "meta.json", "exponent.csv"):
        assert (pdir / name).exists(), name
    meta = json.loads((pdir / "meta.json").read_text())
    assert meta["method"] == "krylov"
    # particle conservation in the written dynamics
    table = np.genfromtxt(pdir / "dynamics.csv", delimiter=",", names=True)
    per_time = table["density"].reshape(-1, 8).sum(axis=1)
    assert np.abs(per_time - 4.0).max() < 1e-8


def test_tebd_path_with_ladder_and_convergence(tmp_path):
    cfg = config_from_tree(tiny_tree(
        tmp_path / "run",
        grid={"j_west": [0.5], "L": [26], "mu0": []},
        engine={"chi": [8, 16], "dt_pure": 0.1},
        time={"t_max": 1.0},
    ))
    manifest = run_experiment(cfg)
    assert manifest["status"] == "complete"
    point = manifest["points"][0]
    assert point["convergence"] is not None
    assert point["convergence"]["chi_low"] == 8
    pdir = tmp_path / "run" / "points" / "jw0.5000_L26"
    assert (pdir / "dynamics.csv").exists()       # best rung
    assert (pdir / "dynamics_chi8.csv").exists()  # ladder rung


def test_mixed_point_writes_skewness(tmp_path):
    cfg = config_from_tree(tiny_tree(
        tmp_path / "run",
        grid={"j_west": [0.4], "L": [10], "mu0": [0.02, 0.03, 0.04]},
        engine={"chi": [12], "dt_mixed": 0.1},
        time={"t_max": 1.0},
    ))
    manifest = run_experiment(cfg)
    assert manifest["status"] == "complete"
    pdir = tmp_path / "run" / "points" / "jw0.4000_L10_mu0.02"
    assert (pdir / "skewness.csv").exists()
    extraps = list((tmp_path / "run" / "analysis").glob("skew_extrap_*.csv"))
    assert len(extraps) == 1
    data = np.genfromtxt(extraps[0], delimiter=",", names=True)
    assert "S0" in data.dtype.names


def test_determinism_same_config_same_bytes(tmp_path):
    trees = [tiny_tree(tmp_path / d) for d in ("a", "b")]
    for t in trees:
        run_experiment(config_from_tree(t))
    for rel in ("points/jw0.5000_L8/dynamics.csv", "points/jw0.5000_L8/flow.csv"):
        da = hashlib.sha256((tmp_path / "a" / rel).read_bytes()).hexdigest()
        db = hashlib.sha256((tmp_path / "b" / rel).read_bytes()).hexdigest()
        assert da == db


def test_resume_after_interrupt_identical(tmp_path):
    import ewsim.runner as R

    run_experiment(config_from_tree(tiny_tree(
        tmp_path / "straight",
        grid={"j_west": [1 / 3], "L": [26], "mu0": []},
        engine={"chi": [12], "dt_pure": 0.1},
        time={"t_max": 2.0},
    )))
    calls = {"n": 0}
    orig = R.evolve_mps
    def bomb(*a, **k):
        calls["n"] += 1
        if calls["n"] == 3:
            raise RuntimeError("injected crash")
        return orig(*a, **k)
    R.evolve_mps = bomb
    try:
        m = run_experiment(config_from_tree(tiny_tree(
            tmp_path / "resumed",
            grid={"j_west": [1 / 3], "L": [26], "mu0": []},
            engine={"chi": [12], "dt_pure": 0.1},
            time={"t_max": 2.0},
        )))
    finally:
        R.evolve_mps = orig
    assert m["status"] == "partial"
    m2 = resume_experiment(tmp_path / "resumed")
    assert m2["status"] == "complete"
    for rel in ("points/jw0.3333_L26/dynamics.csv", "points/jw0.3333_L26/flow.csv"):
        a = (tmp_path / "straight" / rel).read_bytes()
        b = (tmp_path / "resumed" / rel).read_bytes()
        assert a == b, rel


def test_resume_refuses_changed_config(tmp_path):
    cfg = config_from_tree(tiny_tree(tmp_path / "run"))
    run_experiment(cfg)
    changed = config_from_tree(tiny_tree(tmp_path / "run", time={"t_max": 9.0}))
    from ewsim.runner import RunnerError
    with pytest.raises(RunnerError, match="hash"):
        run_experiment(changed, resume=True)


def test_corrupt_checkpoint_fails_point(tmp_path):
    import ewsim.runner as R

    calls = {"n": 0}
    orig = R.evolve_mps
    def bomb(*a, **k):
        calls["n"] += 1
        if calls["n"] == 2:
            raise RuntimeError("crash")
        return orig(*a, **k)
    R.evolve_mps = bomb
    try:
        run_experiment(config_from_tree(tiny_tree(
            tmp_path / "run",
            grid={"j_west": [0.5], "L": [26], "mu0": []},
            engine={"chi": [12], "dt_pure": 0.1},
            time={"t_max": 2.0},
            resources={"checkpoint_every": 3},
        )))
    finally:
        R.evolve_mps = orig
    ck = tmp_path / "run/points/jw0.5000_L26/chi12/checkpoint_state.mps"
    blob = bytearray(ck.read_bytes())
    blob[64] ^= 0xFF
    ck.write_bytes(bytes(blob))
    m = resume_experiment(tmp_path / "run")
    point = m["points"][0]
    assert point["status"] == "failed"
    assert "hash mismatch" in point["error"]


def test_spectral_suite_point(tmp_path):
    cfg = config_from_tree({
        "schema_version": 1,
        "preset": "spectral-suite",
        "output_dir": str(tmp_path / "spec"),
        "grid": {"j_west": [1 / 3], "L": [10], "boundary": "open"},
    })
    manifest = run_experiment(cfg)
    assert manifest["status"] == "complete"
    pdir = tmp_path / "spec" / "points" / "jw0.3333_L10"
    assert (pdir / "spectrum.csv").exists()
    assert (pdir / "entropy.csv").exists()
    assert (pdir / "spectral.json").exists()
    # 252 levels is below the unfolding minimum after trimming: skip note
    side = json.loads((pdir / "spectral.json").read_text())
    assert side["levels"] == 252


def test_cli_validate_run_report(tmp_path, capsys):
    cfg_file = tmp_path / "cfg.yaml"
    cfg_file.write_text(yaml.safe_dump(tiny_tree(tmp_path / "run")))
    assert cli_main(["validate", str(cfg_file)]) == 0
    assert cli_main(["run", str(cfg_file)]) == 0
    assert cli_main(["report", str(tmp_path / "run")]) == 0
    out = capsys.readouterr().out
    assert "status: complete" in out
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: 99\n")
    assert cli_main(["validate", str(bad)]) == 2


def test_cli_missing_manifest(tmp_path):
    assert cli_main(["report", str(tmp_path / "nowhere")]) == 2


def test_shipped_configs_validate():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "configs"
    found = sorted(root.rglob("*.yaml"))
    assert len(found) >= 7
    for path in found:
        cfg = load_config(path)
        cfg.validate()


def test_primary_has_no_plotting_dependency():
    import sys

    import ewsim  # noqa: F401
    import ewsim.runner  # noqa: F401
    import ewsim.cli  # noqa: F401

    assert not any(m == "ewplot" or m.startswith("ewplot.") for m in sys.modules)
    assert not any(m == "matplotlib" or m.startswith("matplotlib.") for m in sys.modules)

"""Command line front end: run / resume / validate / report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .runner import RunnerError, resume_experiment, run_experiment, verify_manifest


def _cmd_validate(args) -> int:
    try:
        config = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2
    print(f"ok: preset={config.preset}, {len(config.j_west)} j_west x "
          f"{len(config.L)} L x {max(1, len(config.mu0))} mu0 points "
          f"-> {config.output_dir}")
    return 0


def _cmd_run(args) -> int:
    try:
        config = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    manifest = run_experiment(config)
    failed = [p["name"] for p in manifest["points"] if p["status"] != "ok"]
    print(f"run {manifest['status']}: {len(manifest['points'])} points, "
          f"{len(failed)} failed -> {config.output_dir}/manifest.json")
    for name in failed:
        print(f"  failed: {name}", file=sys.stderr)
    return 0 if not failed else 1


def _cmd_resume(args) -> int:
    try:
        manifest = resume_experiment(args.run_dir)
    except (RunnerError, ConfigError, OSError) as exc:
        print(f"resume error: {exc}", file=sys.stderr)
        return 2
    failed = [p["name"] for p in manifest["points"] if p["status"] != "ok"]
    print(f"resume {manifest['status']}: {len(failed)} failed points")
    return 0 if not failed else 1


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        print(f"no manifest in {run_dir}", file=sys.stderr)
        return 2
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    problems = verify_manifest(run_dir)
    print(f"status: {manifest['status']}   points: {len(manifest['points'])}   "
          f"files: {len(manifest.get('files', {}))}   "
          f"integrity: {'ok' if not problems else f'{len(problems)} problems'}")
    for p in problems[:10]:
        print(f"  {p}", file=sys.stderr)
    print(f"{'point':34s} {'status':8s} {'wall[s]':>9s} {'rss[MB]':>8s}  convergence")
    for p in manifest["points"]:
        conv = p.get("convergence") or {}
        conv_s = (f"t_div={conv['divergence_time']:.3g}"
                  if conv.get("divergence_time") is not None else "-")
        tele = p.get("telemetry") or {}
        print(f"{p['name']:34s} {p['status']:8s} "
              f"{tele.get('wall_s', float('nan')):9.1f} "
              f"{tele.get('maxrss_mb', 0):8d}  {conv_s}")
    plateau = run_dir / "analysis" / "plateau.csv"
    if plateau.exists():
        print("\nplateau exponents (1/z):")
        print(plateau.read_text().rstrip())
    for extrap in sorted((run_dir / "analysis").glob("skew_extrap_*.csv")) if (run_dir / "analysis").exists() else []:
        print(f"\n{extrap.name}:")
        print(extrap.read_text().rstrip())
    return 0 if not problems else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ewsim",
        description="Constrained East-West chain: quenches, spectra, transport analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", help="YAML config file")
    p_run.set_defaults(func=_cmd_run)
    p_res = sub.add_parser("resume", help="resume an interrupted run directory")
    p_res.add_argument("run_dir", help="existing output directory")
    p_res.set_defaults(func=_cmd_resume)
    p_val = sub.add_parser("validate", help="validate a config file")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)
    p_rep = sub.add_parser("report", help="summarize a finished run directory")
    p_rep.add_argument("run_dir")
    p_rep.set_defaults(func=_cmd_report)
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())

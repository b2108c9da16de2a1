"""ewplot <run-dir> [--figures LIST] [--format png|pdf|svg] [--out DIR]"""

from __future__ import annotations

import argparse
import sys

from .figures import FIGURES, ReportError, ReportSpec, render_reports


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ewplot", description="Render static figures from an ewsim run directory"
    )
    parser.add_argument("run_dir", help="finished run directory (with manifest.json)")
    parser.add_argument(
        "--figures", default=",".join(FIGURES),
        help=f"comma-separated subset of {','.join(FIGURES)} (empty for index only)",
    )
    parser.add_argument("--format", default="png", choices=("png", "pdf", "svg"))
    parser.add_argument("--out", default=None, help="output directory (default <run>/figures)")
    args = parser.parse_args(argv)
    figures = [f for f in args.figures.split(",") if f]
    try:
        spec = ReportSpec(run_dir=args.run_dir, figures=figures,
                          fmt=args.format, out_dir=args.out)
        result = render_reports(spec)
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"rendered {len(result['rendered'])} figure(s) -> {spec.out_dir}")
    for fig_name, reason in result["skipped"]:
        print(f"skipped {fig_name}: {reason}", file=sys.stderr)
    return 1 if result["skipped"] else 0


if __name__ == "__main__":
    raise SystemExit(main())

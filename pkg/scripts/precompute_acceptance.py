#!/usr/bin/env python3
"""Populate the acceptance-test cache (hours of compute at desk scale).

Run before `pytest` to front-load the heavy physics; every item is skipped
if its cache file already exists.  Usage:

    python scripts/precompute_acceptance.py [name-substring ...]
"""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

import _heavy  # noqa: E402


def main(argv: list[str]) -> int:
    filters = argv or [""]
    t_start = time.time()
    for name, builder in _heavy.ALL_ITEMS:
        if not any(f in name for f in filters):
            continue
        t0 = time.time()
        print(f"[{time.strftime('%H:%M:%S')}] {name} ...", flush=True)
        try:
            builder()
        except Exception as exc:  # keep going; the test will surface it
            print(f"  FAILED: {exc!r}", flush=True)
            continue
        print(f"  done in {time.time() - t0:.1f}s", flush=True)
    print(f"total {time.time() - t_start:.1f}s", flush=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))

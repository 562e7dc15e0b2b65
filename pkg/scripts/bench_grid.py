"""Time full-length rollouts of all twelve architectures on one or more meshes.

Each spacing gets its own ``bench`` run directory; the combined table goes to
``<out>/bench_all.csv``.

    python3 scripts/bench_grid.py --spacings 10000 5000 --repeats 5 --out runs/bench
"""

import argparse
import csv
import json
import sys
from pathlib import Path

from kangcn.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--spacings", type=float, nargs="+", default=[10000.0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--n-steps", type=int, default=239)
    ap.add_argument("--out", type=Path, default=Path("runs/bench"))
    args = ap.parse_args()

    rows = []
    for spacing in args.spacings:
        run = args.out / f"mesh{int(spacing)}"
        run.mkdir(parents=True, exist_ok=True)
        cfg = run / "request.json"
        cfg.write_text(json.dumps({"spacing_m": spacing, "repeats": args.repeats, "n_steps": args.n_steps}))
        code = cli_main(["bench", "--config", str(cfg), "--out", str(run)])
        if code:
            sys.exit(code)
        rows += list(csv.DictReader(open(run / "bench.csv")))
    with open(args.out / "bench_all.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['mesh']:10s} {r['architecture']:9s} {int(r['parameter_count']):6d} params "
              f"{float(r['median_seconds']):8.3f}s")


if __name__ == "__main__":
    main()

"""Run every shipped config through the CLI and collect the reports.

Usage:
    python scripts/run_all.py [--out OUTDIR]

Each config gets its own subdirectory of OUTDIR (default ./reports) so the
JSON/CSV/markdown trios never collide.  Exit status is the worst status
seen: 0 all pass, 3 something indeterminate, 1 something failed.
"""

import argparse
import sys
from pathlib import Path

from gradlab import cli

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="reports", help="report directory")
    args = parser.parse_args(argv)

    worst = 0
    for config in sorted(CONFIG_DIR.glob("*.cfg")):
        out_dir = Path(args.out) / config.stem
        print(f"=== {config.name} -> {out_dir}")
        code = cli.main(["check", "--config", str(config), "--out", str(out_dir)])
        print(f"=== {config.name}: exit {code}")
        # exit 1 (fail) dominates exit 3 (indeterminate) dominates 0
        if code == 1 or worst == 1:
            worst = 1
        else:
            worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())

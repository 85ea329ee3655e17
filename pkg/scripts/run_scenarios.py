"""Run every scenario under scenarios/ and print a status table.

    python3 scripts/run_scenarios.py [--out-dir reports] [--workers 1] [--refine]
"""

import argparse
import glob
import os

from qspde.cli import main as cli_main


def main() -> None:
    ap = argparse.ArgumentParser(description="run all scenario files")
    ap.add_argument("--out-dir", default="reports")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--refine", action="store_true")
    args = ap.parse_args()
    root = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, "scenarios")
    codes = {}
    for path in sorted(glob.glob(os.path.join(root, "*.json"))):
        argv = ["run", path, "--out-dir", args.out_dir, "--workers", str(args.workers)]
        if args.refine:
            argv.append("--refine")
        codes[os.path.basename(path)] = cli_main(argv)
    print()
    for name, code in codes.items():
        print(f"{code}  {name}")


if __name__ == "__main__":
    main()

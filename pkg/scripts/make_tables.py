"""Collect result CSVs into one markdown document.

Usage: python3 scripts/make_tables.py [results/*.csv ...] > results/tables.md
"""

import argparse
import glob
from pathlib import Path

from nlsqfem import lab


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("csv", nargs="*", help="result files (default: results/*.csv)")
    args = parser.parse_args(argv)
    for path in args.csv or sorted(glob.glob("results/*.csv")):
        print(f"## {Path(path).stem}\n")
        print(lab.markdown_table(lab.read_csv(path)))


if __name__ == "__main__":
    main()

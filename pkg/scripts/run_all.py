"""Run every experiment config, one process per config.

Usage: python3 scripts/run_all.py [configs/*.cfg ...] [--jobs N]
"""

import argparse
import glob
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from nlsqfem import lab, oracle


def run_one(path):
    t0 = time.perf_counter()
    cfg = lab.ExperimentConfig.from_file(path)
    lab.run_experiment(cfg)
    return path, cfg.output_csv, time.perf_counter() - t0


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("configs", nargs="*")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    args = p.parse_args()
    results = oracle.run_all()
    if not oracle.all_passed(results):
        for r in results:
            print(r.line())
        raise SystemExit("oracle suite failed; refusing to run the tables")
    configs = args.configs or sorted(glob.glob(str(Path(__file__).resolve().parent.parent / "configs" / "*.cfg")))
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        for path, csv, seconds in pool.map(run_one, configs):
            print(f"{Path(path).name}: {seconds:.1f} s -> {csv}")


if __name__ == "__main__":
    main()

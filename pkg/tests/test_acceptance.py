"""Acceptance criteria of the reproduction, one test per criterion.

Each test runs the shipped config under ``configs/`` (CSV redirected to a
temporary directory), evaluates every clause of its criterion and records a
single PASS/FAIL line that is printed in the pytest terminal summary.
Clauses that cannot be met are left failing; their analysis is kept in the
project notes rather than hidden by loosened thresholds.
"""

import dataclasses
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from nlsqfem import lab, oracle

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def outdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


_cache = {}


def run_config(name, outdir, **overrides):
    key = (name, tuple(sorted(overrides.items())))
    if key not in _cache:
        cfg = lab.ExperimentConfig.from_file(CONFIGS / f"{name}.cfg")
        tag = "-".join([name] + [f"{k}{v}" for k, v in sorted(overrides.items())])
        cfg = dataclasses.replace(cfg, output_csv=str(outdir / f"{tag}.csv"), output_vtk=None, **overrides)
        _cache[key] = lab.run_experiment(cfg, keep_solutions=True)
    return _cache[key]


def report(number, title, clauses):
    """Record the verdict; ``clauses`` is a list of ``(ok, description)``."""
    ok = all(c for c, _ in clauses)
    detail = "; ".join(f"{'ok' if c else 'FAILED'}: {d}" for c, d in clauses)
    ACCEPTANCE_LINES[number] = f"criterion {number} {'PASS' if ok else 'FAIL'} [{title}] {detail}"
    print(ACCEPTANCE_LINES[number])
    assert ok, detail


def within(value, target, rel):
    return abs(value - target) <= rel * target


def fmt(values, pattern=".3f"):
    return "[" + ", ".join(format(v, pattern) for v in values) + "]"


def test_criterion_1_heat_square_table(outdir):
    rows = run_config("heat-square-k1", outdir).rows
    last = rows[-1]
    ieff = [r.i_eff for r in rows]
    rates = [r.eoc_h for r in rows[-3:]]
    report(
        1,
        "heat unit square, uniform, P1/RT0",
        [
            (np.isclose(last.h, np.sqrt(2) / 64), f"finest level has legs 1/64 (n_dof {last.n_dof})"),
            (within(last.error, 1.47e-1, 0.10), f"error at h=1/64 {last.error:.3e} vs 1.47e-1 +-10%"),
            (within(last.functional_sqrt, 1.49e-1, 0.10), f"F^1/2 at h=1/64 {last.functional_sqrt:.3e} vs 1.49e-1 +-10%"),
            (all(0.98 <= v <= 1.05 for v in ieff), f"i_eff in [0.98, 1.05] at every level {fmt(ieff)}"),
            (all(0.95 <= v <= 1.05 for v in rates), f"eoc_h of the last three levels in [0.95, 1.05] {fmt(rates)}"),
        ],
    )


def test_criterion_2_heat_square_newton(outdir):
    res = run_config("heat-square-k1", outdir)
    iters = [r.newton_iters for r in res.rows]
    monotone = []
    for trace in res.newton_traces:
        hist = [s.residual for s in trace]
        monotone.append(all(b < a for a, b in zip(hist[1:], hist[2:])) if len(hist) > 2 else True)
    report(
        2,
        "heat unit square, Gauss-Newton iterations",
        [
            (all(3 <= n <= 10 for n in iters), f"iterations per level in [3, 10] {iters}"),
            (all(monotone), f"residual strictly decreasing after iteration 1 on every level {monotone}"),
        ],
    )


def test_criterion_3_heat_lshape(outdir):
    res = run_config("heat-lshape-k1", outdir)
    ieff = [r.i_eff for r in res.rows if r.cycle >= 3]
    sol6 = res.solutions[5]
    centroids = sol6.mesh.vertices[sol6.mesh.triangles].mean(axis=1)
    frac = float(np.mean(np.linalg.norm(centroids, axis=1) < 0.25))
    report(
        3,
        "heat L-shape, adaptive, P1/RT0, theta 0.5",
        [
            (all(0.9 <= v <= 1.15 for v in ieff), f"i_eff in [0.9, 1.15] for cycles >= 3 {fmt(ieff)}"),
            (frac >= 0.30, f"fraction of cycle-6 elements within 0.25 of the corner {frac:.3f} >= 0.30"),
        ],
    )


def test_criterion_4_relu_lshape(outdir):
    r1 = run_config("relu-lshape-k1", outdir).rows
    r2 = run_config("relu-lshape-k2", outdir).rows
    i1, i2 = [r.i_eff for r in r1], [r.i_eff for r in r2]
    e1, e2 = [r.eoc_dof for r in r1[-3:]], [r.eoc_dof for r in r2[-3:]]
    report(
        4,
        "ReLU L-shape, adaptive, k=1 and k=2",
        [
            (all(0.97 <= v <= 1.03 for v in i1), f"k=1 i_eff in [0.97, 1.03] {fmt(i1)}"),
            (all(0.97 <= v <= 1.03 for v in i2), f"k=2 i_eff in [0.97, 1.03] {fmt(i2)}"),
            (all(0.4 <= v <= 0.65 for v in e1), f"k=1 eoc_dof of the last three cycles in [0.4, 0.65] {fmt(e1)}"),
            (all(v >= 0.9 for v in e2), f"k=2 eoc_dof of the last three cycles >= 0.9 {fmt(e2)}"),
        ],
    )


def test_criterion_5_svk_square(outdir):
    rows = run_config("svk-square-k2", outdir).rows
    last = rows[-1]
    fine = [r.i_eff for r in rows if r.h <= np.sqrt(2) / 8 + 1e-12]
    report(
        5,
        "SVK unit square, uniform, P2/RT1, lambda 2",
        [
            (np.isclose(last.h, np.sqrt(2) / 64), f"finest level has legs 1/64 (n_dof {last.n_dof})"),
            (within(last.error, 6.16e-4, 0.15), f"error at h=1/64 {last.error:.3e} vs 6.16e-4 +-15%"),
            (len(fine) == 4 and all(0.98 <= v <= 1.06 for v in fine), f"i_eff in [0.98, 1.06] for h <= 1/8 {fmt(fine)}"),
        ],
    )


def test_criterion_6_cook(outdir):
    rows = run_config("svk-cook", outdir).rows
    iters = [r.newton_iters for r in rows]
    ieff = [r.i_eff for r in rows]
    tail = ieff[-4:]
    report(
        6,
        "Cook's membrane, adaptive, P2/RT1 vs P3/RT2 overkill",
        [
            (all(n <= 10 for n in iters), f"Gauss-Newton solves per cycle <= 10 (max {max(iters)})"),
            (all(0.15 <= v <= 0.75 for v in ieff), f"i_eff in [0.15, 0.75] at every cycle {fmt(ieff)}"),
            (all(b >= a for a, b in zip(tail, tail[1:])), f"i_eff non-decreasing over the last four cycles {fmt(tail, '.4f')}"),
        ],
    )


def test_criterion_7_oracles():
    results = oracle.run_all()
    report(7, "oracle suite", [(r.passed, r.line()) for r in results])


def test_criterion_8_determinism(tmp_path):
    clauses = []
    for name, cycles in (("heat-lshape-k1", 6), ("svk-square-k2", 3)):
        blobs = []
        for i in range(2):
            cfg = lab.ExperimentConfig.from_file(CONFIGS / f"{name}.cfg")
            out = tmp_path / f"{name}-{i}.csv"
            lab.run_experiment(dataclasses.replace(cfg, cycles=cycles, output_csv=str(out), output_vtk=None))
            blobs.append(out.read_bytes())
        clauses.append((blobs[0] == blobs[1], f"{name} ({cycles} cycles) CSV byte-identical across two runs"))
    report(8, "determinism", clauses)

"""Experiment harness: problem catalogue, error norms, tables and output files."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import assembly as asm
from . import elements as el
from . import mesh as msh
from . import system
from .errors import ConfigurationError
from .solve import (
    AdaptiveOptions,
    ConvergenceRecord,
    NewtonOptions,
    Solution,
    eoc,
    gauss_newton,
    inexact_gauss_newton,
)

log = logging.getLogger(__name__)

PROBLEMS = ("heat-square", "heat-lshape", "relu-lshape", "svk-square", "svk-cook")
CSV_COLUMNS = ("cycle", "n_dof", "h", "error", "functional_sqrt", "i_eff", "eoc_h", "eoc_dof", "newton_iters")


@dataclass
class ExperimentConfig:
    """Flat experiment description, readable from a ``key = value`` file.

    ``initial_n`` is the resolution passed to the mesh generator of the
    problem.  Material keys not used by the selected problem are ignored.
    ``traction`` is the vertical traction on the loaded edge of the
    membrane problem.
    """

    problem: str = "heat-square"
    degree: int = 1
    mode: str = "uniform"
    theta: float | None = None
    tau: float = 0.5
    cycles: int = 6
    initial_n: int = 2
    step_tol: float = 1e-4
    max_iters: int = 30
    load_steps: int = 1
    lam: float = 2.0
    kappa: float | None = None
    delta: float = 2.0
    source: float | None = None
    traction: float = 0.03
    overkill_boost: int = 1
    overkill_levels: int = 1
    output_csv: str | None = None
    output_vtk: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigurationError(f"unknown problem {self.problem!r}; choose from {', '.join(PROBLEMS)}")
        if self.mode not in ("uniform", "adaptive"):
            raise ConfigurationError(f"mode must be 'uniform' or 'adaptive', got {self.mode!r}")
        if self.mode == "adaptive" and self.theta is None:
            raise ConfigurationError("adaptive mode requires theta")
        if self.theta is not None and not 0 < self.theta < 1:
            raise ConfigurationError("theta must lie in (0, 1)")
        if self.degree not in el.LAGRANGE_DEGREES:
            raise ConfigurationError(f"degree must be one of {el.LAGRANGE_DEGREES}")
        if self.cycles < 1 or self.initial_n < 1:
            raise ConfigurationError("cycles and initial_n must be positive")
        if self.needs_overkill and self.degree + self.overkill_boost > max(el.LAGRANGE_DEGREES):
            raise ConfigurationError("overkill degree exceeds the supported element degrees")
        if not 0 < self.tau < 1:
            raise ConfigurationError("tau must lie in (0, 1)")

    @property
    def needs_overkill(self):
        return self.problem in ("heat-lshape", "relu-lshape", "svk-cook")

    @classmethod
    def from_text(cls, text):
        known = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
            values[key] = _convert(key, val, known[key].type)
        return cls(**values)

    @classmethod
    def from_file(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None:
                lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _convert(key, val, typ):
    typ = str(typ)
    if val.lower() in ("none", ""):
        return None
    try:
        if typ.startswith("int"):
            return int(val)
        if typ.startswith("float"):
            return float(val)
    except ValueError as exc:
        raise ConfigurationError(f"{key}: cannot parse {val!r}") from exc
    return val


def build_problem(cfg: ExperimentConfig, degree=None):
    k = cfg.degree if degree is None else degree
    p = cfg.problem
    if p == "heat-square":
        return system.heat_example1(k)
    if p == "heat-lshape":
        return system.heat_example2(k, source=-0.05 if cfg.source is None else cfg.source)
    if p == "relu-lshape":
        kw = dict(delta=cfg.delta, kappa=2.0 if cfg.kappa is None else cfg.kappa)
        return system.relu_lshape(k, source=0.0 if cfg.source is None else cfg.source, **kw)
    if p == "svk-square":
        return system.svk_example1(k, lam=cfg.lam, kappa=1.0 if cfg.kappa is None else cfg.kappa)
    return system.svk_cook(k, lam=cfg.lam, kappa=math.sqrt(1e3) if cfg.kappa is None else cfg.kappa, traction_y=cfg.traction)


def initial_mesh(cfg: ExperimentConfig):
    if cfg.problem in ("heat-square", "svk-square"):
        return msh.make_unit_square(cfg.initial_n)
    if cfg.problem == "svk-cook":
        return msh.make_cook(cfg.initial_n)
    return msh.make_lshape(cfg.initial_n)


# ---------------------------------------------------------------- errors


def _weighted_sq(w, a):
    a = a.reshape(a.shape[0], a.shape[1], -1)
    return float(np.einsum("eq,eqc,eqc->", w, a, a))


def triple_norm_error(problem, solution: Solution, reference):
    """``(||grad(u-u_h)||^2 + ||sigma-sigma_h||^2 + ||div(sigma-sigma_h)||^2)^{1/2}``.

    ``reference`` is either a callable ``x -> (u, grad_u, sigma, div_sigma)``
    or a :class:`Solution` on a refinement of the solution's mesh (an
    overkill reference).  In the latter case the solution is transferred to
    the reference space, which is exact for nested spaces.
    """
    if reference is None:
        raise ConfigurationError("no exact or reference solution available")
    if isinstance(reference, Solution):
        diff = reference.coefficients - solution.space.transfer(solution.coefficients, reference.space, impose_bc=False)
        space = reference.space
        rule = asm.default_rule(problem, degree=space.primal.degree)
        qd = asm.QuadratureData(space, rule)
        _, gu, s, ds = qd.fields(diff)
        w = qd.weights
        return math.sqrt(_weighted_sq(w, gu) + _weighted_sq(w, s) + _weighted_sq(w, ds))
    space = solution.space
    rule = asm.default_rule(problem, degree=space.primal.degree, extra=4)
    qd = asm.QuadratureData(space, rule)
    _, gu, s, ds = qd.fields(solution.coefficients)
    _, G, S, D = reference(qd.points)
    w = qd.weights
    return math.sqrt(_weighted_sq(w, G - gu) + _weighted_sq(w, S - s) + _weighted_sq(w, D - ds))


def effectivity(functional_total, error):
    """``sqrt(F) / error``."""
    if error <= 0:
        raise ValueError("error must be positive")
    return math.sqrt(functional_total) / error


def overkill_reference(problem, solution: Solution, levels=1, degree_boost=1, options=None):
    """High-order solution on a uniform refinement of the solution's mesh.

    The Gauss-Newton iteration is warm-started from the transferred
    solution.  ``problem`` must provide ``degree`` via ``dataclasses.replace``.
    """
    mesh = solution.mesh
    for _ in range(levels):
        mesh = msh.uniform_refine(mesh)
    fine_problem = dataclasses.replace(problem, degree=problem.degree + degree_boost)
    space = asm.build_mixed(fine_problem, mesh)
    start = solution.space.transfer(solution.coefficients, space)
    ref, trace = gauss_newton(fine_problem, mesh, space, options or NewtonOptions(), initial=start)
    log.info("overkill ndof=%d iterations=%d", space.ndof, len(trace))
    return ref


# ------------------------------------------------------------------ runs


@dataclass
class TableRow(ConvergenceRecord):
    pass


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    solutions: list = field(repr=False, default_factory=list)
    newton_traces: list = field(repr=False, default_factory=list)
    forcing: list = field(default_factory=list)
    reference: Solution | None = field(repr=False, default=None)


def _fill_rates(rows):
    errs = [r.error for r in rows]
    if len(rows) >= 2 and all(e is not None and e > 0 for e in errs):
        eh, ed = eoc(errs, [r.h for r in rows], [r.n_dof for r in rows])
        for r, a, b in zip(rows, eh, ed):
            r.eoc_h, r.eoc_dof = a, b
    for r in rows:
        if r.error is not None and r.error > 0:
            r.i_eff = r.functional_sqrt / r.error


def run_experiment(cfg: ExperimentConfig, keep_solutions=False) -> ExperimentResult:
    """Run one configuration and write its CSV and VTK files.

    Uniform mode solves on ``cycles`` successive red refinements, each
    warm-started from the previous level.  Adaptive mode runs the adaptive
    inexact Gauss-Newton method for ``cycles`` meshes.  Problems without an
    analytic solution are measured against an overkill reference computed
    on the final mesh.
    """
    problem = build_problem(cfg)
    exact = problem.exact()
    newton = NewtonOptions(tau=cfg.tau, step_tol=cfg.step_tol, max_iters=cfg.max_iters, load_steps=cfg.load_steps)
    rows, sols, traces = [], [], []
    result = ExperimentResult(cfg, rows, sols, traces)
    try:
        if cfg.mode == "uniform":
            mesh, prev = initial_mesh(cfg), None
            for level in range(cfg.cycles):
                if level:
                    mesh = msh.uniform_refine(mesh)
                space = asm.build_mixed(problem, mesh)
                start = None if prev is None else prev.space.transfer(prev.coefficients, space)
                sol, trace = gauss_newton(problem, mesh, space, newton, initial=start)
                row = TableRow(
                    cycle=level + 1,
                    n_dof=space.ndof,
                    h=float(mesh.diameters().max()),
                    functional_sqrt=trace[-1].residual,
                    newton_iters=len(trace),
                    n_elements=mesh.n_triangles,
                )
                if exact is not None:
                    row.error = triple_norm_error(problem, sol, exact)
                rows.append(row)
                sols.append(sol)
                traces.append(trace)
                prev = sol
                log.info("level=%d ndof=%d F=%.6e", level + 1, space.ndof, row.functional_sqrt**2)
        else:

            def on_cycle(rec, sol):
                row = TableRow(**dataclasses.asdict(rec))
                if exact is not None:
                    row.error = triple_norm_error(problem, sol, exact)
                rows.append(row)
                sols.append(sol)

            adaptive = AdaptiveOptions(theta=cfg.theta)
            _, _, forcing = inexact_gauss_newton(problem, initial_mesh(cfg), newton, adaptive, cfg.cycles, on_cycle)
            result.forcing = forcing
        if exact is None and cfg.needs_overkill:
            ref = overkill_reference(problem, sols[-1], cfg.overkill_levels, cfg.overkill_boost, newton)
            result.reference = ref
            for row, sol in zip(rows, sols):
                row.error = triple_norm_error(problem, sol, ref)
        _fill_rates(rows)
    finally:
        if cfg.output_csv:
            write_csv(cfg.output_csv, rows)
    if cfg.output_vtk and sols:
        write_solution_vtk(cfg.output_vtk, sols[-1])
    if not keep_solutions:
        result.solutions = sols[-1:]
    return result


# ----------------------------------------------------------------- output


def _fmt(v):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.2e}"


def write_csv(path, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def markdown_table(rows):
    if not rows:
        return ""
    cols = list(rows[0].keys())
    out = ["| " + " | ".join(cols) + " |", "|" + "|".join("---" for _ in cols) + "|"]
    out += ["| " + " | ".join(r[c] if r[c] else "-" for c in cols) + " |" for r in rows]
    return "\n".join(out) + "\n"


def write_solution_vtk(path, solution: Solution):
    """Vertex values of the primal field and element means of the flux."""
    mesh = solution.mesh
    space = solution.space
    u, s = space.split(solution.coefficients)
    point = {}
    for c in range(space.primal.n_components):
        # vertex DOFs come first in the Lagrange numbering
        vals = np.zeros(mesh.n_vertices)
        vals[mesh.triangles.ravel()] = u.coefficients[space.primal.component_dofs(c)[:, :3].ravel()]
        point[f"u{c}"] = vals
    qd = asm.QuadratureData(space, el.quadrature(1))
    _, _, sig, _ = qd.fields(solution.coefficients)
    cell = {f"sigma{c}": sig[:, 0, c, :] for c in range(space.flux.n_components)}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    msh.write_vtk(path, mesh, point_data=point, cell_data=cell)

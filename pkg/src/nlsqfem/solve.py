"""Linear solver, Gauss-Newton drivers, adaptive inner loop and marking."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly as asm
from .errors import ConfigurationError, NonConvergenceError, SolverFailure
from .mesh import bisect

log = logging.getLogger(__name__)

# systems larger than this are solved by preconditioned CG
DIRECT_LIMIT = 200_000


@dataclass(frozen=True)
class NewtonOptions:
    """Stopping and forcing parameters of the Gauss-Newton drivers.

    Iteration stops once ``||R(u)+f|| <= max(abs_tol, rel_tol * ||R(u_0)+f||)``
    or once the increment is negligible, ``||R'(u) du|| <= step_tol * ||R(u)+f||``.
    The second test is what ends the iteration on a fixed mesh, where the
    residual norm levels off at the discretization error.
    """

    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    step_tol: float = 1e-4
    max_iters: int = 30
    tau: float = 0.5
    load_steps: int = 1

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigurationError(f"tau must lie in (0, 1), got {self.tau}")
        if min(self.abs_tol, self.rel_tol, self.step_tol) <= 0:
            raise ConfigurationError("tolerances must be positive")
        if self.max_iters < 1 or self.load_steps < 1:
            raise ConfigurationError("max_iters and load_steps must be at least 1")


@dataclass(frozen=True)
class AdaptiveOptions:
    """Marking parameter and the cap on refinements within one Newton step."""

    theta: float = 0.5
    max_cycles: int = 12

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ConfigurationError(f"theta must lie in (0, 1), got {self.theta}")
        if self.max_cycles < 1:
            raise ConfigurationError("max_cycles must be at least 1")


@dataclass
class ConvergenceRecord:
    cycle: int
    n_dof: int
    h: float
    functional_sqrt: float
    newton_iters: int
    error: float | None = None
    i_eff: float | None = None
    eoc_h: float | None = None
    eoc_dof: float | None = None
    n_elements: int = 0


@dataclass
class NewtonStep:
    iteration: int
    residual: float  # ||R(u)+f|| after the step
    increment: float  # ||R'(u) du||
    n_dof: int


@dataclass
class Solution:
    """Iterate together with the space it lives in."""

    space: asm.MixedSpace
    coefficients: np.ndarray

    @property
    def mesh(self):
        return self.space.mesh


# ------------------------------------------------------------ linear solve


def solve_spd(system, tol=1e-12):
    """Solve a sparse symmetric positive definite system.

    Uses a sparse LU factorization without pivoting on a fill-reducing
    symmetric ordering (which coincides with Cholesky up to scaling) and
    rejects non-positive pivots.  Above ``DIRECT_LIMIT`` unknowns, Jacobi
    preconditioned CG is used instead.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = system.matrix if sp.issparse(system.matrix) else sp.csr_matrix(system.matrix)
    b = np.asarray(system.rhs, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n)
    if n <= DIRECT_LIMIT:
        try:
            lu = spla.splu(
                A.tocsc(),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:
            raise SolverFailure(f"factorization failed: {exc}", diagnostics={"n": n}) from exc
        pivots = lu.U.diagonal()
        if np.any(~np.isfinite(pivots)) or np.any(pivots <= 0):
            bad = int(np.argmin(pivots))
            raise SolverFailure(
                "matrix is not positive definite",
                diagnostics={"n": n, "pivot_index": bad, "pivot": float(pivots[bad])},
            )
        x = lu.solve(b)
        res = np.linalg.norm(A @ x - b)
        if res > max(tol, 1e-8) * bnorm:
            # one step of iterative refinement
            x += lu.solve(b - A @ x)
        return x
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverFailure("non-positive diagonal entry", diagnostics={"n": n})
    M = sp.diags(1.0 / d)
    x, info = spla.cg(A, b, rtol=tol, atol=0.0, M=M, maxiter=10 * n)
    if info != 0:
        raise SolverFailure("conjugate gradients did not converge", diagnostics={"n": n, "info": info})
    return x


# ------------------------------------------------------------ Gauss-Newton


def residual_norm(problem, space, coeffs, rule=None):
    return math.sqrt(asm.element_functional(problem, space, coeffs, rule).sum())


def newton_direction(problem, space, coeffs, rule=None):
    """Gauss-Newton increment and ``||R'(u) du||`` on a fixed space."""
    system = asm.assemble_gauss_newton(problem, space, coeffs, rule)
    dfree = solve_spd(system)
    du = np.zeros(space.ndof)
    du[system.free] = dfree
    energy = math.sqrt(max(float(dfree @ (system.matrix @ dfree)), 0.0))
    return du, energy


def gauss_newton(problem, mesh, space=None, options=None, initial=None):
    """Gauss-Newton iteration on a fixed mesh.

    Starts from ``initial`` if given, else from the zero state carrying the
    boundary data.  Returns ``(Solution, trace)`` where ``trace`` holds one
    :class:`NewtonStep` per linear solve.  With ``load_steps > 1`` the
    loads are ramped up in equal stages, each warm-started from the last.
    """
    options = options or NewtonOptions()
    space = space or asm.build_mixed(problem, mesh)
    x = space.lift() if initial is None else np.array(initial, dtype=float)
    trace = []
    for stage in range(1, options.load_steps + 1):
        prob = problem
        if options.load_steps > 1:
            # scaled tractions change the prescribed flux values
            prob = problem.scaled(stage / options.load_steps)
            staged = asm.build_mixed(prob, space.mesh)
            x[staged.constrained] = staged.constrained_values
        x, trace = _newton_loop(prob, space, x, options, trace, final=stage == options.load_steps)
    return Solution(space, x), trace


def _newton_loop(problem, space, x, options, trace, final=True):
    r = residual_norm(problem, space, x)
    if r <= options.abs_tol:
        return x, trace
    target = max(options.abs_tol, options.rel_tol * r)
    for _ in range(options.max_iters):
        du, energy = newton_direction(problem, space, x)
        x = x + du
        r_new = residual_norm(problem, space, x)
        trace.append(NewtonStep(len(trace) + 1, r_new, energy, space.ndof))
        log.info("iter=%d ndof=%d F=%.6e step=%.3e", len(trace), space.ndof, r_new**2, energy)
        if r_new <= target or energy <= options.step_tol * r:
            return x, trace
        r = r_new
    if final:
        raise NonConvergenceError(
            f"Gauss-Newton did not converge in {options.max_iters} iterations",
            history=[s.residual for s in trace],
            state=x,
        )
    return x, trace


# ----------------------------------------------------------------- marking


def doerfler_mark(values, theta):
    """Minimal set with ``sum_M eta >= theta * sum eta``.

    Elements are taken in descending order of their value; equal values are
    taken in ascending index order.
    """
    if not 0.0 < theta < 1.0:
        raise ConfigurationError(f"theta must lie in (0, 1), got {theta}")
    eta = np.asarray(values, dtype=float)
    if np.any(eta < 0):
        raise ValueError("estimator values must be non-negative")
    total = eta.sum()
    if total <= 0:
        return set()
    order = np.lexsort((np.arange(len(eta)), -eta))
    csum = np.cumsum(eta[order])
    n = int(np.searchsorted(csum, theta * total, side="left")) + 1
    return {int(i) for i in order[: min(n, len(eta))]}


# ------------------------------------------------------------ adaptive loop


@dataclass
class AfemCycle:
    space: asm.MixedSpace
    trial: np.ndarray  # iterate plus the direction computed on this mesh
    residual: float  # ||R(u)+f|| before the step
    xi: float  # F_lin(du)^{1/2}
    increment: float  # ||R'(u) du||


@dataclass
class AfemTrace:
    """Meshes visited by one adaptive Newton step."""

    cycles: list = field(default_factory=list)  # AfemCycle per mesh
    accepted: bool = False
    exhausted: bool = False


def afem_newton_step(problem, solution: Solution, adaptive: AdaptiveOptions, forcing, max_refinements=None):
    """Solve the linearized problem, refining until it is solved accurately enough.

    On each mesh the Gauss-Newton direction is computed and
    ``xi = F_lin(du)^{1/2}`` compared with ``forcing * ||R(u)+f||``.  If the
    test fails the per-element contributions of ``F_lin(du)`` are Doerfler
    marked, the mesh is bisected and the current iterate is interpolated
    onto it.  After ``adaptive.max_cycles`` refinements (or
    ``max_refinements`` if smaller) the last direction is returned with
    ``trace.exhausted`` set.

    Returns ``(iterate on the final mesh, direction, trace)``.
    """
    cap = adaptive.max_cycles if max_refinements is None else min(adaptive.max_cycles, max_refinements)
    trace = AfemTrace()
    space, x = solution.space, solution.coefficients
    while True:
        r = residual_norm(problem, space, x)
        du, energy = newton_direction(problem, space, x)
        local = asm.element_functional(problem, space, x, direction=du)
        xi = math.sqrt(local.sum())
        trace.cycles.append(AfemCycle(space, x + du, r, xi, energy))
        log.info("cycle=%d ndof=%d F=%.6e xi=%.6e eta=%.6e", len(trace.cycles), space.ndof, r**2, xi, forcing)
        if xi <= forcing * r:
            trace.accepted = True
            break
        if len(trace.cycles) > cap:
            trace.exhausted = True
            break
        marked = doerfler_mark(local, adaptive.theta)
        fine = asm.build_mixed(problem, bisect(space.mesh, sorted(marked)))
        x = space.transfer(x, fine)
        space = fine
    return Solution(space, x), du, trace


def inexact_gauss_newton(problem, mesh0, newton=None, adaptive=None, max_records=None, on_cycle=None):
    """Adaptive inexact Gauss-Newton iteration.

    Forcing terms follow ``eta_0 = tau`` and
    ``eta_n = min(tau * eta_{n-1}, ||R(u_n)+f||)``.  Every mesh visited gives
    one :class:`ConvergenceRecord` describing the latest iterate computed on
    it (the current iterate plus the direction solved there); its
    ``newton_iters`` counts the linear solves on that mesh.

    With ``max_records`` the run ends with the Newton step that reaches the
    ``max_records``-th mesh.  Otherwise it ends when
    ``||R(u)+f|| <= max(abs_tol, rel_tol ||R(u_0)+f||)`` or after
    ``newton.max_iters`` steps.  ``on_cycle(record, solution)`` is called
    for every completed record.  Returns ``(records, final iterate, forcing terms)``.
    """
    newton = newton or NewtonOptions()
    adaptive = adaptive or AdaptiveOptions()
    space = asm.build_mixed(problem, mesh0)
    sol = Solution(space, space.lift())
    target = max(newton.abs_tol, newton.rel_tol * residual_norm(problem, space, sol.coefficients))
    records, forcings = [], []
    eta = newton.tau
    row = None  # [space, latest iterate, solves] of the open record

    def close():
        state = Solution(row[0], row[1])
        rec = ConvergenceRecord(
            cycle=len(records) + 1,
            n_dof=state.space.ndof,
            h=float(state.mesh.diameters().max()),
            functional_sqrt=residual_norm(problem, state.space, state.coefficients),
            newton_iters=row[2],
            n_elements=state.mesh.n_triangles,
        )
        if on_cycle is not None:
            on_cycle(rec, state)
        records.append(rec)

    for _ in range(newton.max_iters):
        forcings.append(eta)
        left = None if max_records is None else max_records - len(records) - 1
        moved, du, trace = afem_newton_step(problem, sol, adaptive, eta, left)
        for cyc in trace.cycles:
            if row is not None and cyc.space is not row[0]:
                close()
                row = None
            row = [cyc.space, cyc.trial, 1 if row is None else row[2] + 1]
        sol = Solution(moved.space, moved.coefficients + du)
        r = residual_norm(problem, sol.space, sol.coefficients)
        if r <= target or (max_records is not None and len(records) == max_records - 1):
            close()
            return records, sol, forcings
        eta = min(newton.tau * eta, r)
    close()
    if max_records is not None:
        raise NonConvergenceError(
            f"only {len(records)} of {max_records} meshes after {newton.max_iters} Newton steps",
            history=[rec.functional_sqrt for rec in records],
            state=sol.coefficients,
        )
    return records, sol, forcings


# --------------------------------------------------------------- rates


def eoc(errors, h_values=None, dof_values=None):
    """Experimental orders of convergence with respect to ``h`` and DOFs.

    The first entry of each list is ``None``.  Consecutive abscissae that
    agree to ``1e-10`` relative (an unchanged maximal diameter under local
    refinement) give ``nan``.
    """
    e = np.asarray(errors, dtype=float)
    if len(e) < 2 or np.any(e <= 0):
        raise ValueError("need at least two positive errors")
    out = []
    for vals, flip in ((h_values, False), (dof_values, True)):
        if vals is None:
            out.append(None)
            continue
        v = np.asarray(vals, dtype=float)
        if v.shape != e.shape or np.any(v <= 0):
            raise ValueError("rate abscissae must be positive and match the errors")
        num = np.log(e[:-1] / e[1:])
        den = np.log(v[1:] / v[:-1]) if flip else np.log(v[:-1] / v[1:])
        with np.errstate(divide="ignore", invalid="ignore"):
            rates = np.where(np.abs(den) > 1e-10, num / den, np.nan)
        out.append([None] + [float(r) for r in rates])
    return out[0], out[1]

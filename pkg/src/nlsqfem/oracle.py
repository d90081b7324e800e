"""Self-checks that must hold before any convergence table is trusted.

Each check returns an :class:`OracleResult`; :func:`run_all` collects them.
The checks compare the hand-coded linearizations with finite differences,
the vectorized Gauss-Newton assembly with a naive dense assembly, verify
two algebraic identities of the elasticity model, test Dörfler marking
for minimality and confirm that a linear problem is solved by a single
Gauss-Newton update.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import assembly as asm
from . import mesh as msh
from . import system
from .solve import NewtonOptions, doerfler_mark, gauss_newton

FD_STEP = 1e-6
FD_TOL = 1e-5
EXACT_TOL = 1e-12


@dataclass(frozen=True)
class OracleResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (tol {self.tolerance:.1e}) {self.detail}".rstrip()


def oracle_problems():
    """One representative of each model, with non-trivial nonlinearities."""
    return {
        "heat": system.HeatProblem(degree=1, source=1.0),
        "relu": system.ReluProblem(degree=1, delta=2.0, kappa=2.0, source=0.5),
        "svk": system.SvkProblem(degree=2, lam=2.0, kappa=3.0, body_force=lambda x: np.ones(x.shape[:-1] + (2,))),
    }


def _random_point_state(problem, rng, n):
    nu, ns = problem.n_u, problem.n_sigma
    x = rng.uniform(0, 1, (n, 2))
    state = (
        rng.normal(size=(n, nu)),
        0.5 * rng.normal(size=(n, nu, 2)),
        rng.normal(size=(n, ns, 2)),
        rng.normal(size=(n, ns)),
    )
    return x, state


def fd_jacobian_check(problem, n_states=50, seed=0):
    """Largest relative deviation of ``R'(u)[d]`` from a central difference.

    The ReLU term is non-differentiable at ``u = 0``; random states avoid it
    almost surely and states closer than ``100 * FD_STEP`` are resampled.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_states):
        x, st = _random_point_state(problem, rng, 1)
        while np.min(np.abs(st[0])) < 100 * FD_STEP:
            x, st = _random_point_state(problem, rng, 1)
        _, d = _random_point_state(problem, rng, 1)
        lin = problem.linearization(x, st, *d)
        plus = problem.residual(x, *(a + FD_STEP * b for a, b in zip(st, d)))
        minus = problem.residual(x, *(a - FD_STEP * b for a, b in zip(st, d)))
        fd = (plus - minus) / (2 * FD_STEP)
        worst = max(worst, float(np.linalg.norm(lin - fd) / max(np.linalg.norm(lin), 1e-300)))
    return worst


def dense_gauss_newton(problem, space, state, rule=None):
    """Gauss-Newton matrix and right-hand side, one basis function at a time.

    Deliberately naive: the linearized residual of every global basis
    function is evaluated on the whole mesh and all pairwise integrals are
    formed densely.
    """
    rule = rule or asm.default_rule(problem)
    qd = asm.QuadratureData(space, rule)
    x = qd.points
    fields = qd.fields(state)
    r = problem.residual(x, *fields)
    w = qd.weights
    cols = []
    for j in range(space.ndof):
        e = np.zeros(space.ndof)
        e[j] = 1.0
        cols.append(problem.linearization(x, fields, *qd.fields(e)))
    n = space.ndof
    A = np.empty((n, n))
    b = np.empty(n)
    for i in range(n):
        b[i] = -np.einsum("eqm,eqm,eq->", r, cols[i], w)
        for j in range(i, n):
            A[i, j] = A[j, i] = np.einsum("eqm,eqm,eq->", cols[i], cols[j], w)
    return A, b


def dense_assembly_check(problem, seed=0):
    """Relative deviation between sparse and dense assembly on two triangles."""
    mesh = msh.make_unit_square(1)
    space = asm.build_mixed(problem, mesh)
    state = np.random.default_rng(seed).normal(size=space.ndof)
    sparse = asm.assemble_gauss_newton(problem, space, state, constrain=False)
    A, b = dense_gauss_newton(problem, space, state)
    dA = np.abs(sparse.matrix.toarray() - A).max() / np.abs(A).max()
    db = np.abs(sparse.rhs - b).max() / max(np.abs(b).max(), 1e-300)
    return float(max(dA, db))


def svk_identity_check(n=30, lam=2.0, seed=0):
    """``F (2E + lam tr E I) = 2 eps + lam tr eps I + k(u)`` on random gradients."""
    G = 0.5 * np.random.default_rng(seed).normal(size=(n, 2, 2))
    lhs = system.piola_stress(G, lam)
    eps = system.sym(G)
    rhs = 2 * eps + lam * np.trace(eps, axis1=-2, axis2=-1)[:, None, None] * np.eye(2) + system.svk_nonlinearity(G, lam)
    return float(np.abs(lhs - rhs).max() / np.abs(lhs).max())


def compliance_check(n=30, lam=2.0, seed=0):
    """``A (2 eps + lam tr eps I) = eps`` for random symmetric ``eps``."""
    eps = system.sym(np.random.default_rng(seed).normal(size=(n, 2, 2)))
    tau = 2 * eps + lam * np.trace(eps, axis1=-2, axis2=-1)[:, None, None] * np.eye(2)
    return float(np.abs(system.compliance(tau, lam) - eps).max() / np.abs(eps).max())


def _is_minimal_doerfler(values, theta, marked):
    """Brute-force characterization of a minimal-cardinality bulk set."""
    total = values.sum()
    if sum(values[i] for i in marked) < theta * total:
        return False
    # no set of size |M| - 1 reaches the bulk: the |M|-1 largest values fall short
    top = np.sort(values)[::-1][: len(marked) - 1]
    return top.sum() < theta * total


def doerfler_check(n_vectors=100, seed=0):
    """Number of random estimator vectors on which marking is not minimal."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(n_vectors):
        m = int(rng.integers(1, 40))
        values = rng.exponential(size=m)
        if rng.random() < 0.3:
            values = np.round(values, 1)  # provoke ties
        theta = float(rng.uniform(0.05, 0.95))
        if not _is_minimal_doerfler(values, theta, doerfler_mark(values, theta)):
            failures += 1
    return failures


def brute_force_doerfler(values, theta):
    """Smallest cardinality of a bulk set by exhaustive search (tiny inputs only)."""
    values = np.asarray(values, dtype=float)
    target = theta * values.sum()
    for size in range(1, len(values) + 1):
        if any(values[list(c)].sum() >= target for c in itertools.combinations(range(len(values)), size)):
            return size
    return len(values)


def linear_problem_check(n=4):
    """Gauss-Newton on a linear heat problem.

    Returns ``(effective_iterations, relative_second_step)``: the number of
    updates whose size exceeded ``step_tol`` times the residual, and the
    size of the second increment relative to the residual.  A linear
    problem is solved by the first update, so the second increment only
    certifies convergence and vanishes to round-off.
    """
    problem = system.HeatProblem(
        degree=1, kappa=system.constant_kappa(1.0), source=lambda x: np.sin(np.pi * x[..., 0]) + x[..., 1], dirichlet={"boundary": 0.5}
    )
    options = NewtonOptions()
    _, trace = gauss_newton(problem, msh.make_unit_square(n), options=options)
    prev = [None] + [s.residual for s in trace[:-1]]
    effective = sum(1 for s, r in zip(trace, prev) if r is None or s.increment > options.step_tol * r)
    second = trace[1].increment / trace[0].residual if len(trace) > 1 else 0.0
    return effective, float(second)


def run_all():
    """Run every check and return the list of results."""
    out = []
    for name, prob in oracle_problems().items():
        v = fd_jacobian_check(prob)
        out.append(OracleResult(f"fd-jacobian[{name}]", v <= FD_TOL, v, FD_TOL, "50 random states"))
    for name, prob in oracle_problems().items():
        v = dense_assembly_check(prob)
        out.append(OracleResult(f"dense-assembly[{name}]", v <= EXACT_TOL, v, EXACT_TOL, "2-triangle mesh"))
    v = svk_identity_check()
    out.append(OracleResult("svk-decomposition", v <= EXACT_TOL, v, EXACT_TOL, "30 random gradients"))
    v = compliance_check()
    out.append(OracleResult("compliance-inversion", v <= EXACT_TOL, v, EXACT_TOL))
    fails = doerfler_check()
    out.append(OracleResult("doerfler-minimality", fails == 0, float(fails), 0.0, "100 random vectors"))
    its, second = linear_problem_check()
    ok = its == 1 and second <= 1e-8
    out.append(OracleResult("linear-one-step", ok, second, 1e-8, f"effective iterations = {its}"))
    return out


def all_passed(results):
    return all(r.passed for r in results) and not any(math.isnan(r.value) for r in results)

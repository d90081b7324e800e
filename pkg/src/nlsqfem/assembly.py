"""Gauss-Newton normal equations and least-squares functionals.

The discrete unknown is one coefficient vector over a :class:`MixedSpace`:
the primal Lagrange block first, then the Raviart-Thomas flux block.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import elements as el
from .mesh import Triangulation
from .space import LAGRANGE, RT, FeSpace, FieldVector, SparseSystem, apply_constraints, build_space, to_physical, transfer

# target number of doubles held by one batch of basis-direction arrays
BATCH_BUDGET = 4_000_000


@dataclass(eq=False)
class MixedSpace:
    primal: FeSpace
    flux: FeSpace

    @property
    def mesh(self) -> Triangulation:
        return self.primal.mesh

    @property
    def ndof(self):
        return self.primal.ndof + self.flux.ndof

    @property
    def offset(self):
        return self.primal.ndof

    @property
    def blocks(self):
        return {"primal": (0, self.offset), "flux": (self.offset, self.ndof)}

    @cached_property
    def constrained(self):
        return np.concatenate([self.primal.constrained, self.flux.constrained + self.offset])

    @cached_property
    def constrained_values(self):
        return np.concatenate([self.primal.values, self.flux.values])

    @cached_property
    def local_dofs(self):
        """Global indices of the local mixed basis, ``(E, Bu * nu + Bs * ns)``."""
        p, f = self.primal, self.flux
        cols = [p.component_dofs(c) for c in range(p.n_components)]
        cols += [f.component_dofs(c) + self.offset for c in range(f.n_components)]
        return np.hstack(cols)

    def split(self, coeffs):
        return FieldVector(self.primal, coeffs[: self.offset]), FieldVector(self.flux, coeffs[self.offset :])

    def lift(self):
        """Zero vector carrying the prescribed boundary values."""
        x = np.zeros(self.ndof)
        x[self.constrained] = self.constrained_values
        return x

    def transfer(self, coeffs, fine: "MixedSpace", impose_bc=True):
        """Interpolate a state onto a mixed space over a refined mesh.

        With ``impose_bc`` the constrained DOFs of ``fine`` take their
        prescribed values instead of the interpolated ones.
        """
        u, s = self.split(coeffs)
        out = np.concatenate([transfer(u, fine.primal).coefficients, transfer(s, fine.flux).coefficients])
        if impose_bc:
            out[fine.constrained] = fine.constrained_values
        return out


def build_mixed(problem, mesh, degree=None) -> MixedSpace:
    k = problem.degree if degree is None else degree
    primal = build_space(mesh, LAGRANGE, k, ("vector" if problem.n_u > 1 else "scalar", problem.n_u), problem.dirichlet_rules())
    flux = build_space(mesh, RT, k - 1, ("tensor_rows" if problem.n_sigma > 1 else "scalar", problem.n_sigma), problem.flux_rules())
    return MixedSpace(primal, flux)


@dataclass(eq=False)
class QuadratureData:
    """Basis tabulation of a mixed space at the points of one rule."""

    space: MixedSpace
    rule: el.QuadratureRule

    @cached_property
    def points(self):
        return to_physical(self.space.primal.geometry, self.rule.points)

    @cached_property
    def weights(self):
        """Physical weights ``(E, Q)``."""
        return self.rule.weights[None, :] * np.abs(self.space.primal.geometry.det)[:, None]

    @cached_property
    def primal_tab(self):
        return self.space.primal.tabulate(self.rule.points)

    @cached_property
    def flux_tab(self):
        return self.space.flux.tabulate(self.rule.points)

    def fields(self, coeffs, elems=slice(None)):
        """``(u, grad_u, sigma, div_sigma)`` at the quadrature points."""
        u_f, s_f = self.space.split(coeffs)
        cu = self.space.primal.gather(u_f.coefficients)[elems]  # (E, nu, Bu)
        # the flux tabulation already carries the orientation signs
        f = self.space.flux
        idx = f.dof_map[elems][:, None, :] + f.n_scalar * np.arange(f.n_components)[None, :, None]
        cs = s_f.coefficients[idx]
        val, grad = self.primal_tab
        sval, sdiv = self.flux_tab
        u = np.einsum("qb,ecb->eqc", val, cu)
        gu = np.einsum("eqbi,ecb->eqci", grad[elems], cu)
        s = np.einsum("eqbi,ecb->eqci", sval[elems], cs)
        ds = np.einsum("eqb,ecb->eqc", sdiv[elems], cs)
        return u, gu, s, ds


def default_rule(problem, degree=None, extra=0):
    k = problem.degree if degree is None else degree
    return el.quadrature(min(el.default_exactness(k, k - 1) + extra, 10))


def _directions(qd, problem, elems):
    """Basis directions ``(E, B, Q, ...)`` for the local mixed basis."""
    sp_ = qd.space
    nu, ns = sp_.primal.n_components, sp_.flux.n_components
    val, grad = qd.primal_tab
    sval, sdiv = qd.flux_tab
    Bu, Bs = val.shape[1], sval.shape[2]
    E = len(np.arange(qd.weights.shape[0])[elems])
    Q = val.shape[0]
    B = nu * Bu + ns * Bs
    du = np.zeros((E, B, Q, nu))
    gdu = np.zeros((E, B, Q, nu, 2))
    dsig = np.zeros((E, B, Q, ns, 2))
    ddiv = np.zeros((E, B, Q, ns))
    for c in range(nu):
        sl = slice(c * Bu, (c + 1) * Bu)
        du[:, sl, :, c] = val.T[None]
        gdu[:, sl, :, c, :] = np.transpose(grad[elems], (0, 2, 1, 3))
    for c in range(ns):
        sl = slice(nu * Bu + c * Bs, nu * Bu + (c + 1) * Bs)
        dsig[:, sl, :, c, :] = np.transpose(sval[elems], (0, 2, 1, 3))
        ddiv[:, sl, :, c] = np.transpose(sdiv[elems], (0, 2, 1))
    return du, gdu, dsig, ddiv


def _batches(qd, problem):
    E = qd.weights.shape[0]
    Q = qd.weights.shape[1]
    B = qd.space.local_dofs.shape[1]
    per = B * Q * max(problem.n_residual, 4) * 4
    size = max(1, BATCH_BUDGET // per)
    return [slice(a, min(a + size, E)) for a in range(0, E, size)]


def local_systems(problem, qd: QuadratureData, state):
    """Element matrices ``(E, B, B)`` and right-hand sides ``(E, B)``."""
    E = qd.weights.shape[0]
    B = qd.space.local_dofs.shape[1]
    Ke = np.empty((E, B, B))
    Fe = np.empty((E, B))
    for sl in _batches(qd, problem):
        x = qd.points[sl]
        u, gu, s, ds = qd.fields(state, sl)
        r = problem.residual(x, u, gu, s, ds)  # (e, Q, m)
        du, gdu, dsig, ddiv = _directions(qd, problem, sl)
        st = (u[:, None], gu[:, None], s[:, None], ds[:, None])
        dr = problem.linearization(x[:, None], st, du, gdu, dsig, ddiv)  # (e, B, Q, m)
        w = qd.weights[sl]
        drw = dr * np.sqrt(w)[:, None, :, None]
        flat = drw.reshape(drw.shape[0], B, -1)
        Ke[sl] = flat @ np.swapaxes(flat, 1, 2)
        Fe[sl] = -np.einsum("eqm,ebqm,eq->eb", r, dr, w)
    return Ke, Fe


def assemble_gauss_newton(problem, space: MixedSpace, state, rule=None, constrain=True) -> SparseSystem:
    """Normal system of the linearized least-squares functional at ``state``.

    With ``constrain`` the constrained DOFs are eliminated with zero
    increment, so the solution is the Gauss-Newton update on free DOFs.
    """
    rule = rule or default_rule(problem)
    qd = QuadratureData(space, rule)
    Ke, Fe = local_systems(problem, qd, np.asarray(state, dtype=float))
    dofs = space.local_dofs
    B = dofs.shape[1]
    rows = np.repeat(dofs, B, axis=1).ravel()
    cols = np.tile(dofs, (1, B)).ravel()
    A = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(space.ndof, space.ndof)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    b = np.bincount(dofs.ravel(), weights=Fe.ravel(), minlength=space.ndof)
    system = SparseSystem(matrix=A, rhs=b, blocks=space.blocks)
    if constrain:
        return apply_constraints(system, space.constrained)
    return system


def element_functional(problem, space: MixedSpace, state, rule=None, direction=None):
    """Per-element ``int_T |r|^2``; with ``direction`` the linearized residual ``r + R'[direction]``."""
    rule = rule or default_rule(problem)
    qd = QuadratureData(space, rule)
    state = np.asarray(state, dtype=float)
    out = np.empty(qd.weights.shape[0])
    for sl in _batches(qd, problem):
        x = qd.points[sl]
        u, gu, s, ds = qd.fields(state, sl)
        r = problem.residual(x, u, gu, s, ds)
        if direction is not None:
            d = qd.fields(np.asarray(direction, dtype=float), sl)
            r = r + problem.linearization(x, (u, gu, s, ds), *d)
        out[sl] = np.einsum("eqm,eqm,eq->e", r, r, qd.weights[sl])
    return out


@dataclass(frozen=True)
class ElementContribution:
    element: int
    value: float


def evaluate_functional(problem, space: MixedSpace, state, rule=None):
    """``(total, per_element)`` of the nonlinear least-squares functional."""
    local = element_functional(problem, space, state, rule)
    return float(local.sum()), [ElementContribution(i, float(v)) for i, v in enumerate(local)]


def functional_sqrt(total):
    if total < 0:
        raise ValueError("functional value must be non-negative")
    return float(np.sqrt(total))


def write_matrix_market(path, system: SparseSystem):
    scipy.io.mmwrite(str(path), system.matrix, symmetry="general")

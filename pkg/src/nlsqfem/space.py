"""Global finite element spaces, fields and essential boundary conditions.

A ``FeSpace`` holds ``n_components`` independent copies of one scalar
Lagrange space (a vector field) or of one Raviart-Thomas space (the rows of
a tensor field, each row an H(div) field).  Copy ``c`` owns the global
block ``[c * n_scalar, (c + 1) * n_scalar)``.

Global RT edge moments use the edge normal obtained by rotating the tangent
from the lower to the higher vertex index clockwise, and Legendre
polynomials parametrised in that same direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import elements as el
from .errors import ConfigurationError, DegenerateElementError
from .mesh import DIRICHLET, NEUMANN, Triangulation

LAGRANGE = "Lagrange"
RT = "RaviartThomas"

SHAPES = {"scalar": 1, "vector": 2, "tensor_rows": 2}


@dataclass(frozen=True, eq=False)
class Geometry:
    origin: np.ndarray  # (E, 2)
    jac: np.ndarray  # (E, 2, 2)
    det: np.ndarray  # (E,)
    jinv: np.ndarray  # (E, 2, 2)


_GEOMETRY = {}


def geometry(mesh: Triangulation) -> Geometry:
    key = id(mesh)
    hit = _GEOMETRY.get(key)
    if hit is not None and hit[0] is mesh:
        return hit[1]
    p = mesh.vertices[mesh.triangles]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    scale = np.abs(jac).reshape(len(det), -1).max(axis=1)
    if np.any(np.abs(det) <= 1e-14 * scale**2):
        bad = int(np.argmin(np.abs(det) / scale**2))
        raise DegenerateElementError(f"degenerate element {bad}")
    jinv = np.empty_like(jac)
    jinv[:, 0, 0] = jac[:, 1, 1] / det
    jinv[:, 1, 1] = jac[:, 0, 0] / det
    jinv[:, 0, 1] = -jac[:, 0, 1] / det
    jinv[:, 1, 0] = -jac[:, 1, 0] / det
    geo = Geometry(p[:, 0], jac, det, jinv)
    if len(_GEOMETRY) > 64:
        _GEOMETRY.clear()
    _GEOMETRY[key] = (mesh, geo)
    return geo


def to_physical(geo: Geometry, ref_points):
    """Map reference points ``(P, 2)`` or ``(E, P, 2)`` to ``(E, P, 2)``."""
    if ref_points.ndim == 2:
        return geo.origin[:, None, :] + np.einsum("eij,pj->epi", geo.jac, ref_points)
    return geo.origin[:, None, :] + np.einsum("eij,epj->epi", geo.jac, ref_points)


def to_reference(geo: Geometry, elems, points):
    """Reference coordinates of physical ``points (E, P, 2)`` in ``elems``."""
    return np.einsum("eij,epj->epi", geo.jinv[elems], points - geo.origin[elems][:, None, :])


@dataclass(eq=False)
class FeSpace:
    mesh: Triangulation
    family: str
    degree: int
    n_components: int
    dof_map: np.ndarray  # (E, B) scalar-copy numbering
    signs: np.ndarray  # (E, B) +-1 orientation factors (RT), ones otherwise
    n_scalar: int
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def ndof(self):
        return self.n_components * self.n_scalar

    @property
    def local_size(self):
        return self.dof_map.shape[1]

    @cached_property
    def geometry(self):
        return geometry(self.mesh)

    def component_dofs(self, c):
        """Global DOF table ``(E, B)`` of component ``c``."""
        return self.dof_map + c * self.n_scalar

    def gather(self, coeffs):
        """Local coefficients ``(E, n_components, B)`` including signs."""
        idx = self.dof_map[:, None, :] + self.n_scalar * np.arange(self.n_components)[None, :, None]
        return coeffs[idx] * self.signs[:, None, :]

    def tabulate(self, ref_points):
        """Physical basis data at shared reference points.

        Lagrange: ``(values (Q, B), gradients (E, Q, B, 2))``.
        RT: ``(values (E, Q, B, 2), divergences (E, Q, B))``; signs applied.
        """
        geo = self.geometry
        if self.family == LAGRANGE:
            val, grad = el.eval_lagrange(self.degree, ref_points)
            return val, np.einsum("eji,qbj->eqbi", geo.jinv, grad)
        val, div = el.eval_rt(self.degree, ref_points)
        s = self.signs[:, None, :]
        phys = np.einsum("eij,qbj->eqbi", geo.jac, val) / geo.det[:, None, None, None]
        return phys * s[..., None], div[None] / geo.det[:, None, None] * s

    @cached_property
    def node_coordinates(self):
        """Physical location of every scalar Lagrange DOF, ``(n_scalar, 2)``."""
        if self.family != LAGRANGE:
            raise TypeError("node coordinates exist only for Lagrange spaces")
        X = to_physical(self.geometry, el.lagrange_nodes(self.degree))
        out = np.zeros((self.n_scalar, 2))
        out[self.dof_map.ravel()] = X.reshape(-1, 2)
        return out


@dataclass(eq=False)
class FieldVector:
    space: FeSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.ndof,):
            raise ValueError("coefficient vector does not match the space")


# ------------------------------------------------------------- DOF maps


def _lagrange_dofs(mesh, k):
    nv, ne, nt = mesh.n_vertices, len(mesh.edges), mesh.n_triangles
    tri, t2e = mesh.triangles, mesh.tri_edges
    cols = [tri]
    if k > 1:
        per = k - 1
        for i in range(3):
            start, end = tri[:, el.EDGE_START[i]], tri[:, el.EDGE_END[i]]
            aligned = (start < end)[:, None]
            j = np.arange(per)[None, :]
            local = np.where(aligned, j, per - 1 - j)
            cols.append(nv + t2e[:, i : i + 1] * per + local)
    n_int = el.lagrange_dof_count(k) - 3 * k
    if n_int:
        base = nv + ne * (k - 1)
        cols.append(base + np.arange(nt)[:, None] * n_int + np.arange(n_int)[None, :])
    dof_map = np.hstack(cols)
    return dof_map, np.ones(dof_map.shape), nv + ne * (k - 1) + nt * n_int


def _rt_dofs(mesh, m):
    ne, nt = len(mesh.edges), mesh.n_triangles
    tri, t2e = mesh.triangles, mesh.tri_edges
    per = m + 1
    cols, sgn = [], []
    for i in range(3):
        aligned = (tri[:, el.EDGE_START[i]] < tri[:, el.EDGE_END[i]])[:, None]
        j = np.arange(per)[None, :]
        cols.append(t2e[:, i : i + 1] * per + j)
        # reversed edge: normal flips and Legendre q_j picks up (-1)^j
        sgn.append(np.where(aligned, 1.0, (-1.0) ** (j + 1)))
    n_int = el.rt_dof_count(m) - 3 * per
    if n_int:
        cols.append(ne * per + np.arange(nt)[:, None] * n_int + np.arange(n_int)[None, :])
        sgn.append(np.ones((nt, n_int)))
    return np.hstack(cols), np.hstack(sgn), ne * per + nt * n_int


def global_edge_normals(mesh):
    """Unit normal (clockwise rotation of low->high tangent) and length per edge."""
    e = mesh.edges
    t = mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]]
    length = np.linalg.norm(t, axis=1)
    return np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None], length


def outward_normals(mesh, edge_ids):
    """Outward unit normals of boundary edges."""
    n, _ = global_edge_normals(mesh)
    n = n[edge_ids]
    tri = mesh.edge_triangles[edge_ids, 0]
    centroid = mesh.vertices[mesh.triangles[tri]].mean(axis=1)
    mid = mesh.vertices[mesh.edges[edge_ids]].mean(axis=1)
    flip = np.sum((mid - centroid) * n, axis=1) < 0
    n[flip] *= -1
    return n


def build_space(mesh, family, degree, value_shape="scalar", bc_rules=None) -> FeSpace:
    """Create a space and its essential boundary constraints.

    ``bc_rules`` maps boundary labels to callables.  Lagrange spaces are
    constrained on Dirichlet facets with ``rule(x) -> (P, n_components)``
    (missing labels default to zero); RT spaces are constrained on Neumann
    facets with ``rule(x, n_out) -> (P, n_components)``, the prescribed
    normal trace of every row (missing labels default to zero flux).
    """
    if isinstance(value_shape, tuple):
        name, ncomp = value_shape
    else:
        name, ncomp = value_shape, SHAPES.get(value_shape)
    if name not in SHAPES or ncomp is None:
        raise ValueError(f"unknown value shape {value_shape!r}")
    if family == LAGRANGE:
        if degree not in el.LAGRANGE_DEGREES:
            raise ValueError(f"unsupported Lagrange degree {degree}")
        dof_map, signs, n = _lagrange_dofs(mesh, degree)
    elif family == RT:
        if degree not in el.RT_INDICES:
            raise ValueError(f"unsupported Raviart-Thomas index {degree}")
        dof_map, signs, n = _rt_dofs(mesh, degree)
    else:
        raise ValueError(f"unknown element family {family!r}")
    space = FeSpace(mesh, family, degree, int(ncomp), dof_map.astype(np.int64), signs, int(n))
    rules = dict(bc_rules or {})
    labels = {t.label for t in mesh.tags}
    unknown = set(rules) - labels
    if unknown:
        raise ConfigurationError(f"boundary rules reference unknown labels {sorted(unknown)}")
    if family == LAGRANGE:
        _constrain_lagrange(space, rules)
    else:
        _constrain_rt(space, rules)
    return space


def _constrain_lagrange(space, rules):
    mesh, k = space.mesh, space.degree
    nv, per = mesh.n_vertices, k - 1
    dofs, vals = {}, {}
    X = space.node_coordinates
    for tag_id, tag in enumerate(mesh.tags):
        if tag.kind != DIRICHLET:
            continue
        sel = mesh.facet_tags == tag_id
        ids = [mesh.facets[sel].ravel()]
        if per:
            ids.append((nv + mesh.facet_edges[sel][:, None] * per + np.arange(per)[None, :]).ravel())
        ids = np.unique(np.concatenate(ids))
        rule = rules.get(tag.label)
        v = np.zeros((len(ids), space.n_components))
        if rule is not None:
            v = np.asarray(rule(X[ids]), dtype=float).reshape(len(ids), space.n_components)
        for c in range(space.n_components):
            for i, val in zip(ids + c * space.n_scalar, v[:, c]):
                dofs[i] = val
    _store(space, dofs)


def _constrain_rt(space, rules):
    mesh, m = space.mesh, space.degree
    per = m + 1
    s, ws = el._gauss_legendre01(m + 4)
    q = np.stack([el.edge_legendre(j, s) for j in range(per)])  # (per, P)
    dofs = {}
    n_glob, length = global_edge_normals(mesh)
    for tag_id, tag in enumerate(mesh.tags):
        if tag.kind != NEUMANN:
            continue
        sel = mesh.facet_tags == tag_id
        eids = mesh.facet_edges[sel]
        if not len(eids):
            continue
        rule = rules.get(tag.label)
        vals = np.zeros((len(eids), space.n_components, per))
        if rule is not None:
            n_out = outward_normals(mesh, eids)
            a = mesh.vertices[mesh.edges[eids, 0]]
            b = mesh.vertices[mesh.edges[eids, 1]]
            X = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
            nn = np.broadcast_to(n_out[:, None, :], X.shape)
            g = np.asarray(rule(X.reshape(-1, 2), nn.reshape(-1, 2)), dtype=float)
            g = g.reshape(len(eids), len(s), space.n_components)
            orient = np.sum(n_glob[eids] * n_out, axis=1)
            vals = np.einsum("epc,jp,p->ecj", g, q, ws) * (orient * length[eids])[:, None, None]
        for c in range(space.n_components):
            for e, v in zip(eids, vals[:, c, :]):
                for j in range(per):
                    dofs[c * space.n_scalar + e * per + j] = v[j]
    _store(space, dofs)


def _store(space, dofs):
    keys = np.array(sorted(dofs), dtype=np.int64)
    space.constrained = keys
    space.values = np.array([dofs[k] for k in keys], dtype=float)


# ----------------------------------------------------- fields / evaluation


def evaluate_at(field: FieldVector, elems, ref_points):
    """Evaluate at per-element reference points ``(E, P, 2)``.

    Lagrange: ``(values (E, P, C), gradients (E, P, C, 2))``.
    RT: ``(values (E, P, C, 2), divergences (E, P, C))``.
    """
    space = field.space
    elems = np.asarray(elems)
    E, P = ref_points.shape[:2]
    flat = ref_points.reshape(-1, 2)
    geo = space.geometry
    idx = space.dof_map[elems][:, None, :] + space.n_scalar * np.arange(space.n_components)[None, :, None]
    c = field.coefficients[idx] * space.signs[elems][:, None, :]  # (E, C, B)
    if space.family == LAGRANGE:
        val, grad = el.eval_lagrange(space.degree, flat)
        val = val.reshape(E, P, -1)
        grad = grad.reshape(E, P, -1, 2)
        u = np.einsum("epb,ecb->epc", val, c)
        g = np.einsum("epbj,ecb->epcj", grad, c)
        return u, np.einsum("eji,epcj->epci", geo.jinv[elems], g)
    val, div = el.eval_rt(space.degree, flat)
    val = val.reshape(E, P, -1, 2)
    div = div.reshape(E, P, -1)
    v = np.einsum("epbj,ecb->epcj", val, c)
    v = np.einsum("eij,epcj->epci", geo.jac[elems], v) / geo.det[elems][:, None, None, None]
    d = np.einsum("epb,ecb->epc", div, c) / geo.det[elems][:, None, None]
    return v, d


def evaluate_field(field: FieldVector, element, ref_points):
    """Evaluate on one element (int) or all elements (``None``) at shared points."""
    ref_points = np.atleast_2d(np.asarray(ref_points, dtype=float))
    if element is None:
        elems = np.arange(field.space.mesh.n_triangles)
    else:
        elems = np.atleast_1d(element)
    pts = np.broadcast_to(ref_points, (len(elems),) + ref_points.shape)
    out = evaluate_at(field, elems, pts)
    if element is not None and np.ndim(element) == 0:
        return tuple(o[0] for o in out)
    return out


def _interpolate_with(space: FeSpace, func_el):
    """``func_el(X (E, P, 2))`` returns per-element values of the target."""
    geo = space.geometry
    coeffs = np.zeros(space.ndof)
    C = space.n_components
    if space.family == LAGRANGE:
        X = to_physical(geo, el.lagrange_nodes(space.degree))
        v = np.asarray(func_el(X), dtype=float).reshape(X.shape[0], X.shape[1], C)
        for c in range(C):
            coeffs[space.component_dofs(c).ravel()] = v[:, :, c].ravel()
        return FieldVector(space, coeffs)
    pts, W = el.rt_dof_functionals(space.degree)
    X = to_physical(geo, pts)
    g = np.asarray(func_el(X), dtype=float).reshape(X.shape[0], X.shape[1], C, 2)
    # contravariant pull-back: det J^{-1} g
    ghat = np.einsum("eij,epcj->epci", geo.jinv, g) * geo.det[:, None, None, None]
    local = np.einsum("bpi,epci->ecb", W, ghat) * space.signs[:, None, :]
    for c in range(C):
        coeffs[space.component_dofs(c).ravel()] = local[:, c, :].ravel()
    return FieldVector(space, coeffs)


def interpolate(space: FeSpace, func) -> FieldVector:
    """Nodal (Lagrange) or moment (RT) interpolant of ``func(x (..., 2))``.

    ``func`` returns ``(..., C)`` for Lagrange and ``(..., C, 2)`` for RT
    spaces; for single-component spaces the component axis may be omitted.
    """

    def f(X):
        return np.asarray(func(X.reshape(-1, 2)), dtype=float)

    return _interpolate_with(space, f)


def transfer(field: FieldVector, fine: FeSpace) -> FieldVector:
    """Interpolate a field onto a space over a refinement of its mesh.

    The fine mesh must descend from ``field.space.mesh`` through recorded
    refinements; every fine element is evaluated inside its ancestor, which
    keeps the transfer exact for nested spaces.
    """
    coarse = field.space
    if fine.mesh is coarse.mesh:
        anc = np.arange(fine.mesh.n_triangles)
    else:
        anc = fine.mesh.ancestors(fine.mesh.level - coarse.mesh.level)
    cgeo = coarse.geometry

    def f(X):
        ref = to_reference(cgeo, anc, X)
        val, _ = evaluate_at(field, anc, ref)
        return val

    return _interpolate_with(fine, f)


# ---------------------------------------------------------- constraints


@dataclass(frozen=True, eq=False)
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray | None = None  # indices into the full system, None if unreduced
    full_size: int | None = None
    prescribed: np.ndarray | None = None  # full vector holding constrained values
    blocks: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.matrix.shape[0]

    def expand(self, x_free):
        """Full solution vector from a solution of the reduced system."""
        if self.free is None:
            return np.asarray(x_free)
        out = self.prescribed.copy()
        out[self.free] = x_free
        return out


def apply_constraints(system: SparseSystem, constrained, values=None) -> SparseSystem:
    """Symmetric elimination of constrained DOFs with lifting of their values."""
    n = system.size
    constrained = np.asarray(constrained, dtype=np.int64)
    vals = np.zeros(len(constrained)) if values is None else np.asarray(values, dtype=float)
    mask = np.ones(n, dtype=bool)
    mask[constrained] = False
    free = np.flatnonzero(mask)
    full = np.zeros(n)
    full[constrained] = vals
    A = system.matrix.tocsr()
    rhs = system.rhs - A @ full
    return SparseSystem(
        matrix=A[free][:, free].tocsr(),
        rhs=rhs[free],
        free=free,
        full_size=n,
        prescribed=full,
        blocks=system.blocks,
    )

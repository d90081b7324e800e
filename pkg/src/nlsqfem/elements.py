"""Reference-triangle shape functions and quadrature.

The reference triangle has vertices ``(0, 0), (1, 0), (0, 1)``.  Local edge
``i`` is the edge opposite vertex ``i`` and is traversed counter-clockwise,
i.e. from vertex ``i+1`` to vertex ``i+2`` (indices mod 3).  Its outward
normal is the clockwise rotation of that tangent.

Lagrange bases are nodal on the equispaced lattice.  Raviart-Thomas bases
are dual to edge moments against Legendre polynomials (in the traversal
parameter) plus interior moments against vector monomials.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import ceil

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_jacobi

from .errors import DegenerateElementError

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

# local edge i runs from vertex EDGE_START[i] to EDGE_END[i]
EDGE_START = (1, 2, 0)
EDGE_END = (2, 0, 1)

LAGRANGE_DEGREES = (1, 2, 3)
RT_INDICES = (0, 1, 2)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (Q, 2) reference coordinates
    weights: np.ndarray  # (Q,)
    exactness_degree: int

    @property
    def barycentric(self):
        x, y = self.points.T
        return np.column_stack([1.0 - x - y, x, y])


@dataclass(frozen=True)
class ReferenceBasis:
    family: str  # "Lagrange" | "RaviartThomas"
    degree: int  # Lagrange degree k, or RT index
    dof_count: int
    dof_descriptors: tuple  # (entity, local entity index, moment label)
    coefficients: np.ndarray  # monomial-span -> basis change of basis


def _monomial_exponents(degree):
    return [(a, d - a) for d in range(degree + 1) for a in range(d, -1, -1)]


def _monomials(exps, pts):
    x, y = pts[:, 0], pts[:, 1]
    val = np.empty((len(pts), len(exps)))
    dx = np.zeros_like(val)
    dy = np.zeros_like(val)
    for j, (a, b) in enumerate(exps):
        val[:, j] = x**a * y**b
        if a:
            dx[:, j] = a * x ** (a - 1) * y**b
        if b:
            dy[:, j] = b * x**a * y ** (b - 1)
    return val, dx, dy


def _gauss_legendre01(n):
    s, w = legendre.leggauss(n)
    return 0.5 * (s + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def quadrature(exactness: int) -> QuadratureRule:
    """Positive-weight rule on the reference triangle, exact to ``exactness``.

    Degrees 1 and 2 use the classical centroid and interior three-point rules;
    higher degrees use a collapsed (Duffy) Gauss-Legendre x Gauss-Jacobi
    product.
    """
    if not 1 <= exactness <= 10:
        raise ValueError(f"quadrature exactness must be in 1..10, got {exactness}")
    if exactness == 1:
        return QuadratureRule(np.array([[1 / 3, 1 / 3]]), np.array([0.5]), 1)
    if exactness == 2:
        pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        return QuadratureRule(pts, np.full(3, 1 / 6), 2)
    n = ceil((exactness + 1) / 2)
    s, ws = _gauss_legendre01(n)
    xi, wj = roots_jacobi(n, 1.0, 0.0)
    t = 0.5 * (xi + 1.0)
    wt = 0.25 * wj
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    pts = np.column_stack([(S * (1.0 - T)).ravel(), T.ravel()])
    return QuadratureRule(pts, W.ravel(), exactness)


def default_exactness(primal_degree: int, flux_index: int) -> int:
    return 2 * max(primal_degree, flux_index + 1) + 2


# ---------------------------------------------------------------- Lagrange


def lagrange_nodes(degree):
    """Reference nodes in local DOF order: vertices, edges, interior."""
    k = degree
    nodes = [tuple(v) for v in REF_VERTICES]
    for i in range(3):
        a, b = REF_VERTICES[EDGE_START[i]], REF_VERTICES[EDGE_END[i]]
        nodes += [tuple(a + (j / k) * (b - a)) for j in range(1, k)]
    for j in range(1, k):
        for i in range(1, k - j):
            nodes.append((i / k, j / k))
    return np.array(nodes)


@lru_cache(maxsize=None)
def lagrange_basis(degree: int) -> ReferenceBasis:
    if degree not in LAGRANGE_DEGREES:
        raise ValueError(f"unsupported Lagrange degree {degree}")
    exps = _monomial_exponents(degree)
    V, _, _ = _monomials(exps, lagrange_nodes(degree))
    desc = [("vertex", i, "point") for i in range(3)]
    desc += [("edge", i, f"point{j}") for i in range(3) for j in range(degree - 1)]
    desc += [("interior", 0, f"point{j}") for j in range(len(exps) - len(desc))]
    return ReferenceBasis("Lagrange", degree, len(exps), tuple(desc), np.linalg.inv(V))


def eval_lagrange(degree, points):
    """Values ``(P, B)`` and reference gradients ``(P, B, 2)``."""
    basis = lagrange_basis(degree)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    val, dx, dy = _monomials(_monomial_exponents(degree), pts)
    C = basis.coefficients
    grads = np.stack([dx @ C, dy @ C], axis=-1)
    return val @ C, grads


# ---------------------------------------------------------- Raviart-Thomas


def _rt_span(index, pts):
    """Spanning set of RT_index: (P_index)^2 plus x * homogeneous P_index."""
    exps = _monomial_exponents(index)
    val, dx, dy = _monomials(exps, pts)
    n = len(exps)
    P = len(pts)
    vec = np.zeros((P, 2 * n + index + 1, 2))
    div = np.zeros((P, 2 * n + index + 1))
    vec[:, :n, 0] = val
    div[:, :n] = dx
    vec[:, n : 2 * n, 1] = val
    div[:, n : 2 * n] = dy
    x, y = pts[:, 0], pts[:, 1]
    for j, a in enumerate(range(index, -1, -1)):
        b = index - a
        m = x**a * y**b
        vec[:, 2 * n + j, 0] = x * m
        vec[:, 2 * n + j, 1] = y * m
        # div(x m) = 2 m + x.grad(m) = (2 + index) m
        div[:, 2 * n + j] = (2 + index) * m
    return vec, div


def edge_legendre(j, s):
    c = np.zeros(j + 1)
    c[j] = 1.0
    return legendre.legval(2.0 * np.asarray(s) - 1.0, c)


@lru_cache(maxsize=None)
def rt_dof_functionals(index):
    """RT DOFs as point evaluations: ``dof_i(g) = sum_p W[i, p, :] . g(points[p])``.

    Returns ``(points (P, 2), W (B, P, 2))`` on the reference triangle.
    """
    s, ws = _gauss_legendre01(index + 3)
    pts, blocks = [], []
    for i in range(3):
        a, b = REF_VERTICES[EDGE_START[i]], REF_VERTICES[EDGE_END[i]]
        t = b - a
        nds = np.array([t[1], -t[0]])  # outward normal times edge length
        pts.append(a + s[:, None] * t)
        for j in range(index + 1):
            blocks.append((len(pts) - 1, (ws * edge_legendre(j, s))[:, None] * nds))
    if index > 0:
        rule = quadrature(2 * index + 2)
        pts.append(rule.points)
        mono, _, _ = _monomials(_monomial_exponents(index - 1), rule.points)
        for c in range(2):
            for m in range(mono.shape[1]):
                w = np.zeros((len(rule.points), 2))
                w[:, c] = rule.weights * mono[:, m]
                blocks.append((len(pts) - 1, w))
    offsets = np.cumsum([0] + [len(p) for p in pts])
    W = np.zeros((len(blocks), offsets[-1], 2))
    for i, (g, w) in enumerate(blocks):
        W[i, offsets[g] : offsets[g + 1]] = w
    return np.vstack(pts), W


def _rt_dof_matrix(index, func):
    pts, W = rt_dof_functionals(index)
    return np.einsum("ipc,pnc->in", W, func(pts))


@lru_cache(maxsize=None)
def rt_basis(index: int) -> ReferenceBasis:
    if index not in RT_INDICES:
        raise ValueError(f"unsupported Raviart-Thomas index {index}")
    D = _rt_dof_matrix(index, lambda p: _rt_span(index, p)[0])
    desc = [("edge", i, f"legendre{j}") for i in range(3) for j in range(index + 1)]
    n_int = D.shape[0] - len(desc)
    desc += [("interior", 0, f"moment{j}") for j in range(n_int)]
    return ReferenceBasis("RaviartThomas", index, D.shape[0], tuple(desc), np.linalg.inv(D))


def eval_rt(index, points):
    """Reference vector values ``(P, B, 2)`` and divergences ``(P, B)``."""
    basis = rt_basis(index)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vec, div = _rt_span(index, pts)
    C = basis.coefficients
    return np.einsum("pac,ab->pbc", vec, C), div @ C


def rt_dofs(index, func):
    """Reference DOF functionals of ``func(pts) -> (P, N, 2)``, shape (B, N)."""
    return _rt_dof_matrix(index, func)


def lagrange_dof_count(degree):
    return (degree + 1) * (degree + 2) // 2


def rt_dof_count(index):
    return (index + 1) * (index + 3)


# ------------------------------------------------------------------ Piola


def piola_map(triangle):
    """Affine map data of a triangle given as a (3, 2) coordinate array.

    Returns ``(jacobian, det, jacobian / det)``; the last factor pushes
    reference RT fields forward (contravariant Piola).
    """
    tri = np.asarray(triangle, dtype=float)
    J = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    det = float(np.linalg.det(J))
    scale = max(np.abs(J).max(), 1e-300)
    if abs(det) <= 1e-14 * scale**2:
        raise DegenerateElementError(f"degenerate triangle {tri.tolist()}")
    return J, det, J / det

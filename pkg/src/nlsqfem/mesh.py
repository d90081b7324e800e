"""Conforming triangle meshes, red refinement and newest-vertex bisection."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

DIRICHLET = "DirichletPrimal"
NEUMANN = "NeumannFlux"


@dataclass(frozen=True)
class BoundaryTag:
    kind: str  # DIRICHLET or NEUMANN
    label: str

    def __post_init__(self):
        if self.kind not in (DIRICHLET, NEUMANN):
            raise ValueError(f"unknown boundary kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class Triangulation:
    """Immutable 2D triangle mesh.

    ``ref_edge[t]`` is the local index of the refinement edge of triangle
    ``t`` (edge ``i`` is opposite local vertex ``i``).  ``parent[t]`` is the
    index of the triangle in the previous mesh it was cut from, or ``None``
    for an initial mesh.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    ref_edge: np.ndarray
    facets: np.ndarray
    facet_tags: np.ndarray
    tags: tuple
    parent: np.ndarray | None = None
    history: tuple = field(default=(), repr=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def _edge_data(self):
        tri = self.triangles
        loc = np.stack([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]], axis=1)
        flat = np.sort(loc.reshape(-1, 2), axis=1)
        edges, inv = np.unique(flat, axis=0, return_inverse=True)
        return edges, inv.reshape(-1, 3)

    @property
    def edges(self):
        """Unique edges ``(ne, 2)`` with the lower vertex index first."""
        return self._edge_data[0]

    @property
    def tri_edges(self):
        """Global edge index of local edge ``i`` of every triangle, ``(nt, 3)``."""
        return self._edge_data[1]

    @cached_property
    def edge_triangles(self):
        """Adjacent triangles per edge, ``(ne, 2)``; -1 marks a boundary edge."""
        ne = len(self.edges)
        out = -np.ones((ne, 2), dtype=np.int64)
        t2e = self.tri_edges.ravel()
        tids = np.repeat(np.arange(self.n_triangles), 3)
        order = np.argsort(t2e, kind="stable")
        t2e, tids = t2e[order], tids[order]
        first = np.r_[True, t2e[1:] != t2e[:-1]]
        out[t2e[first], 0] = tids[first]
        out[t2e[~first], 1] = tids[~first]
        return out

    @cached_property
    def facet_edges(self):
        """Global edge index of every boundary facet."""
        lookup = {tuple(e): i for i, e in enumerate(self.edges.tolist())}
        return np.array([lookup[tuple(sorted(f))] for f in self.facets.tolist()], dtype=np.int64)

    @cached_property
    def edge_tag(self):
        """Tag index per edge, -1 for interior edges."""
        out = -np.ones(len(self.edges), dtype=np.int64)
        out[self.facet_edges] = self.facet_tags
        return out

    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def diameters(self):
        p = self.vertices[self.triangles]
        lens = np.linalg.norm(p[:, [1, 2, 0]] - p[:, [2, 0, 1]], axis=2)
        return lens.max(axis=1)

    def min_angle(self):
        p = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            c = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(c, -1.0, 1.0)))
        return float(np.min(angles))

    def tag_index(self, label):
        for i, t in enumerate(self.tags):
            if t.label == label:
                return i
        raise KeyError(label)

    def facets_with(self, kind=None, label=None):
        sel = np.ones(len(self.facets), dtype=bool)
        for i, t in enumerate(self.tags):
            if (kind is not None and t.kind != kind) or (label is not None and t.label != label):
                sel &= self.facet_tags != i
        return self.facets[sel]

    def ancestors(self, levels):
        """Map every triangle to its ancestor ``levels`` refinements back."""
        idx = np.arange(self.n_triangles)
        chain = self.history + ((self.parent,) if self.parent is not None else ())
        if levels > len(chain):
            raise ValueError("not enough refinement history")
        for par in reversed(chain[len(chain) - levels :]):
            idx = par[idx]
        return idx

    @property
    def level(self):
        return len(self.history) + (self.parent is not None)


def longest_edge_ref(vertices, triangles):
    """Refinement edge = longest edge; ties go to the smallest opposite vertex."""
    p = vertices[triangles]
    lens = np.linalg.norm(p[:, [1, 2, 0]] - p[:, [2, 0, 1]], axis=2)
    lmax = lens.max(axis=1, keepdims=True)
    candidate = lens >= lmax * (1.0 - 1e-12)
    opp = np.where(candidate, triangles, np.iinfo(np.int64).max)
    return np.argmin(opp, axis=1)


def _structured(nx, ny, origin, h, keep=None):
    """Grid of nx*ny cells, each split along its (0,0)-(1,1) diagonal."""
    ids = -np.ones((nx + 1, ny + 1), dtype=np.int64)
    cells = [(i, j) for j in range(ny) for i in range(nx) if keep is None or keep(i, j)]
    used = sorted({(i + a, j + b) for i, j in cells for a in (0, 1) for b in (0, 1)}, key=lambda c: (c[1], c[0]))
    for n, (i, j) in enumerate(used):
        ids[i, j] = n
    verts = np.array([[origin[0] + i * h, origin[1] + j * h] for i, j in used])
    tris = []
    for i, j in cells:
        v00, v10, v01, v11 = ids[i, j], ids[i + 1, j], ids[i, j + 1], ids[i + 1, j + 1]
        tris += [(v00, v10, v11), (v00, v11, v01)]
    return verts, np.array(tris, dtype=np.int64)


def _boundary_edges(triangles):
    loc = np.concatenate([triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]])
    key = np.sort(loc, axis=1)
    _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return loc[cnt[inv.ravel()] == 1]


def _build(vertices, triangles, classify):
    facets = _boundary_edges(triangles)
    facets = facets[np.lexsort((facets[:, 1], facets[:, 0]))]
    tags, ftag = [], []
    for f in facets:
        tag = classify(vertices[f[0]], vertices[f[1]])
        if tag not in tags:
            tags.append(tag)
        ftag.append(tags.index(tag))
    return Triangulation(
        vertices=vertices,
        triangles=triangles,
        ref_edge=longest_edge_ref(vertices, triangles),
        facets=facets,
        facet_tags=np.array(ftag, dtype=np.int64),
        tags=tuple(tags),
    )


def _check_n(n):
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"mesh resolution must be a positive integer, got {n!r}")


def make_unit_square(n: int) -> Triangulation:
    """Structured mesh of [0,1]^2 with 2 n^2 triangles, Dirichlet everywhere."""
    _check_n(n)
    v, t = _structured(n, n, (0.0, 0.0), 1.0 / n)
    tag = BoundaryTag(DIRICHLET, "boundary")
    return _build(v, t, lambda a, b: tag)


def make_lshape(n: int) -> Triangulation:
    """[-1,1]^2 minus [0,1]^2; segments x=1 and y=1 are Dirichlet."""
    _check_n(n)
    v, t = _structured(2 * n, 2 * n, (-1.0, -1.0), 1.0 / n, keep=lambda i, j: not (i >= n and j >= n))

    def classify(a, b):
        if np.isclose(a[0], 1.0) and np.isclose(b[0], 1.0):
            return BoundaryTag(DIRICHLET, "x=1")
        if np.isclose(a[1], 1.0) and np.isclose(b[1], 1.0):
            return BoundaryTag(DIRICHLET, "y=1")
        return BoundaryTag(NEUMANN, "neumann")

    return _build(v, t, classify)


COOK_CORNERS = np.array([[0.0, 0.0], [48.0, 44.0], [48.0, 60.0], [0.0, 44.0]])


def make_cook(n: int) -> Triangulation:
    """Cook's membrane: bilinear image of the structured n x n unit-square mesh."""
    _check_n(n)
    ref, t = _structured(n, n, (0.0, 0.0), 1.0 / n)
    s, r = ref[:, :1], ref[:, 1:]
    P0, P1, P2, P3 = COOK_CORNERS
    v = (1 - s) * (1 - r) * P0 + s * (1 - r) * P1 + s * r * P2 + (1 - s) * r * P3

    def classify(a, b):
        if np.isclose(a[0], 0.0) and np.isclose(b[0], 0.0):
            return BoundaryTag(DIRICHLET, "x=0")
        if np.isclose(a[0], 48.0) and np.isclose(b[0], 48.0):
            return BoundaryTag(NEUMANN, "traction")
        return BoundaryTag(NEUMANN, "free")

    return _build(v, t, classify)


def _refined_facets(mesh, mid_of_edge):
    out_f, out_t = [], []
    for f, tag, e in zip(mesh.facets, mesh.facet_tags, mesh.facet_edges):
        m = mid_of_edge[e]
        if m < 0:
            out_f.append(f)
            out_t.append(tag)
        else:
            out_f += [(f[0], m), (m, f[1])]
            out_t += [tag, tag]
    return np.array(out_f, dtype=np.int64).reshape(-1, 2), np.array(out_t, dtype=np.int64)


def _history(mesh):
    return mesh.history + ((mesh.parent,) if mesh.parent is not None else ())


def uniform_refine(mesh: Triangulation) -> Triangulation:
    """Red refinement: every triangle is cut into four similar children."""
    ne = len(mesh.edges)
    nv = mesh.n_vertices
    mids = nv + np.arange(ne)
    verts = np.vstack([mesh.vertices, mesh.vertices[mesh.edges].mean(axis=1)])
    a, b, c = mesh.triangles.T
    ma, mb, mc = mids[mesh.tri_edges].T
    children = np.stack(
        [
            np.column_stack([a, mc, mb]),
            np.column_stack([mc, b, ma]),
            np.column_stack([mb, ma, c]),
            np.column_stack([ma, mb, mc]),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent = np.repeat(np.arange(mesh.n_triangles), 4)
    facets, ftags = _refined_facets(mesh, mids)
    return Triangulation(
        vertices=verts,
        triangles=children,
        ref_edge=longest_edge_ref(verts, children),
        facets=facets,
        facet_tags=ftags,
        tags=mesh.tags,
        parent=parent,
        history=_history(mesh),
    )


def refinement_closure(mesh, marked):
    """Edges to bisect so that refining ``marked`` keeps the mesh conforming."""
    t2e = mesh.tri_edges
    ref = t2e[np.arange(mesh.n_triangles), mesh.ref_edge]
    flag = np.zeros(len(mesh.edges), dtype=bool)
    marked = np.asarray(sorted(marked), dtype=np.int64)
    flag[ref[marked]] = True
    while True:
        touched = flag[t2e].any(axis=1)
        need = ref[touched & ~flag[ref]]
        if need.size == 0:
            return flag
        flag[need] = True


def bisect(mesh: Triangulation, marked) -> Triangulation:
    """Newest-vertex bisection of ``marked`` triangles plus conforming closure."""
    marked = set(int(m) for m in marked)
    if not marked:
        return mesh
    flag = refinement_closure(mesh, marked)
    nv = mesh.n_vertices
    mid_of_edge = -np.ones(len(mesh.edges), dtype=np.int64)
    split = np.flatnonzero(flag)
    mid_of_edge[split] = nv + np.arange(len(split))
    verts = np.vstack([mesh.vertices, mesh.vertices[mesh.edges[split]].mean(axis=1)])

    tris, refs, parent = [], [], []
    t2e = mesh.tri_edges
    for t, (tri, r) in enumerate(zip(mesh.triangles, mesh.ref_edge)):
        e = t2e[t]
        if not flag[e[r]]:
            tris.append(tri)
            refs.append(r)
            parent.append(t)
            continue
        # rotate so the refinement edge is opposite local vertex 0
        a, b, c = tri[r], tri[(r + 1) % 3], tri[(r + 2) % 3]
        m = mid_of_edge[e[r]]
        m_ab = mid_of_edge[e[(r + 2) % 3]]
        m_ca = mid_of_edge[e[(r + 1) % 3]]
        if m_ab < 0:
            tris.append((a, b, m))
            refs.append(2)
        else:
            tris += [(m, a, m_ab), (m, m_ab, b)]
            refs += [2, 1]
        if m_ca < 0:
            tris.append((a, m, c))
            refs.append(1)
        else:
            tris += [(m, c, m_ca), (m, m_ca, a)]
            refs += [2, 1]
        parent += [t] * (len(tris) - len(parent))
    facets, ftags = _refined_facets(mesh, mid_of_edge)
    return Triangulation(
        vertices=verts,
        triangles=np.array(tris, dtype=np.int64),
        ref_edge=np.array(refs, dtype=np.int64),
        facets=facets,
        facet_tags=ftags,
        tags=mesh.tags,
        parent=np.array(parent, dtype=np.int64),
        history=_history(mesh),
    )


# ------------------------------------------------------------------- I/O


def read_mesh(path) -> Triangulation:
    """Read the plain-text node/element format.

    Line 1 is ``nv nt nb``, followed by ``nv`` lines ``x y``, ``nt`` lines
    ``v0 v1 v2`` and ``nb`` lines ``v0 v1 tag``.  A tag is ``D:<label>`` or
    ``N:<label>`` (a bare label is taken as Dirichlet).
    """
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    nv, nt, nb = map(int, lines[0])
    verts = np.array([[float(x) for x in ln[:2]] for ln in lines[1 : 1 + nv]])
    tris = np.array([[int(x) for x in ln[:3]] for ln in lines[1 + nv : 1 + nv + nt]], dtype=np.int64)
    a, b = verts[tris[:, 1]] - verts[tris[:, 0]], verts[tris[:, 2]] - verts[tris[:, 0]]
    area = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    flip = area < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    tags, facets, ftags = [], [], []
    for ln in lines[1 + nv + nt : 1 + nv + nt + nb]:
        kind, _, label = ln[2].rpartition(":")
        tag = BoundaryTag(NEUMANN if kind == "N" else DIRICHLET, label)
        if tag not in tags:
            tags.append(tag)
        facets.append((int(ln[0]), int(ln[1])))
        ftags.append(tags.index(tag))
    return Triangulation(
        vertices=verts,
        triangles=tris,
        ref_edge=longest_edge_ref(verts, tris),
        facets=np.array(facets, dtype=np.int64).reshape(-1, 2),
        facet_tags=np.array(ftags, dtype=np.int64),
        tags=tuple(tags),
    )


def write_mesh(path, mesh: Triangulation):
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.facets)}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for t in mesh.triangles:
            fh.write(f"{t[0]} {t[1]} {t[2]}\n")
        for f, tag in zip(mesh.facets, mesh.facet_tags):
            t = mesh.tags[tag]
            fh.write(f"{f[0]} {f[1]} {'D' if t.kind == DIRICHLET else 'N'}:{t.label}\n")


def _vtk_data(fh, arrays):
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 1:
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            fh.writelines(f"{v:.10e}\n" for v in arr)
        else:
            vec = np.zeros((len(arr), 3))
            vec[:, : arr.shape[1]] = arr[:, :3]
            fh.write(f"VECTORS {name} double\n")
            fh.writelines(f"{a:.10e} {b:.10e} {c:.10e}\n" for a, b, c in vec)


def write_vtk(path, mesh: Triangulation, point_data=None, cell_data=None):
    """Legacy ASCII VTK unstructured grid (cell type 5 = triangle)."""
    with open(path, "w", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\nnlsqfem mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        fh.writelines(f"{x:.16e} {y:.16e} 0.0\n" for x, y in mesh.vertices)
        nt = mesh.n_triangles
        fh.write(f"CELLS {nt} {4 * nt}\n")
        fh.writelines(f"3 {a} {b} {c}\n" for a, b, c in mesh.triangles)
        fh.write(f"CELL_TYPES {nt}\n")
        fh.writelines("5\n" for _ in range(nt))
        if point_data:
            fh.write(f"POINT_DATA {mesh.n_vertices}\n")
            _vtk_data(fh, point_data)
        if cell_data:
            fh.write(f"CELL_DATA {nt}\n")
            _vtk_data(fh, cell_data)

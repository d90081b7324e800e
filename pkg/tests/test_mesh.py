import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsqfem import mesh as msh


def edge_counts(m):
    e = np.sort(np.concatenate([m.triangles[:, [0, 1]], m.triangles[:, [1, 2]], m.triangles[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return counts


def assert_valid(m):
    assert np.all(m.signed_areas() > 0)
    counts = edge_counts(m)
    assert set(np.unique(counts)) <= {1, 2}
    # every boundary edge is a tagged facet
    assert np.sum(counts == 1) == len(m.facets)


def test_unit_square_counts():
    m1, m2 = msh.make_unit_square(1), msh.make_unit_square(2)
    assert (m1.n_vertices, m1.n_triangles) == (4, 2)
    assert (m2.n_vertices, m2.n_triangles) == (9, 8)
    assert all(t.kind == msh.DIRICHLET for t in m1.tags)
    assert np.isclose(msh.make_unit_square(64).diameters().max(), np.sqrt(2) / 64)


@pytest.mark.parametrize("factory", [msh.make_unit_square, msh.make_lshape, msh.make_cook])
def test_zero_n_rejected(factory):
    with pytest.raises(ValueError):
        factory(0)


def test_lshape():
    m = msh.make_lshape(1)
    assert (m.n_vertices, m.n_triangles) == (8, 6)
    assert len(m.facets_with(label="x=1")) == 1
    assert len(m.facets_with(label="y=1")) == 1
    assert np.any(np.all(m.vertices == 0.0, axis=1))
    assert np.isclose(m.signed_areas().sum(), 3.0)
    assert_valid(msh.make_lshape(3))


def test_cook():
    m1 = msh.make_cook(1)
    for corner in msh.COOK_CORNERS:
        assert np.any(np.all(np.isclose(m1.vertices, corner), axis=1))
    m2 = msh.make_cook(2)
    assert m2.n_triangles == 8
    assert_valid(m2)
    labels = {t.label for t in m2.tags}
    assert {"x=0", "traction", "free"} <= labels


def test_uniform_refine():
    m = msh.make_unit_square(1)
    r = msh.uniform_refine(m)
    assert r.n_triangles == 8
    assert r.n_vertices == m.n_vertices + len(m.edges)
    assert len(r.facets_with(kind=msh.DIRICHLET)) == 2 * len(m.facets_with(kind=msh.DIRICHLET))
    ref = msh.make_unit_square(2)
    assert sorted(map(tuple, r.vertices.round(12))) == sorted(map(tuple, ref.vertices.round(12)))
    assert_valid(r)
    assert np.allclose(r.signed_areas().sum(), 1.0)


def test_bisect_examples():
    m = msh.make_unit_square(1)
    assert msh.bisect(m, set()) is m
    b = msh.bisect(m, {0})
    # the diagonal is the refinement edge of both triangles, so both split
    assert b.n_triangles == 4
    assert_valid(b)
    assert np.all(b.parent == [0, 0, 1, 1])


def test_single_triangle_bisection():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    t = np.array([[0, 1, 2]])
    tag = msh.BoundaryTag(msh.DIRICHLET, "boundary")
    single = msh._build(v, t, lambda a, b: tag)
    b = msh.bisect(single, {0})
    assert b.n_triangles == 2
    mid = b.vertices[-1]
    assert np.allclose(mid, [0.5, 0.5])
    assert all(3 in tri for tri in b.triangles)


def test_bisect_all_twice_is_uniform_count():
    m = msh.make_lshape(2)
    b = msh.bisect(m, set(range(m.n_triangles)))
    b = msh.bisect(b, set(range(b.n_triangles)))
    assert b.n_triangles == 4 * m.n_triangles


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["square", "lshape", "cook"]))
def test_random_bisection_keeps_shape_and_area(seed, domain):
    rng = np.random.default_rng(seed)
    m = {"square": msh.make_unit_square, "lshape": msh.make_lshape, "cook": msh.make_cook}[domain](2)
    area0, angle0 = m.signed_areas().sum(), m.min_angle()
    for _ in range(10):
        k = max(1, m.n_triangles // 5)
        m = msh.bisect(m, set(rng.choice(m.n_triangles, size=k, replace=False).tolist()))
        assert np.isclose(m.signed_areas().sum(), area0, rtol=1e-12)
    assert_valid(m)
    assert m.min_angle() >= angle0 / 2


def test_mesh_io_roundtrip(tmp_path):
    m = msh.make_lshape(2)
    p = tmp_path / "l.msh"
    msh.write_mesh(p, m)
    r = msh.read_mesh(p)
    assert np.allclose(r.vertices, m.vertices)
    assert np.array_equal(r.triangles, m.triangles)
    assert len(r.facets) == len(m.facets)


def test_vtk_written(tmp_path):
    m = msh.make_unit_square(2)
    p = tmp_path / "m.vtk"
    msh.write_vtk(p, m, point_data={"x": m.vertices[:, 0]}, cell_data={"a": m.signed_areas()})
    text = p.read_text()
    assert "CELL_TYPES" in text and "POINT_DATA" in text and "CELL_DATA" in text

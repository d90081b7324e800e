import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsqfem import elements as el
from nlsqfem.errors import DegenerateElementError


def random_interior(rng, n):
    p = rng.uniform(0, 1, (n, 2))
    flip = p.sum(axis=1) > 1
    p[flip] = 1 - p[flip]
    return 0.05 + 0.9 * p


def monomial_integral(a, b):
    # int_T x^a y^b over the reference triangle
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10))
def test_quadrature_exactness(q):
    rule = el.quadrature(q)
    assert np.all(rule.weights > 0)
    assert np.isclose(rule.weights.sum(), 0.5, atol=1e-15)
    x, y = rule.points.T
    for a in range(q + 1):
        for b in range(q + 1 - a):
            val = np.sum(rule.weights * x**a * y**b)
            assert abs(val - monomial_integral(a, b)) <= 1e-14


def test_quadrature_examples():
    r1 = el.quadrature(1)
    assert len(r1.weights) == 1 and np.allclose(r1.points, [[1 / 3, 1 / 3]]) and np.isclose(r1.weights[0], 0.5)
    r2 = el.quadrature(2)
    assert np.isclose(np.sum(r2.weights * r2.points[:, 0] ** 2), 1 / 12)
    with pytest.raises(ValueError):
        el.quadrature(11)


def test_lagrange_examples():
    v, _ = el.eval_lagrange(1, [[0.0, 0.0]])
    assert np.allclose(v, [[1, 0, 0]])
    v, _ = el.eval_lagrange(1, [[1 / 3, 1 / 3]])
    assert np.allclose(v, 1 / 3)
    # P2: edge DOFs follow the vertices; the edge (0,1) is opposite vertex 2
    nodes = el.lagrange_nodes(2)
    j = int(np.flatnonzero(np.all(np.isclose(nodes, [0.5, 0.0]), axis=1))[0])
    v, _ = el.eval_lagrange(2, [[0.5, 0.0]])
    assert np.allclose(v[0, :3], 0) and np.isclose(v[0, j], 1)
    with pytest.raises(ValueError):
        el.eval_lagrange(4, [[0.0, 0.0]])


@pytest.mark.parametrize("k", el.LAGRANGE_DEGREES)
def test_lagrange_unisolvence_and_partition(k):
    v, _ = el.eval_lagrange(k, el.lagrange_nodes(k))
    assert np.allclose(v, np.eye(el.lagrange_dof_count(k)), atol=1e-12)
    pts = random_interior(np.random.default_rng(k), 20)
    v, g = el.eval_lagrange(k, pts)
    assert np.allclose(v.sum(axis=1), 1, atol=1e-13)
    assert np.allclose(g.sum(axis=1), 0, atol=1e-11)


@pytest.mark.parametrize("k", el.LAGRANGE_DEGREES)
def test_lagrange_gradient_fd(k):
    pts = random_interior(np.random.default_rng(10 + k), 20)
    _, g = el.eval_lagrange(k, pts)
    h = 1e-6
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        fd = (el.eval_lagrange(k, pts + e)[0] - el.eval_lagrange(k, pts - e)[0]) / (2 * h)
        assert np.allclose(fd, g[..., d], atol=1e-5)


@pytest.mark.parametrize("m", el.RT_INDICES)
def test_rt_unisolvence(m):
    def basis(p):
        return el.eval_rt(m, p)[0]

    D = el.rt_dofs(m, basis)
    assert D.shape == (el.rt_dof_count(m), el.rt_dof_count(m))
    assert np.allclose(D, np.eye(el.rt_dof_count(m)), atol=1e-12)


def test_rt_counts_and_rt0_divergence():
    assert el.rt_dof_count(0) == 3 and el.rt_dof_count(1) == 8
    pts = random_interior(np.random.default_rng(0), 7)
    _, div = el.eval_rt(0, pts)
    assert np.allclose(div, div[0])
    with pytest.raises(ValueError):
        el.eval_rt(3, pts)


@pytest.mark.parametrize("m", el.RT_INDICES)
def test_rt_divergence_fd(m):
    pts = random_interior(np.random.default_rng(20 + m), 20)
    _, div = el.eval_rt(m, pts)
    h = 1e-6
    fd = 0
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        fd = fd + (el.eval_rt(m, pts + e)[0][..., d] - el.eval_rt(m, pts - e)[0][..., d]) / (2 * h)
    assert np.allclose(fd, div, atol=1e-5)


@pytest.mark.parametrize("m", el.RT_INDICES)
def test_rt_normal_trace_degree(m):
    # normal trace on the hypotenuse x + y = 1 is a polynomial of degree m
    s = np.linspace(0, 1, m + 3)
    pts = np.column_stack([1 - s, s])
    vals, _ = el.eval_rt(m, pts)
    nt = vals @ np.array([1.0, 1.0]) / np.sqrt(2)
    for b in range(nt.shape[1]):
        coef = np.polyfit(s, nt[:, b], m + 2)
        assert np.allclose(coef[: 2], 0, atol=1e-9)


def test_piola():
    J, det, fac = el.piola_map([[0, 0], [1, 0], [0, 1]])
    assert np.allclose(J, np.eye(2)) and np.isclose(det, 1)
    J, det, fac = el.piola_map([[0, 0], [2, 0], [0, 2]])
    assert np.isclose(det, 4)
    _, div = el.eval_rt(0, [[0.2, 0.2]])
    # mapped divergence = reference divergence / det
    assert np.allclose(div / det, div / 4)
    with pytest.raises(DegenerateElementError):
        el.piola_map([[0, 0], [1, 1], [2, 2]])

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nlsqfem import assembly as asm
from nlsqfem import mesh as msh
from nlsqfem import oracle, system
from nlsqfem.errors import ConfigurationError

finite = st.floats(-2, 2, allow_nan=False)


def test_heat_kappa_values():
    assert np.isclose(system.heat_kappa(0.0)[0], 2.68)
    assert np.isclose(system.heat_kappa(1.0)[0], 0.26)
    assert np.isclose(system.heat_kappa(0.5)[0], 1.204375)
    assert np.isclose(system.heat_kappa(0.0)[1], -5.41)


def test_heat_residual_examples():
    x = np.zeros((4, 2))
    z, g = np.zeros(4), np.zeros((4, 2))
    r1, r2 = system.heat_residual(x, z, g, g, z, np.zeros(4))
    assert np.allclose(r1, 0) and np.allclose(r2, 0)
    # zero state with f = 1 on the unit square: functional equals |Omega| = 1
    prob = system.HeatProblem(degree=1, source=1.0)
    space = asm.build_mixed(prob, msh.make_unit_square(3))
    total, parts = asm.evaluate_functional(prob, space, np.zeros(space.ndof))
    assert np.isclose(total, 1.0, rtol=1e-12)
    assert np.isclose(sum(p.value for p in parts), total, rtol=1e-12)


def test_heat_linearization_constant_kappa():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(5, 2))
    st_ = (rng.normal(size=5), rng.normal(size=(5, 2)))
    du, gdu, ds, dd = rng.normal(size=5), rng.normal(size=(5, 2)), rng.normal(size=(5, 2)), rng.normal(size=5)
    dr1, dr2 = system.heat_linearization(x, st_, du, gdu, ds, dd, system.constant_kappa(3.0))
    assert np.allclose(dr1, -dd)
    assert np.allclose(dr2, 3.0 * gdu + ds)


def test_heat_example1_exact_pair_has_zero_residual():
    x = np.random.default_rng(1).uniform(size=(200, 2))
    u, g, s, d, f = system.heat_example1_exact(x)
    r1, r2 = system.heat_residual(x, u, g, s, d, f)
    assert np.abs(r1).max() < 1e-10 and np.abs(r2).max() < 1e-10


def test_relu_examples():
    x = np.zeros((1, 2))
    g = np.zeros((1, 2))
    _, r2 = system.relu_residual(x, np.array([-1.0]), g, g, np.zeros(1), np.zeros(1))
    assert np.allclose(r2, 0)
    _, r2 = system.relu_residual(x, np.array([2.0]), g, g, np.zeros(1), np.zeros(1))
    assert np.allclose(r2, 2)
    dd = np.array([0.7])
    _, d2 = system.relu_linearization(x, (np.array([-1.0]), g), np.array([1.0]), g, g, dd)
    assert np.allclose(d2, -dd)
    _, d2 = system.relu_linearization(x, (np.array([1.0]), g), np.array([1.0]), g, g, dd)
    assert np.allclose(d2, 1.0 - dd)
    prob = system.relu_lshape(1, source=1.0)
    space = asm.build_mixed(prob, msh.make_lshape(2))
    x0 = np.zeros(space.ndof)
    assert np.isclose(asm.evaluate_functional(prob, space, x0)[0], 3.0)


def test_relu_parameter_validation():
    with pytest.raises(ConfigurationError):
        system.validate_relu_params(1.0, 1.0)
    system.validate_relu_params(2.0, 2.0)
    with pytest.raises(ConfigurationError):
        system.ReluProblem(delta=5.0, kappa=2.0)


def test_svk_strain_examples():
    assert np.allclose(system.svk_strain(np.zeros((2, 2))), 0)
    a = 0.3
    assert np.allclose(system.svk_strain(np.diag([a, 0.0])), np.diag([a + a * a / 2, 0]))
    w = 0.4
    assert np.allclose(system.svk_strain(np.array([[0, w], [-w, 0]])), w * w / 2 * np.eye(2))


def test_svk_nonlinearity_examples():
    assert np.allclose(system.svk_nonlinearity(np.zeros((2, 2))), 0)
    a = 0.3
    assert np.allclose(system.svk_nonlinearity(np.diag([a, 0.0]), lam=0.0), np.diag([3 * a * a + a**3, 0]))


def test_compliance_examples():
    tau = np.array([[1.0, 2.0], [3.0, -1.0]])
    assert np.allclose(system.compliance(tau), tau / 2)
    assert np.allclose(system.compliance(np.eye(2), lam=2.0), np.eye(2) / 6)


@settings(max_examples=40, deadline=None)
@given(arrays(float, (2, 2), elements=finite), st.floats(0.1, 20))
def test_svk_identities(G, lam):
    lhs = system.piola_stress(G, lam)
    eps = system.sym(G)
    rhs = 2 * eps + lam * np.trace(eps) * np.eye(2) + system.svk_nonlinearity(G, lam)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(lhs).max()))
    tau = 2 * eps + lam * np.trace(eps) * np.eye(2)
    assert np.allclose(system.compliance(tau, lam), eps, atol=1e-12 * max(1.0, np.abs(tau).max()))


@settings(max_examples=40, deadline=None)
@given(arrays(float, (2, 2), elements=finite), arrays(float, (2, 2), elements=finite))
def test_svk_nonlinearity_derivative_fd(G, D):
    h = 1e-6
    fd = (system.svk_nonlinearity(G + h * D) - system.svk_nonlinearity(G - h * D)) / (2 * h)
    ex = system.svk_nonlinearity_derivative(G, D)
    assert np.allclose(ex, fd, atol=1e-6 * max(1.0, np.abs(ex).max()))


def test_svk_linear_regime_is_quadratic():
    rng = np.random.default_rng(2)
    G = rng.normal(size=(2, 2))
    d = [np.linalg.norm(system.compliance(system.svk_nonlinearity(t * G))) for t in (1e-2, 1e-3)]
    assert 90 < d[0] / d[1] < 110


def test_svk_example1_exact_pair_has_zero_residual():
    x = np.random.default_rng(3).uniform(size=(200, 2))
    u, g, s, d, f = system.svk_example1_exact(x)
    r1, r2 = system.svk_residual(x, u, g, s, d, f)
    assert np.abs(r1).max() < 1e-9 and np.abs(r2).max() < 1e-9


def test_svk_zero_state():
    z2, z22 = np.zeros((3, 2)), np.zeros((3, 2, 2))
    r1, r2 = system.svk_residual(z2, z2, z22, z22, z2, z2)
    assert np.allclose(r1, 0) and np.allclose(r2, 0)


@pytest.mark.parametrize("name", ["heat", "relu", "svk"])
def test_linearizations_match_finite_differences(name):
    prob = oracle.oracle_problems()[name]
    assert oracle.fd_jacobian_check(prob, n_states=50, seed=7) <= 1e-5


def test_svk_parameters_validated():
    with pytest.raises(ConfigurationError):
        system.SvkProblem(lam=-1.0)

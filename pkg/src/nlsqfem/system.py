"""First-order systems: residuals, their linearizations and problem data.

Pointwise functions act on arrays with arbitrary leading axes.  Scalar
problems (heat, ReLU) take ``u (...)``, ``grad_u (..., 2)``,
``sigma (..., 2)``, ``div_sigma (...)``.  The elasticity functions take
``u (..., 2)``, ``grad_u (..., 2, 2)`` with ``grad_u[..., i, j] = d u_i / d x_j``,
``sigma (..., 2, 2)`` (rows are H(div) fields) and ``div_sigma (..., 2)``.

Problem classes wrap these with explicit component axes
(``u (..., nu)``, ``grad_u (..., nu, 2)``, ``sigma (..., ns, 2)``,
``div_sigma (..., ns)``) and return one flattened residual vector per point
whose first ``n_first`` entries form the first equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigurationError

I2 = np.eye(2)

# ------------------------------------------------------------------ heat

HEAT_KAPPA_COEFFS = (6.27, -13.26, 9.98, -5.41, 2.68)


def heat_kappa(u):
    """Silicon conductivity quartic in the dimensionless temperature.

    Returns ``(kappa, dkappa/du)``.
    """
    u = np.asarray(u, dtype=float)
    a4, a3, a2, a1, a0 = HEAT_KAPPA_COEFFS
    k = (((a4 * u + a3) * u + a2) * u + a1) * u + a0
    dk = ((4 * a4 * u + 3 * a3) * u + 2 * a2) * u + a1
    return k, dk


def heat_residual(x, u, grad_u, sigma, div_sigma, f, kappa=None):
    """``r1 = f - div sigma``, ``r2 = kappa(x, u) grad u + sigma``."""
    k, _ = _kappa(kappa, x, u)
    r1 = f - div_sigma
    r2 = k[..., None] * grad_u + sigma
    return r1, r2


def heat_linearization(x, state, du, grad_du, dsigma, ddiv, kappa=None):
    u, grad_u = state[0], state[1]
    k, dk = _kappa(kappa, x, u)
    dr1 = -ddiv
    dr2 = k[..., None] * grad_du + (dk * du)[..., None] * grad_u + dsigma
    return dr1, dr2


def _kappa(kappa, x, u):
    if kappa is None:
        return heat_kappa(u)
    k, dk = kappa(x, u)
    return np.broadcast_to(k, np.shape(u)), np.broadcast_to(dk, np.shape(u))


def constant_kappa(value):
    """Conductivity callback ``kappa(x, u) = value``."""

    def kappa(x, u):
        return np.full(np.shape(u), float(value)), np.zeros(np.shape(u))

    return kappa


def piecewise_kappa(values, region):
    """Conductivity ``values[region(x)]`` independent of ``u``."""
    values = np.asarray(values, dtype=float)

    def kappa(x, u):
        k = values[np.asarray(region(x), dtype=int)]
        k = np.broadcast_to(k, np.shape(u))
        return k, np.zeros(np.shape(u))

    return kappa


# ------------------------------------------------------------------ ReLU


def validate_relu_params(delta, kappa):
    if not 1.0 < delta < kappa**2:
        raise ConfigurationError(f"ReLU parameters need 1 < delta < kappa^2, got delta={delta}, kappa={kappa}")


def relu_residual(x, u, grad_u, sigma, div_sigma, f, kappa=2.0):
    """``r1 = kappa (sigma - grad u)``, ``r2 = max(u, 0) - div sigma - f``.

    The shifted splitting ``-div sigma + delta u`` plus ``max(u,0) - delta u``
    sums to the same ``r2``; ``delta`` only matters for the analysis.
    """
    r1 = kappa * (sigma - grad_u)
    r2 = np.maximum(u, 0.0) - div_sigma - f
    return r1, r2


def relu_linearization(x, state, du, grad_du, dsigma, ddiv, kappa=2.0):
    """Generalized derivative with ``H(u) = 1`` for ``u > 0`` and 0 otherwise."""
    active = (state[0] > 0.0).astype(float)
    dr1 = kappa * (dsigma - grad_du)
    dr2 = active * du - ddiv
    return dr1, dr2


# ---------------------------------------------------------- elasticity


def _T(a):
    return np.swapaxes(a, -1, -2)


def _tr(a):
    return a[..., 0, 0] + a[..., 1, 1]


def svk_strain(grad_u):
    """Green-Lagrange strain ``E = (F^T F - I) / 2`` with ``F = I + grad u``."""
    G = np.asarray(grad_u, dtype=float)
    return 0.5 * (G + _T(G) + _T(G) @ G)


def sym(a):
    return 0.5 * (a + _T(a))


def svk_nonlinearity(grad_u, lam=2.0):
    """Higher-order part of the first Piola-Kirchhoff stress.

    ``k = F (2E + lam tr E I) - 2 eps - lam tr eps I``, expanded as
    ``G^T G + G G + G G^T + G G^T G + lam tr(E) G + lam/2 tr(G^T G) I``.
    """
    G = np.asarray(grad_u, dtype=float)
    Gt = _T(G)
    trE = _tr(svk_strain(G))
    return (
        Gt @ G
        + G @ G
        + G @ Gt
        + G @ Gt @ G
        + lam * trE[..., None, None] * G
        + 0.5 * lam * _tr(Gt @ G)[..., None, None] * I2
    )


def svk_nonlinearity_derivative(grad_u, d_grad, lam=2.0):
    """Directional derivative of :func:`svk_nonlinearity` at ``grad_u`` along ``d_grad``."""
    G = np.asarray(grad_u, dtype=float)
    D = np.asarray(d_grad, dtype=float)
    Gt, Dt = _T(G), _T(D)
    trE = _tr(svk_strain(G))
    dtrE = _tr(D) + _tr(Gt @ D)
    GGt = G @ Gt
    return (
        Dt @ G
        + Gt @ D
        + D @ G
        + G @ D
        + D @ Gt
        + G @ Dt
        + D @ Gt @ G
        + G @ Dt @ G
        + GGt @ D
        + lam * dtrE[..., None, None] * G
        + lam * trE[..., None, None] * D
        + lam * _tr(Gt @ D)[..., None, None] * I2
    )


def piola_stress(grad_u, lam=2.0):
    G = np.asarray(grad_u, dtype=float)
    E = svk_strain(G)
    return (I2 + G) @ (2.0 * E + lam * _tr(E)[..., None, None] * I2)


def compliance(tau, lam=2.0, d=2):
    """Inverse of the linear stress map ``eps -> 2 eps + lam tr(eps) I``."""
    tau = np.asarray(tau, dtype=float)
    return 0.5 * (tau - (lam / (2.0 + d * lam)) * _tr(tau)[..., None, None] * I2)


def svk_residual(x, u, grad_u, sigma, div_sigma, f, lam=2.0, kappa=1.0):
    """``r1 = kappa (div sigma + f)``, ``r2 = A sigma - eps(u) - A k(u)``."""
    r1 = kappa * (div_sigma + f)
    r2 = compliance(sigma, lam) - sym(grad_u) - compliance(svk_nonlinearity(grad_u, lam), lam)
    return r1, r2


def svk_linearization(x, state, du, grad_du, dsigma, ddiv, lam=2.0, kappa=1.0):
    grad_u = state[1]
    dk = svk_nonlinearity_derivative(grad_u, grad_du, lam)
    dr1 = kappa * ddiv
    dr2 = compliance(dsigma, lam) - sym(grad_du) - compliance(dk, lam)
    return dr1, dr2


# ---------------------------------------------------------- exact data


def heat_example1_exact(x):
    """Manufactured heat solution on the unit square.

    Returns ``(u, grad_u, sigma, div_sigma, f)`` with ``sigma = -kappa(u) grad u``
    and ``f = -div(kappa(u) grad u)``.
    """
    X, Y = x[..., 0], x[..., 1]
    pi = np.pi
    u = np.sin(pi * X) * np.cos(pi * Y) + 0.1 * (X + Y) ** 2 + 0.4
    gx = pi * np.cos(pi * X) * np.cos(pi * Y) + 0.2 * (X + Y)
    gy = -pi * np.sin(pi * X) * np.sin(pi * Y) + 0.2 * (X + Y)
    lap = -2.0 * pi**2 * np.sin(pi * X) * np.cos(pi * Y) + 0.4
    k, dk = heat_kappa(u)
    grad = np.stack([gx, gy], axis=-1)
    f = -(dk * (gx**2 + gy**2) + k * lap)
    return u, grad, -k[..., None] * grad, f, f


def svk_example1_displacement(x, lam=2.0):
    """Displacement, gradient and Hessian ``H[..., i, j, l] = d^2 u_i / dx_j dx_l``."""
    X, Y = x[..., 0], x[..., 1]
    pi = np.pi
    s, c = np.sin(pi * X), np.cos(pi * X)
    sy, cy = np.sin(pi * Y), np.cos(pi * Y)
    u = 0.1 * np.stack([s * cy + X**2 / (2 * lam), -c * sy + Y**2 / (2 * lam)], axis=-1)
    G = np.empty(X.shape + (2, 2))
    G[..., 0, 0] = pi * c * cy + X / lam
    G[..., 0, 1] = -pi * s * sy
    G[..., 1, 0] = pi * s * sy
    G[..., 1, 1] = -pi * c * cy + Y / lam
    H = np.empty(X.shape + (2, 2, 2))
    H[..., 0, 0, 0] = -(pi**2) * s * cy + 1 / lam
    H[..., 0, 0, 1] = H[..., 0, 1, 0] = -(pi**2) * c * sy
    H[..., 0, 1, 1] = -(pi**2) * s * cy
    H[..., 1, 0, 0] = pi**2 * c * sy
    H[..., 1, 0, 1] = H[..., 1, 1, 0] = pi**2 * s * cy
    H[..., 1, 1, 1] = pi**2 * c * sy + 1 / lam
    return u, 0.1 * G, 0.1 * H


def svk_example1_exact(x, lam=2.0):
    """Manufactured elasticity solution: ``(u, grad_u, sigma, div_sigma, f)``."""
    u, G, H = svk_example1_displacement(x, lam)
    F = I2 + G
    E = svk_strain(G)
    S = 2.0 * E + lam * _tr(E)[..., None, None] * I2
    P = F @ S
    # d_l G = H[..., :, :, l]
    div = np.zeros(u.shape)
    for l in range(2):
        dG = H[..., l]
        dE = 0.5 * (dG + _T(dG) + _T(dG) @ G + _T(G) @ dG)
        dS = 2.0 * dE + lam * _tr(dE)[..., None, None] * I2
        dP = dG @ S + F @ dS
        div += dP[..., :, l]
    return u, G, P, div, -div


# ------------------------------------------------------------- problems


@dataclass(frozen=True)
class ExactSolution:
    """Callable ``x -> (u, grad_u, sigma, div_sigma)`` with component axes."""

    func: Callable

    def __call__(self, x):
        return self.func(x)


class FirstOrderSystem:
    """Common interface used by assembly, solvers and the experiment lab."""

    name = "abstract"
    n_u = 1
    n_sigma = 1
    n_first = 1
    degree = 1
    load_factor = 1.0

    @property
    def flux_index(self):
        return self.degree - 1

    @property
    def n_residual(self):
        raise NotImplementedError

    def residual(self, x, u, gu, s, ds):
        raise NotImplementedError

    def linearization(self, x, state, du, gdu, dsig, ddiv):
        raise NotImplementedError

    def dirichlet_rules(self):
        return {}

    def flux_rules(self):
        return {}

    def exact(self):
        return None

    def scaled(self, factor):
        return replace(self, load_factor=factor)


def _load(f, x, factor):
    if f is None:
        return np.zeros(x.shape[:-1])
    if callable(f):
        return factor * np.asarray(f(x), dtype=float)
    return np.full(x.shape[:-1], factor * float(f))


def _const_rule(value, ncomp=1):
    def rule(x, *_):
        return np.full((len(x), ncomp), float(value))

    return rule


@dataclass(frozen=True)
class HeatProblem(FirstOrderSystem):
    """Stationary heat conduction with conductivity ``kappa(x, u)``."""

    degree: int = 1
    kappa: Callable | None = None  # None -> silicon quartic
    source: Callable | float | None = None
    dirichlet: dict = field(default_factory=dict)  # label -> value or callable
    zero_flux: tuple = ()  # Neumann labels (all Neumann facets get zero flux)
    exact_solution: Callable | None = None
    load_factor: float = 1.0
    name: str = "heat"

    n_u = 1
    n_sigma = 1
    n_first = 1

    @property
    def n_residual(self):
        return 3

    def residual(self, x, u, gu, s, ds):
        f = _load(self.source, x, self.load_factor)
        r1, r2 = heat_residual(x, u[..., 0], gu[..., 0, :], s[..., 0, :], ds[..., 0], f, self.kappa)
        return np.concatenate([r1[..., None], r2], axis=-1)

    def linearization(self, x, state, du, gdu, dsig, ddiv):
        st = (state[0][..., 0], state[1][..., 0, :])
        dr1, dr2 = heat_linearization(x, st, du[..., 0], gdu[..., 0, :], dsig[..., 0, :], ddiv[..., 0], self.kappa)
        shape = np.broadcast_shapes(np.shape(dr1), dr2.shape[:-1])
        return np.concatenate([np.broadcast_to(dr1, shape)[..., None], np.broadcast_to(dr2, shape + (2,))], axis=-1)

    def dirichlet_rules(self):
        return {k: (v if callable(v) else _const_rule(v)) for k, v in self.dirichlet.items()}

    def exact(self):
        return self.exact_solution


@dataclass(frozen=True)
class ReluProblem(FirstOrderSystem):
    """``-div grad u + max(u, 0) = f`` with flux ``sigma = grad u``."""

    degree: int = 1
    delta: float = 2.0
    kappa: float = 2.0
    source: Callable | float | None = None
    dirichlet: dict = field(default_factory=dict)
    exact_solution: Callable | None = None
    load_factor: float = 1.0
    name: str = "relu"

    n_u = 1
    n_sigma = 1
    n_first = 2

    def __post_init__(self):
        validate_relu_params(self.delta, self.kappa)

    @property
    def n_residual(self):
        return 3

    def residual(self, x, u, gu, s, ds):
        f = _load(self.source, x, self.load_factor)
        r1, r2 = relu_residual(x, u[..., 0], gu[..., 0, :], s[..., 0, :], ds[..., 0], f, self.kappa)
        return np.concatenate([r1, r2[..., None]], axis=-1)

    def linearization(self, x, state, du, gdu, dsig, ddiv):
        st = (state[0][..., 0], state[1][..., 0, :])
        dr1, dr2 = relu_linearization(x, st, du[..., 0], gdu[..., 0, :], dsig[..., 0, :], ddiv[..., 0], self.kappa)
        shape = np.broadcast_shapes(dr1.shape[:-1], np.shape(dr2))
        return np.concatenate([np.broadcast_to(dr1, shape + (2,)), np.broadcast_to(dr2, shape)[..., None]], axis=-1)

    def dirichlet_rules(self):
        return {k: (v if callable(v) else _const_rule(v)) for k, v in self.dirichlet.items()}

    def exact(self):
        return self.exact_solution


@dataclass(frozen=True)
class SvkProblem(FirstOrderSystem):
    """Saint Venant-Kirchhoff elasticity with ``kappa``-weighted momentum balance."""

    degree: int = 2
    lam: float = 2.0
    kappa: float = 1.0
    body_force: Callable | None = None  # x -> (..., 2)
    dirichlet: dict = field(default_factory=dict)  # label -> callable (P, 2) or None for zero
    traction: dict = field(default_factory=dict)  # label -> (tx, ty) on sigma n
    exact_solution: Callable | None = None
    load_factor: float = 1.0
    name: str = "svk"

    n_u = 2
    n_sigma = 2
    n_first = 2

    def __post_init__(self):
        if not (self.lam > 0 and self.kappa > 0):
            raise ConfigurationError("SVK parameters need lam > 0 and kappa > 0")

    @property
    def n_residual(self):
        return 6

    def _force(self, x):
        if self.body_force is None:
            return np.zeros(x.shape[:-1] + (2,))
        return self.load_factor * np.asarray(self.body_force(x), dtype=float)

    def residual(self, x, u, gu, s, ds):
        r1, r2 = svk_residual(x, u, gu, s, ds, self._force(x), self.lam, self.kappa)
        return np.concatenate([r1, r2.reshape(r2.shape[:-2] + (4,))], axis=-1)

    def linearization(self, x, state, du, gdu, dsig, ddiv):
        dr1, dr2 = svk_linearization(x, state, du, gdu, dsig, ddiv, self.lam, self.kappa)
        dr2 = dr2.reshape(dr2.shape[:-2] + (4,))
        shape = np.broadcast_shapes(dr1.shape[:-1], dr2.shape[:-1])
        return np.concatenate([np.broadcast_to(dr1, shape + (2,)), np.broadcast_to(dr2, shape + (4,))], axis=-1)

    def dirichlet_rules(self):
        out = {}
        for k, v in self.dirichlet.items():
            out[k] = v if callable(v) else _const_rule(0.0, 2)
        return out

    def flux_rules(self):
        out = {}
        for label, t in self.traction.items():
            t = np.asarray(t, dtype=float)
            factor = self.load_factor

            def rule(x, n, t=t, factor=factor):
                return np.tile(factor * t, (len(x), 1))

            out[label] = rule
        return out

    def exact(self):
        return self.exact_solution


# ------------------------------------------------------------ catalogue


def heat_example1(degree=1):
    def exact(x):
        u, g, s, d, _ = heat_example1_exact(x)
        return u[..., None], g[..., None, :], s[..., None, :], d[..., None]

    return HeatProblem(
        degree=degree,
        source=lambda x: heat_example1_exact(x)[4],
        dirichlet={"boundary": lambda x: heat_example1_exact(x)[0][:, None]},
        exact_solution=exact,
        name="heat-square",
    )


def heat_example2(degree=1, source=-0.05):
    return HeatProblem(degree=degree, source=source, dirichlet={"x=1": 0.0, "y=1": 0.85}, name="heat-lshape")


def relu_lshape(degree=1, delta=2.0, kappa=2.0, source=0.0):
    return ReluProblem(degree=degree, delta=delta, kappa=kappa, source=source, dirichlet={"x=1": -2.0, "y=1": 3.0}, name="relu-lshape")


def svk_example1(degree=2, lam=2.0, kappa=1.0):
    def exact(x):
        u, g, s, d, _ = svk_example1_exact(x, lam)
        return u, g, s, d

    def force(x):
        return svk_example1_exact(x, lam)[4]

    return SvkProblem(
        degree=degree,
        lam=lam,
        kappa=kappa,
        body_force=force,
        dirichlet={"boundary": lambda x: svk_example1_exact(x, lam)[0]},
        exact_solution=exact,
        name="svk-square",
    )


def svk_cook(degree=2, lam=2.0, kappa=np.sqrt(1e3), traction_y=0.03):
    return SvkProblem(
        degree=degree,
        lam=lam,
        kappa=kappa,
        dirichlet={"x=0": None},
        traction={"traction": (0.0, traction_y)},
        name="svk-cook",
    )

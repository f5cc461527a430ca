"""Lagrange P1/P2/P3 finite elements on uniform 1D meshes.

Everything is assembled through a sparse "quadrature operator": the matrix
``Phi`` of basis values at all quadrature points of the mesh, together with
the matching weights.  Matrices are then ``Phi^T diag(w f) Phi`` and load
vectors ``Phi^T (w g)``, which keeps the code short and the cost linear in
the number of elements.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh1D, RefinementPair
from .numerics import SPD, factorize

# ---------------------------------------------------------------- quadrature


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray = field(compare=False)
    weights: np.ndarray = field(compare=False)
    degree: int

    @property
    def n_points(self) -> int:
        return len(self.points)


@lru_cache(maxsize=None)
def gauss_rule(n_points: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1] with ``n_points`` nodes."""
    if not 1 <= n_points <= 10:
        raise ValueError(f"unsupported number of Gauss points: {n_points}")
    x, w = np.polynomial.legendre.leggauss(n_points)
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, 2 * n_points - 1)


def _rule(quad: Union[QuadratureRule, int, None], default: int) -> QuadratureRule:
    if quad is None:
        return gauss_rule(default)
    if isinstance(quad, QuadratureRule):
        return quad
    return gauss_rule(int(quad))


# ---------------------------------------------------------------- potentials


@dataclass(frozen=True)
class Potential:
    """A nonnegative potential V(x).

    ``quad_points`` overrides the default per-element quadrature used for
    ``(V u, v)``; it is set for discontinuous potentials.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    quad_points: int | None = None
    smooth: bool = True

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))


def _harmonic10(x):
    return 10.0 * x**2


def _harmonic(x):
    return x**2


def _discontinuous(x):
    return 10.0 * x**2 * (x <= 0.0) + 100.0 * (x >= 5.0)


def _zero(x):
    return np.zeros_like(x)


def _one(x):
    return np.ones_like(x)


POTENTIALS = {
    "V1": Potential("V1", _harmonic10),
    "Vgs": Potential("Vgs", _harmonic),
    "V2": Potential("V2", _discontinuous, quad_points=5, smooth=False),
    "zero": Potential("zero", _zero),
    "one": Potential("one", _one),
}


def get_potential(name: str) -> Potential:
    try:
        return POTENTIALS[name]
    except KeyError:
        raise ValueError(f"unknown potential {name!r}; known: {sorted(POTENTIALS)}") from None


# ---------------------------------------------------------------- spaces


@lru_cache(maxsize=None)
def _lagrange_coefficients(k: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, k + 1)
    return np.linalg.inv(np.vander(s, k + 1, increasing=True))


def lagrange_basis(k: int, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and d/ds of the equispaced Lagrange basis on [0, 1] at ``s``."""
    s = np.asarray(s, dtype=float)
    C = _lagrange_coefficients(k)
    P = np.vander(s, k + 1, increasing=True)
    dP = np.zeros_like(P)
    dP[:, 1:] = P[:, :-1] * np.arange(1, k + 1)
    return P @ C, dP @ C


@dataclass(frozen=True)
class FESpace:
    mesh: Mesh1D
    order: int = 1

    def __post_init__(self):
        if self.order not in (1, 2, 3):
            raise ValueError(f"unsupported element order {self.order}")

    @property
    def n_dofs(self) -> int:
        return self.order * self.mesh.n_elements - 1

    @property
    def dof_map(self) -> np.ndarray:
        """(n_elements, k+1) dof indices; -1 marks Dirichlet boundary nodes."""
        k, n = self.order, self.mesh.n_elements
        g = k * np.arange(n)[:, None] + np.arange(k + 1)[None, :]
        d = g - 1
        d[(g == 0) | (g == k * n)] = -1
        return d

    @property
    def dof_coordinates(self) -> np.ndarray:
        m = self.mesh
        return m.a + (m.h / self.order) * np.arange(1, self.n_dofs + 1)

    def zero(self) -> "FEFunction":
        return FEFunction(self, np.zeros(self.n_dofs, dtype=complex))


@dataclass
class FEFunction:
    space: FESpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients)
        if self.coefficients.shape != (self.space.n_dofs,):
            raise ValueError(f"expected {self.space.n_dofs} coefficients, got {self.coefficients.shape}")

    def __call__(self, x):
        return basis_matrix(self.space, x) @ self.coefficients

    def derivative(self, x):
        return basis_matrix(self.space, x, deriv=True) @ self.coefficients


def basis_matrix(space: FESpace, x: np.ndarray, deriv: bool = False) -> sp.csr_matrix:
    """Sparse ``(len(x), n_dofs)`` matrix of basis values (or derivatives) at ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    e, s = space.mesh.locate(x)
    val, dval = lagrange_basis(space.order, s)
    if deriv:
        val = dval / space.mesh.h
    dofs = space.dof_map[e]
    rows = np.repeat(np.arange(len(x)), space.order + 1).reshape(dofs.shape)
    keep = dofs >= 0
    return sp.csr_matrix((val[keep], (rows[keep], dofs[keep])), shape=(len(x), space.n_dofs))


@dataclass(frozen=True)
class QuadratureOperator:
    """Basis values/derivatives at every quadrature point of a mesh."""

    x: np.ndarray
    weights: np.ndarray
    phi: sp.csr_matrix
    dphi: sp.csr_matrix


@lru_cache(maxsize=32)
def quadrature_operator(space: FESpace, n_points: int, on: Mesh1D | None = None) -> QuadratureOperator:
    """Quadrature on the elements of ``on`` (default: the space's own mesh).

    ``on`` must be a refinement of ``space.mesh`` for exact integration of
    piecewise polynomials.
    """
    mesh = on or space.mesh
    rule = gauss_rule(n_points)
    left = mesh.nodes[:-1]
    x = (left[:, None] + mesh.h * rule.points[None, :]).ravel()
    w = np.tile(mesh.h * rule.weights, mesh.n_elements)
    return QuadratureOperator(x, w, basis_matrix(space, x), basis_matrix(space, x, deriv=True))


def _sym(A: sp.csr_matrix) -> sp.csr_matrix:
    A = sp.csr_matrix(0.5 * (A + A.T))
    A.sort_indices()
    return A


def _weighted_gram(Q: QuadratureOperator, wf: np.ndarray, deriv: bool = False) -> sp.csr_matrix:
    P = Q.dphi if deriv else Q.phi
    return _sym(P.T @ sp.diags(wf) @ P)


def default_linear_points(space: FESpace) -> int:
    return 2 * space.order + 2


def default_nonlinear_points(space: FESpace) -> int:
    return max(3, 2 * space.order + 1)


def potential_points(space: FESpace, V: Potential) -> int:
    return V.quad_points or default_linear_points(space)


def assemble_mass(space: FESpace, quad=None) -> sp.csr_matrix:
    Q = quadrature_operator(space, _rule(quad, default_linear_points(space)).n_points)
    return _weighted_gram(Q, Q.weights)


def assemble_stiffness(space: FESpace, quad=None) -> sp.csr_matrix:
    Q = quadrature_operator(space, _rule(quad, default_linear_points(space)).n_points)
    return _weighted_gram(Q, Q.weights, deriv=True)


def assemble_weighted_mass(space: FESpace, V: Potential, quad=None) -> sp.csr_matrix:
    Q = quadrature_operator(space, _rule(quad, potential_points(space, V)).n_points)
    v = V(Q.x)
    if np.any(v < 0):
        i = int(np.argmax(v < 0))
        raise ValueError(f"potential {V.name} is negative at x = {Q.x[i]:.6g}: {v[i]:.6g}")
    return _weighted_gram(Q, Q.weights * v)


def hform(space: FESpace, V: Potential, quad=None) -> sp.csr_matrix:
    """Matrix of ``(grad u, grad v) + (V u, v)``."""
    return _sym(assemble_stiffness(space) + assemble_weighted_mass(space, V, quad))


def nonlinear_vector(space: FESpace, u, beta: float, quad=None) -> np.ndarray:
    """``beta * (|u|^2 u, phi_m)`` for all basis functions."""
    c = u.coefficients if isinstance(u, FEFunction) else np.asarray(u)
    Q = quadrature_operator(space, _rule(quad, default_nonlinear_points(space)).n_points)
    uq = Q.phi @ c
    return beta * (Q.phi.T @ (Q.weights * (uq.real**2 + uq.imag**2) * uq))


def energy(space: FESpace, V: Potential, beta: float, u, quad=None, hmat=None) -> float:
    """Gross-Pitaevskii energy ``1/2 int |u'|^2 + V|u|^2 + beta/2 |u|^4``."""
    c = u.coefficients if isinstance(u, FEFunction) else np.asarray(u)
    A = hform(space, V) if hmat is None else hmat
    quadratic = 0.5 * np.real(np.vdot(c, A @ c))
    if beta == 0:
        return float(quadratic)
    Q = quadrature_operator(space, _rule(quad, default_nonlinear_points(space)).n_points)
    rho = np.abs(Q.phi @ c) ** 2
    return float(quadratic + 0.25 * beta * np.dot(Q.weights, rho**2))


def _nested(fine: Mesh1D, coarse: Mesh1D) -> bool:
    return (fine.a, fine.b) == (coarse.a, coarse.b) and fine.n_elements % coarse.n_elements == 0


def l2_project(space: FESpace, f, quad=None) -> FEFunction:
    """L2 projection of a callable or of an FE function on a nested mesh."""
    if isinstance(f, FEFunction):
        src = f.space
        if (src.mesh.a, src.mesh.b) != (space.mesh.a, space.mesh.b):
            raise ValueError("functions live on different intervals")
        finer = src.mesh if src.mesh.n_elements >= space.mesh.n_elements else space.mesh
        if not (_nested(finer, src.mesh) and _nested(finer, space.mesh)):
            raise ValueError("L2 projection between non-nested meshes is not supported")
        n = _rule(quad, (src.order + space.order) // 2 + 1).n_points
        Q = quadrature_operator(space, n, on=finer)
        values = basis_matrix(src, Q.x) @ f.coefficients
    else:
        Q = quadrature_operator(space, _rule(quad, default_linear_points(space) + 2).n_points)
        values = np.asarray(f(Q.x))
    load = Q.phi.T @ (Q.weights * values)
    M = assemble_mass(space)
    return FEFunction(space, factorize(M, SPD).solve(load))


def _error_quadrature(u: FEFunction, v: FEFunction, quad):
    mu, mv = u.space.mesh, v.space.mesh
    if (mu.a, mu.b) != (mv.a, mv.b):
        raise ValueError(f"functions live on different intervals ({mu.a}, {mu.b}) and ({mv.a}, {mv.b})")
    finer = mu if mu.n_elements >= mv.n_elements else mv
    n = _rule(quad, max(u.space.order, v.space.order) + 2).n_points
    Q = quadrature_operator(u.space, n, on=finer)
    return Q


def h1_error(u: FEFunction, v: FEFunction, quad=None) -> float:
    """``||u - v||_{H^1}`` by composite quadrature on the finer mesh."""
    Q = _error_quadrature(u, v, quad)
    d = Q.phi @ u.coefficients - basis_matrix(v.space, Q.x) @ v.coefficients
    dd = Q.dphi @ u.coefficients - basis_matrix(v.space, Q.x, deriv=True) @ v.coefficients
    return float(np.sqrt(np.dot(Q.weights, np.abs(d) ** 2 + np.abs(dd) ** 2)))


def l2_error(u: FEFunction, v: FEFunction, quad=None) -> float:
    Q = _error_quadrature(u, v, quad)
    d = Q.phi @ u.coefficients - basis_matrix(v.space, Q.x) @ v.coefficients
    return float(np.sqrt(np.dot(Q.weights, np.abs(d) ** 2)))


def prolongation_matrix(pair: RefinementPair) -> sp.csr_matrix:
    """Fine P1 coefficients of every coarse P1 hat (fine dofs x coarse dofs)."""
    fine = FESpace(pair.fine, 1)
    P = basis_matrix(FESpace(pair.coarse, 1), fine.dof_coordinates)
    P.eliminate_zeros()
    return P


def prolong(u: FEFunction, pair: RefinementPair) -> FEFunction:
    if u.space.order != 1 or u.space.mesh != pair.coarse:
        raise ValueError("prolong expects a P1 function on the coarse mesh of the pair")
    return FEFunction(FESpace(pair.fine, 1), prolongation_matrix(pair) @ u.coefficients)


def interpolate(space: FESpace, f: Callable) -> FEFunction:
    return FEFunction(space, np.asarray(f(space.dof_coordinates)))


class FEMSystem:
    """cG-P^k spatial system: Lagrange matrices and the exact cubic nonlinearity."""

    def __init__(self, space: FESpace, potential: Potential, beta: float):
        self.space = space
        self.potential = potential
        self.beta = float(beta)
        self.mass = assemble_mass(space)
        self.stiffness = assemble_stiffness(space)
        self.hmat = hform(space, potential)
        self.h1_gram = sp.csr_matrix(self.stiffness + self.mass)
        self._nq = default_nonlinear_points(space)

    @property
    def dim(self) -> int:
        return self.space.n_dofs

    def nonlinear(self, u: np.ndarray) -> np.ndarray:
        return nonlinear_vector(self.space, u, self.beta, self._nq)

    def energy(self, u: np.ndarray) -> float:
        return energy(self.space, self.potential, self.beta, u, self._nq, hmat=self.hmat)

    def initial_value(self, u0: FEFunction) -> np.ndarray:
        return l2_project(self.space, u0).coefficients

    def lift(self, c: np.ndarray) -> FEFunction:
        return FEFunction(self.space, c)

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from gpelab import fem
from gpelab.mesh import RefinementPair, level_mesh, uniform_mesh
from gpelab.numerics import SPD, factorize

L = 30.0


def composite(f, a, b, n_sub=64, pts=10):
    """Dense high-order composite Gauss quadrature of a vectorized ``f``."""
    x, w = np.polynomial.legendre.leggauss(pts)
    edges = np.linspace(a, b, n_sub + 1)
    h = np.diff(edges)
    xs = (edges[:-1, None] + 0.5 * h[:, None] * (x[None, :] + 1)).ravel()
    ws = (0.5 * h[:, None] * w[None, :]).ravel()
    return np.sum(ws[..., None] * np.atleast_2d(f(xs).T).T, axis=0) if np.ndim(f(xs)) > 1 else np.dot(ws, f(xs))


# ---------------------------------------------------------------- quadrature


def test_gauss_midpoint():
    r = fem.gauss_rule(1)
    assert r.points[0] == 0.5 and r.weights[0] == 1.0


@pytest.mark.parametrize("n", range(1, 11))
def test_gauss_weights_and_exactness(n):
    r = fem.gauss_rule(n)
    assert np.all(r.weights > 0) and r.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all((r.points > 0) & (r.points < 1))
    for d in range(2 * n):
        assert np.dot(r.weights, r.points**d) == pytest.approx(1 / (d + 1), rel=1e-13)


def test_gauss_cubic_two_points():
    r = fem.gauss_rule(2)
    assert np.dot(r.weights, r.points**3) == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize("n", [0, 11])
def test_gauss_unsupported(n):
    with pytest.raises(ValueError):
        fem.gauss_rule(n)


# ---------------------------------------------------------------- spaces


@pytest.mark.parametrize("k", [1, 2, 3])
def test_basis_partition_and_nodal(k):
    s = np.linspace(0, 1, k + 1)
    val, dval = fem.lagrange_basis(k, s)
    np.testing.assert_allclose(val, np.eye(k + 1), atol=1e-13)
    t = np.linspace(0, 1, 17)
    val, dval = fem.lagrange_basis(k, t)
    np.testing.assert_allclose(val.sum(axis=1), 1.0, atol=1e-13)
    np.testing.assert_allclose(dval.sum(axis=1), 0.0, atol=1e-11)


@pytest.mark.parametrize("k", [2, 3])
def test_interpolation_reproduces_polynomials(k):
    space = fem.FESpace(uniform_mesh(0, 1, 5), k)
    p = lambda x: x * (1 - x) * (0.3 + x) ** (k - 2)
    u = fem.interpolate(space, p)
    x = np.linspace(0, 1, 101)
    np.testing.assert_allclose(u(x), p(x), atol=1e-13)


def test_fespace_dofs():
    space = fem.FESpace(uniform_mesh(0, 1, 4), 3)
    assert space.n_dofs == 11
    assert space.dof_map[0, 0] == -1 and space.dof_map[-1, -1] == -1
    assert space.dof_map[1, 0] == space.dof_map[0, -1]
    with pytest.raises(ValueError):
        fem.FESpace(uniform_mesh(0, 1, 4), 4)
    with pytest.raises(ValueError):
        fem.FEFunction(space, np.zeros(3))


# ---------------------------------------------------------------- matrices


def test_p1_mass_and_stiffness_rows():
    space = fem.FESpace(uniform_mesh(0, 3, 6), 1)
    h = 0.5
    M = fem.assemble_mass(space).toarray()
    S = fem.assemble_stiffness(space).toarray()
    np.testing.assert_allclose(M[2, 1:4], h / 6 * np.array([1, 4, 1]), rtol=1e-14)
    np.testing.assert_allclose(S[2, 1:4], np.array([-1, 2, -1]) / h, rtol=1e-14)
    np.testing.assert_allclose(M[2].sum(), h, rtol=1e-14)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_mass_spd(k):
    space = fem.FESpace(uniform_mesh(0, 1, 2), k) if k > 1 else fem.FESpace(uniform_mesh(0, 1, 6), 1)
    M = fem.assemble_mass(space).toarray()
    assert np.allclose(M, M.T, atol=1e-15)
    assert np.linalg.eigvalsh(M).min() > 0


def test_stiffness_kills_linear_interior():
    space = fem.FESpace(uniform_mesh(0, 1, 8), 2)
    S = fem.assemble_stiffness(space)
    u = fem.interpolate(space, lambda x: 3 * x + 1).coefficients
    r = S @ u
    np.testing.assert_allclose(r[2:-2], 0, atol=1e-12)


def test_stiffness_quadratic_form_converges():
    exact = (np.pi / L) ** 2 * L / 2  # int |d/dx sin(pi (x+15)/30)|^2
    errs = []
    for n in (32, 64):
        space = fem.FESpace(uniform_mesh(-15, 15, n), 1)
        u = fem.interpolate(space, lambda x: np.sin(np.pi * (x + 15) / L)).coefficients
        errs.append(abs(u @ (fem.assemble_stiffness(space) @ u) - exact))
    assert np.log2(errs[0] / errs[1]) == pytest.approx(2, abs=0.1)


def test_weighted_mass_one_equals_mass():
    space = fem.FESpace(uniform_mesh(0, 1, 5), 2)
    diff = fem.assemble_weighted_mass(space, fem.get_potential("one")) - fem.assemble_mass(space)
    assert abs(diff).max() < 1e-15


def test_weighted_mass_v1_analytic():
    space = fem.FESpace(uniform_mesh(-1, 1, 4), 1)
    A = fem.assemble_weighted_mass(space, fem.get_potential("V1")).toarray()
    # dof 1 is the hat at x = 0 on [-0.5, 0.5]; int 10 x^2 (1-2|x|)^2 = 20 * (1/24 - 1/16 + 1/40) * ... exact by sympy-free algebra
    hat = lambda x: np.maximum(0, 1 - 2 * np.abs(x))
    for a, b, i, j in [(-0.5, 0.5, 1, 1), (0.0, 0.5, 1, 2), (0.0, 1.0, 2, 2)]:
        shift = {1: 0.0, 2: 0.5}
        f = lambda x: 10 * x**2 * hat(x - shift[i]) * hat(x - shift[j])
        exact = sum(composite(f, lo, lo + 0.5, n_sub=1) for lo in np.arange(a, b, 0.5))
        assert A[i, j] == pytest.approx(exact, rel=1e-13)


def test_weighted_mass_v2_straddling_element():
    space = fem.FESpace(level_mesh(13), 1)
    V = fem.get_potential("V2")
    A = fem.assemble_weighted_mass(space, V)
    m = space.mesh
    j = int((5 - m.a) // m.h)
    a, b = m.element(j)
    assert a < 5 < b
    # exact element matrix by splitting at the jump
    def local(lo, hi):
        x, w = np.polynomial.legendre.leggauss(6)
        xs = lo + (hi - lo) * (x + 1) / 2
        ws = (hi - lo) * w / 2
        s = (xs - a) / m.h
        phi = np.stack([1 - s, s])
        return (phi * ws * V(xs)) @ phi.T
    exact = local(a, 5.0) + local(5.0, b)
    # the rule's own element matrix
    r = fem.gauss_rule(5)
    xs = a + m.h * r.points
    phi = np.stack([1 - r.points, r.points])
    approx = (phi * m.h * r.weights * V(xs)) @ phi.T
    d = (j - 1, j)
    np.testing.assert_allclose(A[np.ix_(d, d)].toarray(), approx + _neighbours(space, V, j), rtol=1e-11)
    delta = np.linalg.norm(approx - exact)
    assert delta / sp.linalg.norm(A) <= 1e-3


def _neighbours(space, V, j):
    """Contributions of the elements adjacent to element ``j`` to its 2x2 block."""
    m = space.mesh
    r = fem.gauss_rule(5)
    out = np.zeros((2, 2))
    for e, corner in ((j - 1, (0, 0)), (j + 1, (1, 1))):
        a, _ = m.element(e)
        xs = a + m.h * r.points
        phi = (r.points if e < j else 1 - r.points)
        out[corner] += np.sum(m.h * r.weights * V(xs) * phi**2)
    return out


def test_negative_potential_rejected():
    space = fem.FESpace(uniform_mesh(0, 1, 4), 1)
    with pytest.raises(ValueError, match="negative"):
        fem.assemble_weighted_mass(space, fem.Potential("neg", lambda x: x - 0.5))


def test_hform():
    space = fem.FESpace(uniform_mesh(-2, 2, 10), 2)
    assert abs(fem.hform(space, fem.get_potential("zero")) - fem.assemble_stiffness(space)).max() == 0
    A = fem.hform(space, fem.get_potential("V1"))
    assert abs(A - A.T).max() <= 1e-14 * abs(A).max()
    factorize(A, SPD)


# ---------------------------------------------------------------- nonlinear, energy


def _random_fe(space, seed):
    rng = np.random.default_rng(seed)
    return 0.3 * (rng.standard_normal(space.n_dofs) + 1j * rng.standard_normal(space.n_dofs))


@settings(max_examples=20, deadline=None)
@given(k=st.sampled_from([1, 2, 3]), seed=st.integers(0, 10**6))
def test_nonlinear_vector_vs_composite_quadrature(k, seed):
    space = fem.FESpace(uniform_mesh(-1, 2, 3), k)
    c = _random_fe(space, seed)
    b = fem.nonlinear_vector(space, c, 2.5)
    u = fem.FEFunction(space, c)
    ref = np.zeros(space.n_dofs, dtype=complex)
    for e in range(3):
        a, bb = space.mesh.element(e)
        f = lambda x: (2.5 * np.abs(u(x)) ** 2 * u(x))[:, None] * fem.basis_matrix(space, x).toarray()
        ref += composite(f, a, bb, n_sub=64)
    assert np.abs(b - ref).max() <= 1e-10 * np.abs(ref).max()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), alpha_re=st.floats(-2, 2), alpha_im=st.floats(-2, 2))
def test_nonlinear_homogeneity(seed, alpha_re, alpha_im):
    space = fem.FESpace(uniform_mesh(0, 1, 4), 2)
    c = _random_fe(space, seed)
    alpha = complex(alpha_re, alpha_im)
    lhs = fem.nonlinear_vector(space, alpha * c, 1.0)
    rhs = abs(alpha) ** 2 * alpha * fem.nonlinear_vector(space, c, 1.0)
    np.testing.assert_allclose(lhs, rhs, atol=1e-13 * max(1, abs(alpha) ** 3))


def test_nonlinear_zero():
    space = fem.FESpace(uniform_mesh(0, 1, 4), 3)
    assert np.all(fem.nonlinear_vector(space, np.zeros(space.n_dofs), 100.0) == 0)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_energy_vs_composite(k):
    space = fem.FESpace(uniform_mesh(-2, 2, 4), k)
    V = fem.get_potential("V1")
    u = fem.FEFunction(space, _random_fe(space, k))
    E = fem.energy(space, V, 7.0, u)
    dens = lambda x: 0.5 * (np.abs(u.derivative(x)) ** 2 + V(x) * np.abs(u(x)) ** 2) + 1.75 * np.abs(u(x)) ** 4
    ref = sum(composite(dens, *space.mesh.element(e)) for e in range(4))
    assert E == pytest.approx(ref, rel=1e-10)
    assert fem.energy(space, V, 7.0, space.zero()) == 0
    A = fem.hform(space, V)
    c = u.coefficients
    assert fem.energy(space, V, 0.0, u) == pytest.approx(0.5 * np.real(np.vdot(c, A @ c)), rel=1e-14)


# ---------------------------------------------------------------- projection, errors


def test_projection_idempotent_and_orthogonal():
    space = fem.FESpace(uniform_mesh(-15, 15, 16), 2)
    f = lambda x: np.exp(-0.1 * x**2) * np.cos(x)
    P = fem.l2_project(space, f)
    np.testing.assert_allclose(fem.l2_project(space, P).coefficients, P.coefficients, atol=1e-12)
    # orthogonality through a finer quadrature
    Q = fem.quadrature_operator(space, 8, on=uniform_mesh(-15, 15, 64))
    res = Q.phi.T @ (Q.weights * (f(Q.x) - P(Q.x)))
    assert np.abs(res).max() <= 1e-10


def test_p1_projection_vs_normal_equations():
    space = fem.FESpace(uniform_mesh(-15, 15, 12), 1)
    f = lambda x: np.sin(np.pi * x / 30)
    P = fem.l2_project(space, f).coefficients
    n = space.n_dofs
    G = np.zeros((n, n))
    rhs = np.zeros(n)
    for e in range(12):
        a, b = space.mesh.element(e)
        G += composite(lambda x: np.einsum("pi,pj->pij", *(2 * [fem.basis_matrix(space, x).toarray()])).reshape(len(x), -1), a, b, 1).reshape(n, n)
        rhs += composite(lambda x: f(x)[:, None] * fem.basis_matrix(space, x).toarray(), a, b, 1)
    np.testing.assert_allclose(P, np.linalg.solve(G, rhs), atol=1e-12)


def test_projection_from_finer_function():
    pair = RefinementPair(uniform_mesh(0, 1, 4), uniform_mesh(0, 1, 16))
    fine = fem.interpolate(fem.FESpace(pair.fine, 1), lambda x: np.sin(np.pi * x))
    coarse = fem.FESpace(pair.coarse, 2)
    P = fem.l2_project(coarse, fine)
    Q = fem.quadrature_operator(coarse, 4, on=pair.fine)
    res = Q.phi.T @ (Q.weights * (fine(Q.x) - P(Q.x)))
    assert np.abs(res).max() <= 1e-13


def test_h1_error_properties():
    a = fem.interpolate(fem.FESpace(uniform_mesh(0, 1, 4), 1), np.sin)
    b = fem.interpolate(fem.FESpace(uniform_mesh(0, 1, 8), 2), np.cos)
    assert fem.h1_error(a, a) == 0
    assert fem.h1_error(a, b) == pytest.approx(fem.h1_error(b, a), rel=1e-14)
    with pytest.raises(ValueError):
        fem.h1_error(a, fem.FESpace(uniform_mesh(0, 2, 4), 1).zero())


def test_h1_interpolation_rate():
    f = lambda x: np.cos(np.pi * x / 30)
    errs = []
    for lvl in (5, 6, 7):
        u = fem.interpolate(fem.FESpace(level_mesh(lvl), 1), f)
        v = fem.interpolate(fem.FESpace(level_mesh(lvl + 1), 1), f)
        errs.append(fem.h1_error(u, v))
    for e0, e1 in zip(errs, errs[1:]):
        assert np.log2(e0 / e1) == pytest.approx(1.0, abs=0.1)


def test_prolongation_exact():
    pair = RefinementPair(uniform_mesh(-1, 1, 4), uniform_mesh(-1, 1, 8))
    coarse = fem.FESpace(pair.coarse, 1)
    hat = fem.FEFunction(coarse, np.array([0.0, 1.0, 0.0]))
    fine = fem.prolong(hat, pair)
    np.testing.assert_allclose(fine.coefficients, [0, 0, 0.5, 1, 0.5, 0, 0])
    u = fem.interpolate(coarse, lambda x: 1 - x**2)
    U = fem.prolong(u, pair)
    for err in (fem.h1_error, fem.l2_error):
        assert err(u, U) <= 1e-13
    Mc = fem.assemble_mass(coarse)
    Mf = fem.assemble_mass(fem.FESpace(pair.fine, 1))
    c, C = u.coefficients, U.coefficients
    assert C @ Mf @ C == pytest.approx(c @ Mc @ c, rel=1e-13)
    with pytest.raises(ValueError):
        fem.prolong(fem.FESpace(pair.fine, 1).zero(), pair)


def test_fem_system():
    space = fem.FESpace(uniform_mesh(-3, 3, 8), 2)
    s = fem.FEMSystem(space, fem.get_potential("V1"), 10.0)
    c = _random_fe(space, 3)
    assert s.dim == space.n_dofs
    assert abs(np.imag(np.vdot(c, s.nonlinear(c)))) <= 1e-12 * np.linalg.norm(c) ** 4
    assert s.energy(c) == pytest.approx(fem.energy(space, s.potential, 10.0, c), rel=1e-14)

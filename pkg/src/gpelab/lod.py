"""Localized orthogonal decomposition on a coarse/fine pair of 1D meshes.

The multiscale basis is ``B = P - sum_K Q_K`` where ``P`` prolongates coarse
hats to the fine P1 space and ``Q_K`` are element correctors, each solved on
an ``ell``-layer patch under the constraint that the coarse L2 projection of
the corrector vanishes.  The nonlinear term of the cG-LOD scheme works with
the L2 projection of the density onto the LOD space, which is evaluated
through the precomputed triple-product tensor ``omega``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp

from . import fem
from .mesh import RefinementPair, element_patch
from .numerics import SPD, factorize, saddle_solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LODConfig:
    pair: RefinementPair
    ell: int
    potential: fem.Potential

    def __post_init__(self):
        if self.ell < 0:
            raise ValueError("oversampling parameter must be nonnegative")

    @property
    def n_coarse_dofs(self) -> int:
        return self.pair.coarse.n_elements - 1

    @property
    def max_ell(self) -> int:
        """Smallest ell for which every patch is the whole domain."""
        return self.pair.coarse.n_elements - 1


class FineOperators:
    """Fine-scale P1 matrices shared by all corrector problems."""

    def __init__(self, pair: RefinementPair, potential: fem.Potential):
        self.pair = pair
        self.potential = potential
        self.space = fem.FESpace(pair.fine, 1)
        self.coarse_space = fem.FESpace(pair.coarse, 1)
        self._qs = fem.quadrature_operator(self.space, fem.default_linear_points(self.space))
        self._qv = fem.quadrature_operator(self.space, fem.potential_points(self.space, potential))
        self._vq = potential(self._qv.x)
        self.mass, self.stiffness, self.hmat = _fine_matrices(self.space, potential)

    @cached_property
    def prolongation(self) -> sp.csr_matrix:
        return fem.prolongation_matrix(self.pair)

    @cached_property
    def constraint(self) -> sp.csr_matrix:
        return coarse_constraint_matrix(self.pair, self.mass, self.prolongation)

    def element_load(self, K: int, v: np.ndarray) -> np.ndarray:
        """``(v, lambda_p)_{H,K}``: the H-form restricted to coarse element K."""
        r = self.pair.factor
        ns, nv = len(self._qs.weights) // self.pair.fine.n_elements, len(self._qv.weights) // self.pair.fine.n_elements
        s = slice(r * K * ns, r * (K + 1) * ns)
        t = slice(r * K * nv, r * (K + 1) * nv)
        dphi, ws = self._qs.dphi[s], self._qs.weights[s]
        phi, wv = self._qv.phi[t], self._qv.weights[t]
        return dphi.T @ (ws * (dphi @ v)) + phi.T @ (wv * self._vq[t] * (phi @ v))


@lru_cache(maxsize=4)
def _fine_matrices(space: fem.FESpace, potential: fem.Potential):
    return fem.assemble_mass(space), fem.assemble_stiffness(space), fem.hform(space, potential)


def coarse_constraint_matrix(pair: RefinementPair, fine_mass=None, prolongation=None) -> sp.csr_matrix:
    """Rows ``(phi_i^H, lambda_p^h)``; ``C w = 0`` iff the coarse L2 projection of w vanishes."""
    if fine_mass is None:
        fine_mass = fem.assemble_mass(fem.FESpace(pair.fine, 1))
    if prolongation is None:
        prolongation = fem.prolongation_matrix(pair)
    C = sp.csr_matrix(prolongation.T @ fine_mass)
    C.eliminate_zeros()
    C.sort_indices()
    return C


def _patch_dofs(config: LODConfig, K: int) -> tuple[range, range]:
    """Fine dofs strictly inside the patch of K and coarse dofs constraining them."""
    coarse = config.pair.coarse
    r = config.pair.factor
    patch = element_patch(coarse, K, config.ell)
    lo, hi = patch.start, patch.stop - 1
    fine = range(r * lo, r * (hi + 1) - 1)
    rows = range(max(lo, 1) - 1, min(hi + 1, coarse.n_elements - 1))
    return fine, rows


def _hats_on(config: LODConfig, K: int) -> list[int]:
    return [j for j in (K - 1, K) if 0 <= j < config.n_coarse_dofs]


def element_correctors(config: LODConfig, ops: FineOperators, K: int) -> tuple[range, dict[int, np.ndarray]]:
    """Correctors of all coarse hats touching element K, on the patch of K."""
    fine, rows = _patch_dofs(config, K)
    if len(fine) == 0:
        raise ValueError(f"patch of coarse element {K} has no interior fine nodes")
    sl = slice(fine.start, fine.stop)
    F = factorize(ops.hmat[sl, sl], SPD)
    C = ops.constraint[rows.start:rows.stop, sl]
    out = {}
    for j in _hats_on(config, K):
        hat = ops.prolongation[:, j].toarray().ravel()
        b = ops.element_load(K, hat)[sl]
        out[j], _ = saddle_solve(F, C, b, label=f"patch of coarse element {K}")
    return fine, out


def element_corrector(config: LODConfig, ops: FineOperators, K: int, v: int) -> np.ndarray:
    """Fine coefficients (full length) of the element corrector of hat ``v`` on K."""
    out = np.zeros(ops.space.n_dofs)
    if v not in _hats_on(config, K):
        return out
    fine, q = element_correctors(config, ops, K)
    out[fine.start:fine.stop] = q[v]
    return out


@dataclass
class LODBasis:
    """Fine P1 coefficients of the multiscale basis, one column per coarse dof."""

    config: LODConfig
    B: sp.csc_matrix
    support: np.ndarray  # (N_H, 2) half-open fine dof ranges

    @property
    def n(self) -> int:
        return self.B.shape[1]

    def lift(self, c: np.ndarray) -> fem.FEFunction:
        return fem.FEFunction(fem.FESpace(self.config.pair.fine, 1), self.B @ c)


def assemble_lod_basis(config: LODConfig, ops: FineOperators | None = None, threads: int = 1) -> LODBasis:
    ops = ops or FineOperators(config.pair, config.potential)
    n_c = config.pair.coarse.n_elements
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda K: element_correctors(config, ops, K), range(n_c)))
    else:
        results = [element_correctors(config, ops, K) for K in range(n_c)]

    P = ops.prolongation.tocsc()
    rows, cols, vals = [], [], []
    N = config.n_coarse_dofs
    support = np.zeros((N, 2), dtype=np.int64)
    support[:, 0] = ops.space.n_dofs
    for j in range(N):
        seg = slice(P.indptr[j], P.indptr[j + 1])
        rows.append(P.indices[seg])
        cols.append(np.full(seg.stop - seg.start, j))
        vals.append(P.data[seg])
        support[j] = P.indices[seg].min(), P.indices[seg].max() + 1
    for K, (fine, q) in enumerate(results):
        for j, x in q.items():
            rows.append(np.arange(fine.start, fine.stop))
            cols.append(np.full(len(fine), j))
            vals.append(-x)
            support[j, 0] = min(support[j, 0], fine.start)
            support[j, 1] = max(support[j, 1], fine.stop)
    B = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ops.space.n_dofs, N),
    )
    B.sum_duplicates()
    B.sort_indices()
    return LODBasis(config, B, support)


def lod_matrices(basis: LODBasis, M_h, A_h) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    B = basis.B.tocsr()

    def galerkin(X):
        G = sp.csr_matrix(B.T @ (X @ B))
        G = sp.csr_matrix(0.5 * (G + G.T))
        G.sort_indices()
        return G

    return galerkin(M_h), galerkin(A_h)


class OmegaTensor:
    """Sparse symmetric tensor ``omega_ijk = int phi_i phi_j phi_k``.

    Unique entries are stored for ``i <= j <= k``.  For contractions all
    distinct index permutations are expanded once into a sparse matrix ``W``
    of shape ``(n, n_pairs)`` with ``W[k, (i, j)] = omega_ijk``.
    """

    def __init__(self, n: int, index: np.ndarray, values: np.ndarray):
        self.n = n
        self.index = index  # (nnz, 3), rows sorted, i <= j <= k
        self.values = values
        self._build_operator()

    def _build_operator(self):
        I, J, K = self.index.T
        perms = [(I, J, K), (I, K, J), (J, I, K), (J, K, I), (K, I, J), (K, J, I)]
        n = np.int64(self.n)
        keys = np.concatenate([(a * n + b) * n + c for a, b, c in perms])
        vals = np.tile(self.values, 6)
        keys, first = np.unique(keys, return_index=True)
        vals = vals[first]
        a, rem = np.divmod(keys, n * n)
        b, c = np.divmod(rem, n)
        pair_key = a * n + b
        pairs, pair_idx = np.unique(pair_key, return_inverse=True)
        self.pair_i, self.pair_j = np.divmod(pairs, n)
        self.W = sp.csr_matrix((vals, (c, pair_idx)), shape=(self.n, len(pairs)))
        self.W.sort_indices()

    @property
    def nnz(self) -> int:
        return len(self.values)

    def entry(self, i: int, j: int, k: int) -> float:
        key = tuple(sorted((i, j, k)))
        pos = np.flatnonzero((self.index == key).all(axis=1))
        return float(self.values[pos[0]]) if pos.size else 0.0

    def contract(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """``y_k = sum_ij a_i b_j omega_ijk``."""
        p = a[self.pair_i] * b[self.pair_j]
        if np.iscomplexobj(p):
            return self.W @ p.real + 1j * (self.W @ p.imag)
        return self.W @ p

    def dense(self) -> np.ndarray:
        T = np.zeros((self.n,) * 3)
        for (i, j, k), v in zip(self.index, self.values):
            for a, b, c in {(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)}:
                T[a, b, c] = v
        return T


def omega_tensor(basis: LODBasis, chunk: int = 64) -> OmegaTensor:
    """Assemble omega from the basis with the 2-point Gauss rule per fine element."""
    B = basis.B.tocsr()
    if np.iscomplexobj(B.data):
        raise ValueError("omega tensor requires a real LOD basis")
    pair = basis.config.pair
    fine_space = fem.FESpace(pair.fine, 1)
    Q = fem.quadrature_operator(fine_space, 2)
    r = pair.factor
    n = np.int64(basis.n)
    Bc = basis.B.tocsc()
    keys_acc, vals_acc = [], []
    pending_k, pending_v = [], []

    def flush():
        if pending_k:
            keys_acc.append(np.concatenate(pending_k))
            vals_acc.append(np.concatenate(pending_v))
            pending_k.clear()
            pending_v.clear()
            k, inv = np.unique(np.concatenate(keys_acc), return_inverse=True)
            v = np.bincount(inv, weights=np.concatenate(vals_acc))
            keys_acc[:] = [k]
            vals_acc[:] = [v]

    for K in range(pair.coarse.n_elements):
        # fine dofs touching coarse element K: nodes r*K .. r*(K+1)
        lo, hi = max(r * K - 1, 0), min(r * (K + 1), fine_space.n_dofs)
        cols = np.unique(B[lo:hi].indices)
        if cols.size == 0:
            continue
        s = slice(2 * r * K, 2 * r * (K + 1))
        vals = (Q.phi[s] @ Bc[:, cols]).toarray()
        w = Q.weights[s]
        T = np.einsum("q,qa,qb,qc->abc", w, vals, vals, vals, optimize=True)
        a, b, c = np.nonzero(_upper_mask(len(cols)))
        gi, gj, gk = cols[a], cols[b], cols[c]
        pending_k.append((gi * n + gj) * n + gk)
        pending_v.append(T[a, b, c])
        if len(pending_k) >= chunk:
            flush()
    flush()
    keys, vals = keys_acc[0], vals_acc[0]
    i, rem = np.divmod(keys, n * n)
    j, k = np.divmod(rem, n)
    return OmegaTensor(basis.n, np.stack([i, j, k], axis=1), vals)


_MASKS: dict[int, np.ndarray] = {}


def _upper_mask(m: int) -> np.ndarray:
    if m not in _MASKS:
        a, b, c = np.ogrid[:m, :m, :m]
        _MASKS[m] = (a <= b) & (b <= c)
    return _MASKS[m]


class LODSystem:
    """Reduced cG-LOD spatial system: mass, H-form, omega and density projection."""

    def __init__(self, basis: LODBasis, ops: FineOperators, beta: float, omega: OmegaTensor | None = None):
        self.basis = basis
        self.ops = ops
        self.beta = float(beta)
        self.mass, self.hmat = lod_matrices(basis, ops.mass, ops.hmat)
        self.mass_factor = factorize(self.mass, SPD)
        self.omega = omega if omega is not None else omega_tensor(basis)
        B = basis.B.tocsr()
        self.h1_gram = sp.csr_matrix(B.T @ ((ops.stiffness + ops.mass) @ B))

    @property
    def dim(self) -> int:
        return self.basis.n

    def project_density(self, u: np.ndarray, check: bool = True) -> np.ndarray:
        return project_density(self, u, check=check)

    def nonlinear(self, u: np.ndarray) -> np.ndarray:
        return lod_nonlinear(self, u, self.beta)

    def energy(self, u: np.ndarray) -> float:
        return modified_energy(self, u, self.beta)

    def initial_value(self, u0: fem.FEFunction) -> np.ndarray:
        """L2 projection of a fine P1 function onto the LOD space."""
        if u0.space.mesh != self.ops.pair.fine or u0.space.order != 1:
            u0 = fem.l2_project(self.ops.space, u0)
        load = self.basis.B.T @ (self.ops.mass @ u0.coefficients)
        return self.mass_factor.solve(load)

    def lift(self, c: np.ndarray) -> fem.FEFunction:
        return self.basis.lift(c)


def project_density(system: LODSystem, u: np.ndarray, check: bool = True) -> np.ndarray:
    """Coefficients of the L2 projection of ``|B u|^2`` onto the LOD space."""
    om = system.omega
    p = np.conj(u[om.pair_i]) * u[om.pair_j]
    r = om.W @ p.real
    if check and np.iscomplexobj(p):
        ri = om.W @ p.imag
        scale = max(np.abs(r).max(initial=0.0), np.finfo(float).tiny)
        if np.abs(ri).max(initial=0.0) > 1e-8 * scale:
            raise ValueError(
                f"density load has imaginary part {np.abs(ri).max():.3e}; omega tensor is not symmetric"
            )
    return system.mass_factor.solve(r)


def lod_nonlinear(system: LODSystem, u: np.ndarray, beta: float, rho: np.ndarray | None = None) -> np.ndarray:
    if beta == 0:
        return np.zeros_like(u)
    if rho is None:
        rho = project_density(system, u, check=False)
    return beta * system.omega.contract(rho, u)


def modified_energy(system: LODSystem, u: np.ndarray, beta: float) -> float:
    quadratic = 0.5 * np.real(np.vdot(u, system.hmat @ u))
    if beta == 0:
        return float(quadratic)
    om = system.omega
    p = np.conj(u[om.pair_i]) * u[om.pair_j]
    r = om.W @ p.real
    rho = system.mass_factor.solve(r)
    return float(quadratic + 0.25 * beta * np.dot(rho, r))


def ritz_error_study(
    levels: list[int],
    fine_level: int,
    potential: fem.Potential | str,
    load,
    ell_rule=lambda i: i + 5,
    a: float = -15.0,
    b: float = 15.0,
) -> list[dict]:
    """H1 error of the LOD Ritz projection of the fine solution of ``H v = f``."""
    from .mesh import level_mesh

    if isinstance(potential, str):
        potential = fem.get_potential(potential)
    fine = level_mesh(fine_level, a, b)
    rows = []
    for i in levels:
        pair = RefinementPair(level_mesh(i, a, b), fine)
        ops = FineOperators(pair, potential)
        F = fem.l2_project(ops.space, load) if callable(load) else load
        rhs = ops.mass @ F.coefficients
        v = factorize(ops.hmat, SPD).solve(rhs)
        config = LODConfig(pair, min(ell_rule(i), pair.coarse.n_elements - 1), potential)
        basis = assemble_lod_basis(config, ops)
        _, A_lod = lod_matrices(basis, ops.mass, ops.hmat)
        c = factorize(A_lod, SPD).solve(basis.B.T @ rhs)
        e = v - basis.B @ c
        err = float(np.sqrt(e @ ((ops.stiffness + ops.mass) @ e)))
        rows.append({"i": i, "H": pair.coarse.h, "ell": config.ell, "h1_error": err})
    for prev, row in zip(rows, rows[1:]):
        row["eoc"] = float(np.log2(prev["h1_error"] / row["h1_error"]))
    return rows


def save_basis(path, basis: LODBasis, **meta) -> None:
    from . import io

    c = basis.config
    io.write_basis(path, basis.B, ell=c.ell, potential=c.potential.name,
                   coarse_elements=c.pair.coarse.n_elements, fine_elements=c.pair.fine.n_elements, **meta)


def load_basis(path, config: LODConfig) -> LODBasis:
    from . import io

    B, h = io.read_basis(path)
    expected = (config.ell, config.potential.name, config.pair.coarse.n_elements, config.pair.fine.n_elements)
    found = (h["ell"], h["potential"], h["coarse_elements"], h["fine_elements"])
    if expected != found:
        raise ValueError(f"basis cache {path} was built for {found}, not {expected}")
    Bc = B.tocsc()
    support = np.zeros((Bc.shape[1], 2), dtype=np.int64)
    for j in range(Bc.shape[1]):
        idx = Bc.indices[Bc.indptr[j]:Bc.indptr[j + 1]]
        support[j] = idx.min(), idx.max() + 1
    return LODBasis(config, Bc, support)

"""Ground state of the Gross-Pitaevskii energy by Sobolev gradient descent."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .numerics import SPD, factorize

log = logging.getLogger(__name__)


class GroundStateError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class EnergyIncreaseError(GroundStateError):
    pass


@dataclass
class GroundStateConfig:
    space: fem.FESpace
    potential: fem.Potential
    beta: float = 0.0
    tol: float = 1e-9
    max_iter: int = 2000
    sigma: float = 1.0
    metric: str = "adaptive"  # or "h1"
    initial: np.ndarray | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.sigma <= 1:
            raise ValueError("step damping must lie in (0, 1]")
        if self.metric not in ("adaptive", "h1"):
            raise ValueError(f"unknown metric {self.metric!r}")


@dataclass
class GroundState:
    u: fem.FEFunction
    energy: float
    eigenvalue: float
    iterations: int
    residual: float
    energies: list[float] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)


def gpe_energy_gs(space: fem.FESpace, u, beta: float, potential: fem.Potential | None = None) -> float:
    return fem.energy(space, potential or fem.get_potential("Vgs"), beta, u)


def default_initial(space: fem.FESpace) -> np.ndarray:
    return np.exp(-0.5 * space.dof_coordinates**2)


def _density_matrix(space: fem.FESpace, u: np.ndarray) -> sp.csr_matrix:
    Q = fem.quadrature_operator(space, fem.default_nonlinear_points(space))
    uq = Q.phi @ u
    return Q.phi.T @ sp.diags(Q.weights * np.abs(uq) ** 2) @ Q.phi


def sobolev_gradient_descent(config: GroundStateConfig) -> GroundState:
    """Energy-adaptive Sobolev gradient flow with unit-mass normalization.

    With ``A_u = S + M_V + beta M_{|u|^2}`` and ``lam = u^T A_u u``, the
    gradient ``g`` solves ``G g = A_u u - lam M u`` where ``G = A_u`` (or the
    plain H1 Gram matrix), and the update is ``u <- normalize(u - sigma g)``.
    """
    space, beta = config.space, config.beta
    M = fem.assemble_mass(space)
    S = fem.assemble_stiffness(space)
    A0 = fem.hform(space, config.potential)
    H1 = sp.csr_matrix(S + M)
    H1_factor = factorize(H1, SPD) if config.metric == "h1" else None

    def normalize(v):
        return v / np.sqrt(v @ (M @ v))

    guess = np.real(np.asarray(config.initial if config.initial is not None else default_initial(space), dtype=complex))
    u = normalize(guess.astype(float))

    def energy(v):
        return fem.energy(space, config.potential, beta, v, hmat=A0)

    absA = abs(A0)

    def noise(v):
        # rounding level of the energy evaluation (quadratic form cancellation)
        return 64 * np.finfo(float).eps * float(np.abs(v) @ (absA @ np.abs(v)))

    E = energy(u)
    energies, residuals = [E], []
    lam, res = np.nan, np.inf
    it = stagnant = 0
    while True:
        A_u = sp.csr_matrix(A0 + beta * _density_matrix(space, u)) if beta else A0
        A_u = sp.csr_matrix(0.5 * (A_u + A_u.T))
        Mu = M @ u
        lam = float(u @ (A_u @ u))
        r = A_u @ u - lam * Mu
        G = factorize(A_u, SPD) if H1_factor is None else H1_factor
        g = G.solve(r)
        res = float(np.sqrt(g @ (H1 @ g)))
        residuals.append(res)
        if res <= config.tol:
            break
        if it >= config.max_iter:
            raise GroundStateError(f"no convergence after {it} iterations (residual {res:.3e})", res)
        u_new = normalize(u - config.sigma * g)
        E_new = energy(u_new)
        it += 1
        if E_new > E + noise(u_new):
            raise EnergyIncreaseError(
                f"energy increased in iteration {it} ({E:.15g} -> {E_new:.15g}); reduce sigma", res
            )
        # stagnation: neither energy nor residual improves any more
        no_gain = E - E_new < max(1e-14 * abs(E), noise(u_new)) and len(residuals) > 1 and res >= min(residuals[:-1])
        stagnant = stagnant + 1 if no_gain else 0
        u, E = u_new, E_new
        energies.append(E)
        if stagnant >= 10:
            break
    if u @ (M @ guess) < 0:
        u = -u
    return GroundState(fem.FEFunction(space, u.astype(complex)), E, lam, it, res, energies, residuals)


def ground_state(config: GroundStateConfig, max_halvings: int = 8) -> GroundState:
    """:func:`sobolev_gradient_descent` with step halving on energy increase."""
    for _ in range(max_halvings + 1):
        try:
            return sobolev_gradient_descent(config)
        except EnergyIncreaseError as exc:
            log.warning("%s; retrying with sigma = %g", exc, config.sigma / 2)
            config = GroundStateConfig(**{**config.__dict__, "sigma": config.sigma / 2})
    raise GroundStateError("energy kept increasing after repeated step halving", np.inf)

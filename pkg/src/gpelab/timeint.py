"""Continuous Galerkin cG(q) time stepping for ``i M u' = A u + N(u)``.

On each interval the trial function is the degree-q polynomial through the
values at the left endpoint and the q Gauss points; the test space consists
of polynomials of degree q-1.  Linear terms are integrated exactly by the
q-point Gauss rule, so the linear stage system is the same for every step
and is factorized once.  The nonlinear stage loads are resolved by a
fixed-point iteration.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
import scipy.sparse as sp

from .fem import gauss_rule
from .numerics import LU, Factorization, factorize

log = logging.getLogger(__name__)


class SpatialSystem(Protocol):
    dim: int
    beta: float
    mass: sp.spmatrix
    hmat: sp.spmatrix
    h1_gram: sp.spmatrix

    def nonlinear(self, u: np.ndarray) -> np.ndarray: ...

    def energy(self, u: np.ndarray) -> float: ...


class MatrixSystem:
    """Spatial system given directly by matrices and a nonlinearity."""

    def __init__(self, mass, hmat, beta: float = 0.0, nonlinear=None, energy=None, h1_gram=None):
        self.mass = sp.csr_matrix(np.atleast_2d(mass)) if not sp.issparse(mass) else sp.csr_matrix(mass)
        self.hmat = sp.csr_matrix(np.atleast_2d(hmat)) if not sp.issparse(hmat) else sp.csr_matrix(hmat)
        self.beta = float(beta)
        self.dim = self.mass.shape[0]
        self._nonlinear = nonlinear
        self._energy = energy
        self.h1_gram = self.mass + self.hmat if h1_gram is None else h1_gram

    def nonlinear(self, u):
        if self._nonlinear is None or self.beta == 0:
            return np.zeros_like(u)
        return self.beta * self._nonlinear(u)

    def energy(self, u):
        if self._energy is not None:
            return float(self._energy(u))
        return float(0.5 * np.real(np.vdot(u, self.hmat @ u)))


@dataclass
class CGConfig:
    q: int = 2
    tau: float = 2e-3
    fp_tol: float = 1e-10
    max_fp_iters: int = 200
    nl_time_points: int | None = None

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("polynomial degree in time must be >= 1")
        if not self.tau > 0:
            raise ValueError("step size must be positive")
        if not self.fp_tol > 0:
            raise ValueError("fixed-point tolerance must be positive")

    @property
    def time_points(self) -> int:
        return self.nl_time_points or self.q


class FixedPointError(RuntimeError):
    def __init__(self, step: int, residual: float, iterations: int):
        super().__init__(
            f"fixed-point iteration did not converge in step {step} after {iterations} iterations "
            f"(last residual {residual:.3e})"
        )
        self.step = step
        self.residual = residual


class IntegrationError(RuntimeError):
    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


def _lagrange(nodes: np.ndarray, x: np.ndarray, deriv: bool = False) -> np.ndarray:
    """``L[p, m]`` = m-th Lagrange polynomial through ``nodes`` (or its derivative) at ``x[p]``."""
    n = len(nodes)
    C = np.linalg.inv(np.vander(nodes, n, increasing=True))
    P = np.vander(np.atleast_1d(x), n, increasing=True)
    if deriv:
        dP = np.zeros_like(P)
        dP[:, 1:] = P[:, :-1] * np.arange(1, n)
        P = dP
    return P @ C


@dataclass
class StageOperator:
    q: int
    tau: float
    nodes: np.ndarray  # 0 followed by the q Gauss points
    deriv: np.ndarray  # (q, q+1): d/ds of trial basis at the Gauss points
    end: np.ndarray  # (q+1,): trial basis at s = 1
    interp: np.ndarray  # (p, q+1): trial basis at nonlinear quadrature points
    load: np.ndarray  # (q, p): nonlinear quadrature weights per test function
    factor: Factorization
    collocation: bool

    def residual(self, system: SpatialSystem, u_n: np.ndarray, stages: np.ndarray) -> np.ndarray:
        """Residual of the linear stage equations (nonlinear term omitted)."""
        M, A = system.mass, system.hmat
        out = np.empty_like(stages, dtype=complex)
        for l in range(self.q):
            du = self.deriv[l, 0] * u_n + self.deriv[l, 1:] @ stages
            out[l] = 1j * (M @ du) - self.tau * (A @ stages[l])
        return out


def build_stage_operator(system: SpatialSystem, config: CGConfig) -> StageOperator:
    q, tau = config.q, config.tau
    g = gauss_rule(q)
    nodes = np.concatenate([[0.0], g.points])
    deriv = _lagrange(nodes, g.points, deriv=True)
    end = _lagrange(nodes, np.array([1.0]))[0]
    p = config.time_points
    collocation = p == q
    if collocation:
        interp = _lagrange(nodes, g.points)
        load = np.eye(q)
    else:
        gp = gauss_rule(p)
        interp = _lagrange(nodes, gp.points)
        test = _lagrange(g.points, gp.points)  # degree q-1 test basis
        load = (gp.weights[:, None] * test).T / g.weights[:, None]
    K = sp.kron(sp.csr_matrix(1j * deriv[:, 1:]), system.mass) - tau * sp.kron(sp.identity(q), system.hmat)
    factor = factorize(sp.csr_matrix(K, dtype=complex), LU)
    return StageOperator(q, tau, nodes, deriv, end, interp, load, factor, collocation)


@dataclass
class StepResult:
    u: np.ndarray
    iterations: int
    stages: np.ndarray
    residual: float


def step(op: StageOperator, system: SpatialSystem, config: CGConfig, u_n: np.ndarray, index: int = 0) -> StepResult:
    q, dim = op.q, system.dim
    M = system.mass
    u_n = np.asarray(u_n, dtype=complex)
    base = (-1j * op.deriv[:, :1]) * (M @ u_n)[None, :]
    stages = np.tile(u_n, (q, 1))
    linear = system.beta == 0
    res = np.inf
    for it in range(1, config.max_fp_iters + 1):
        rhs = base
        if not linear:
            if op.collocation:
                N = np.stack([system.nonlinear(stages[l]) for l in range(q)])
            else:
                values = op.interp[:, :1] * u_n[None, :] + op.interp[:, 1:] @ stages
                N = op.load @ np.stack([system.nonlinear(v) for v in values])
            rhs = base + op.tau * N
        new = op.factor.solve(rhs.ravel()).reshape(q, dim)
        diff = new - stages
        res = float(np.sqrt(max(np.real(np.sum(np.conj(diff) * (M @ diff.T).T)), 0.0)))
        stages = new
        if linear or res <= config.fp_tol:
            break
    else:
        raise FixedPointError(index, res, config.max_fp_iters)
    u_next = op.end[0] * u_n + op.end[1:] @ stages
    return StepResult(u_next, it, stages, res)


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    masses: list[float] = field(default_factory=list)
    fp_iters: list[int] = field(default_factory=list)
    step_seconds: list[float] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)
    final: np.ndarray | None = None

    @property
    def online_seconds(self) -> float:
        return float(sum(self.step_seconds))

    @property
    def mean_step_seconds(self) -> float:
        """Mean step time with the first (warm-up) step excluded."""
        s = self.step_seconds[1:] or self.step_seconds
        return float(np.mean(s)) if s else 0.0

    @property
    def energy_drift(self) -> float:
        e = np.asarray(self.energies)
        if e.size == 0 or e[0] == 0:
            return float(np.max(np.abs(e - e[0]))) if e.size else 0.0
        return float(np.max(np.abs(e - e[0])) / abs(e[0]))

    @property
    def mass_drift(self) -> float:
        m = np.asarray(self.masses)
        return float(np.max(np.abs(m - m[0])) / abs(m[0])) if m.size and m[0] else 0.0

    @property
    def mean_fp_iters(self) -> float:
        return float(np.mean(self.fp_iters)) if self.fp_iters else 0.0


def integrate(
    system: SpatialSystem,
    u0: np.ndarray,
    T: float,
    config: CGConfig,
    observers: Sequence[Callable[[int, float, np.ndarray], None]] = (),
    store: str | int = "final",
    op: StageOperator | None = None,
) -> Trajectory:
    """Run ``round(T / tau)`` steps from ``u0``.

    ``store`` is ``"final"``, ``"all"`` or a snapshot cadence in steps.
    Only the stepping loop is timed.
    """
    n_steps = int(round(T / config.tau))
    op = op or build_stage_operator(system, config)
    u = np.asarray(u0, dtype=complex).copy()
    traj = Trajectory()
    every = 1 if store == "all" else (store if isinstance(store, int) else 0)

    def record(n, u):
        traj.times.append(n * config.tau)
        traj.energies.append(system.energy(u))
        traj.masses.append(float(np.real(np.vdot(u, system.mass @ u))))
        if every and n % every == 0:
            traj.snapshots.append(u.copy())
        for obs in observers:
            obs(n, n * config.tau, u)

    record(0, u)
    for n in range(n_steps):
        t0 = time.perf_counter()
        try:
            res = step(op, system, config, u, index=n)
        except FixedPointError as exc:
            traj.final = u
            raise IntegrationError(str(exc), traj) from exc
        traj.step_seconds.append(time.perf_counter() - t0)
        u = res.u
        if not np.all(np.isfinite(u)):
            traj.final = u
            raise IntegrationError(f"non-finite state after step {n}", traj)
        traj.fp_iters.append(res.iterations)
        record(n + 1, u)
    traj.final = u
    return traj


def h1_norm(system: SpatialSystem, u: np.ndarray) -> float:
    return float(np.sqrt(max(np.real(np.vdot(u, system.h1_gram @ u)), 0.0)))


def time_order_study(
    system: SpatialSystem,
    u0: np.ndarray,
    T: float,
    config: CGConfig,
    taus: Sequence[float],
    tau_ref: float | None = None,
    reference: np.ndarray | None = None,
) -> list[dict]:
    """H1 errors at T for each step size against a small-step reference run."""
    if reference is None:
        tau_ref = tau_ref or min(taus) / 4
        if tau_ref > min(taus) / 4 * (1 + 1e-12):
            raise ValueError("reference step must be at most a quarter of the smallest step")
        ref_cfg = CGConfig(config.q, tau_ref, config.fp_tol, config.max_fp_iters, config.nl_time_points)
        reference = integrate(system, u0, T, ref_cfg).final
    rows = []
    for tau in taus:
        cfg = CGConfig(config.q, tau, config.fp_tol, config.max_fp_iters, config.nl_time_points)
        u = integrate(system, u0, T, cfg).final
        rows.append({"tau": tau, "h1_error": h1_norm(system, u - reference)})
    for prev, row in zip(rows, rows[1:]):
        row["eoc"] = float(np.log(prev["h1_error"] / row["h1_error"]) / np.log(prev["tau"] / row["tau"]))
    return rows

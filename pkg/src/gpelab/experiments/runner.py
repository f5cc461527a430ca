"""Experiment driver: ground state, fine reference, method runs and studies."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from .. import __version__, fem, io, lod
from ..groundstate import GroundStateConfig, ground_state
from ..mesh import RefinementPair, uniform_mesh
from ..timeint import CGConfig, build_stage_operator, h1_norm, integrate, time_order_study
from .config import ExperimentConfig

log = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "method", "i", "H", "dofs", "h1_error", "l2_error", "eoc_h1",
    "online_seconds", "offline_seconds", "energy_drift", "mean_fp_iters",
)
METHOD_ORDER = {"lod": 0, "p1": 1, "p2": 2, "p3": 3}


def _key(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()[:12]


def fit_rate(H, err) -> float:
    """Least-squares slope of log(err) against log(H)."""
    H, err = np.asarray(H, float), np.asarray(err, float)
    return float(np.polyfit(np.log(H), np.log(err), 1)[0])


@dataclass
class MethodSetup:
    system: object
    u0: np.ndarray
    offline_seconds: float
    op: object


class Lab:
    """Shared state of one experiment: output directory and cached solutions."""

    def __init__(self, cfg: ExperimentConfig, out: str | Path | None = None, threads: int = 1):
        self.cfg = cfg
        self.out = Path(out or cfg.outputs.dir)
        if not self.out.is_dir():
            raise FileNotFoundError(f"output directory {self.out} does not exist")
        self.cache = self.out / "cache"
        self.cache.mkdir(exist_ok=True)
        self.threads = threads
        self._memo: dict = {}

    # ------------------------------------------------------------ meshes

    def mesh(self, level: int):
        p = self.cfg.problem
        return uniform_mesh(p.a, p.b, 2**level)

    @property
    def fine_mesh(self):
        return self.mesh(self.cfg.discretization.fine_level)

    def potential(self, name: str | None = None) -> fem.Potential:
        return fem.get_potential(name or self.cfg.problem.potential)

    def cg_config(self, **over) -> CGConfig:
        t = self.cfg.time
        kw = dict(q=t.q, tau=t.tau, fp_tol=t.fp_tol, max_fp_iters=t.max_fp_iters, nl_time_points=t.nl_time_points)
        kw.update(over)
        return CGConfig(**kw)

    # ------------------------------------------------------------ ground state

    def groundstate_path(self) -> Path:
        c, p = self.cfg.initial, self.cfg.problem
        if c.snapshot:
            return Path(c.snapshot)
        k = _key("gs", p.a, p.b, p.beta, c.potential, c.tol, c.sigma, c.metric, self.cfg.discretization.fine_level)
        return self.out / f"groundstate_{k}.snap"

    def ground_state(self) -> fem.FEFunction:
        path = self.groundstate_path()
        if "gs" not in self._memo:
            if not path.exists():
                self.compute_ground_state(path)
            self._memo["gs"] = io.read_snapshot(path).u
        return self._memo["gs"]

    def compute_ground_state(self, path: Path) -> dict:
        c, p = self.cfg.initial, self.cfg.problem
        space = fem.FESpace(self.fine_mesh, 1)
        res = ground_state(GroundStateConfig(
            space, fem.get_potential(c.potential), p.beta, tol=c.tol, max_iter=c.max_iter,
            sigma=c.sigma, metric=c.metric,
        ))
        meta = {
            "kind": "groundstate", "level": self.cfg.discretization.fine_level, "potential": c.potential,
            "beta": p.beta, "energy": res.energy, "eigenvalue": res.eigenvalue,
            "iterations": res.iterations, "residual": res.residual, "time": 0.0,
        }
        io.write_snapshot(path, res.u, **meta)
        log.info("ground state: E = %.12g after %d iterations", res.energy, res.iterations)
        return meta

    # ------------------------------------------------------------ methods

    def setup(self, method: str, level: int, potential: str | None = None, ell: int | None = None,
              cg: CGConfig | None = None) -> MethodSetup:
        V = self.potential(potential)
        cg = cg or self.cg_config()
        u0 = self.ground_state()
        t0 = time.perf_counter()
        if method == "lod":
            pair = RefinementPair(self.mesh(level), self.fine_mesh)
            ell = self.cfg.discretization.ell_for(level) if ell is None else min(ell, 2**level - 1)
            config = lod.LODConfig(pair, ell, V)
            ops = lod.FineOperators(pair, V)
            basis = self.lod_basis(config, ops)
            system = lod.LODSystem(basis, ops, self.cfg.problem.beta)
        else:
            system = fem.FEMSystem(fem.FESpace(self.mesh(level), int(method[1])), V, self.cfg.problem.beta)
        c0 = system.initial_value(u0)
        op = build_stage_operator(system, cg)
        return MethodSetup(system, c0, time.perf_counter() - t0, op)

    def lod_basis(self, config: lod.LODConfig, ops: lod.FineOperators) -> lod.LODBasis:
        d = self.cfg.discretization
        levels = (int(round(math.log2(config.pair.coarse.n_elements))), d.fine_level)
        path = self.cache / f"lodbasis_{config.potential.name}_c{levels[0]}_f{levels[1]}_l{config.ell}_{_key(self.cfg.problem.a, self.cfg.problem.b)}.bin"
        if path.exists():
            return lod.load_basis(path, config)
        basis = lod.assemble_lod_basis(config, ops, threads=self.threads)
        lod.save_basis(path, basis, coarse_level=levels[0], fine_level=levels[1])
        return basis

    def run(self, method: str, level: int, reference: fem.FEFunction | None = None, potential: str | None = None,
            ell: int | None = None, cg: CGConfig | None = None) -> dict:
        wall0 = time.perf_counter()
        cg = cg or self.cg_config()
        s = self.setup(method, level, potential, ell, cg)
        traj = integrate(s.system, s.u0, self.cfg.problem.T, cg, op=s.op)
        u = s.system.lift(traj.final)
        row = {
            "method": method, "i": level, "H": (self.cfg.problem.b - self.cfg.problem.a) / 2**level,
            "dofs": s.system.dim, "h1_error": None, "l2_error": None, "eoc_h1": None,
            "online_seconds": traj.online_seconds, "offline_seconds": s.offline_seconds,
            "energy_drift": traj.energy_drift, "mean_fp_iters": traj.mean_fp_iters,
        }
        if reference is not None:
            if (reference.space.mesh.a, reference.space.mesh.b) != (u.space.mesh.a, u.space.mesh.b):
                raise ValueError("reference lives on a different interval")
            if reference.space.mesh.n_elements % u.space.mesh.n_elements:
                raise ValueError("reference mesh does not refine the run's mesh")
            row["h1_error"] = fem.h1_error(reference, u)
            row["l2_error"] = fem.l2_error(reference, u)
        row["_final"] = u
        row["_wall_seconds"] = time.perf_counter() - wall0
        return row

    # ------------------------------------------------------------ reference

    def reference_path(self, potential: str | None = None) -> Path:
        p, t, d = self.cfg.problem, self.cfg.time, self.cfg.discretization
        k = _key("ref", p.a, p.b, p.beta, p.T, potential or p.potential, d.fine_level, t.q, t.tau, t.fp_tol,
                 t.nl_time_points, str(self.groundstate_path()))
        return self.out / f"reference_{potential or p.potential}_{k}.snap"

    def reference(self, potential: str | None = None) -> fem.FEFunction:
        name = potential or self.cfg.problem.potential
        key = ("ref", name)
        if key not in self._memo:
            path = self.reference_path(name)
            if not path.exists():
                self.compute_reference(path, name)
            self._memo[key] = io.read_snapshot(path).u
        return self._memo[key]

    def compute_reference(self, path: Path, potential: str | None = None) -> dict:
        name = potential or self.cfg.problem.potential
        row = self.run("p1", self.cfg.discretization.fine_level, potential=name)
        meta = {
            "kind": "reference", "potential": name, "level": self.cfg.discretization.fine_level,
            "tau": self.cfg.time.tau, "q": self.cfg.time.q, "time": self.cfg.problem.T,
            "beta": self.cfg.problem.beta, "energy_drift": row["energy_drift"],
            "mean_fp_iters": row["mean_fp_iters"], "online_seconds": row["online_seconds"],
        }
        io.write_snapshot(path, row["_final"], **meta)
        return meta


# ---------------------------------------------------------------- reports


def add_eoc(rows: list[dict]) -> list[dict]:
    rows.sort(key=lambda r: (METHOD_ORDER.get(r["method"], 9), r["i"]))
    for prev, row in zip(rows, rows[1:]):
        if prev["method"] == row["method"] and row["i"] == prev["i"] + 1 and prev["h1_error"] and row["h1_error"]:
            row["eoc_h1"] = math.log2(prev["h1_error"] / row["h1_error"])
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.16g" % v
    return str(v)


def write_csv(path, rows: list[dict], columns=REPORT_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_manifest(path, cfg: ExperimentConfig, inputs: dict[str, Path], extra: dict | None = None) -> None:
    manifest = {
        "config": cfg.to_dict(),
        "inputs": {k: io.file_digest(p) for k, p in inputs.items() if Path(p).exists()},
        "versions": {"gpelab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    manifest.update(extra or {})
    Path(path).write_text(json.dumps(manifest, indent=2, default=str))


# ---------------------------------------------------------------- commands


def cmd_groundstate(cfg: ExperimentConfig, out=None) -> Path:
    lab = Lab(cfg, out)
    path = lab.groundstate_path()
    lab.compute_ground_state(path)
    return path


def cmd_reference(cfg: ExperimentConfig, out=None) -> Path:
    lab = Lab(cfg, out)
    path = lab.reference_path()
    lab.compute_reference(path)
    return path


def cmd_run(cfg: ExperimentConfig, out=None, threads: int = 1, lab: Lab | None = None) -> dict:
    lab = lab or Lab(cfg, out, threads)
    d = cfg.discretization
    row = lab.run(d.method, d.level, lab.reference())
    path = lab.out / f"run_{d.method}_{d.level}_{cfg.problem.potential}.csv"
    write_csv(path, [row])
    return row


def cmd_study(cfg: ExperimentConfig, out=None, levels=None, methods=None, threads: int = 1,
              lab: Lab | None = None) -> list[dict]:
    """Sweep methods x levels; failed runs are kept as rows with empty errors."""
    lab = lab or Lab(cfg, out, threads)
    ref = lab.reference()
    rows = []
    for method in methods or cfg.study.methods:
        for level in levels or cfg.study.levels:
            try:
                row = lab.run(method, level, ref)
            except Exception as exc:  # noqa: BLE001 - record and continue
                log.error("run %s level %d failed: %s", method, level, exc)
                row = {"method": method, "i": level, "H": (cfg.problem.b - cfg.problem.a) / 2**level,
                       "error": str(exc)}
            rows.append(row)
    add_eoc(rows)
    name = f"study_{cfg.problem.potential}"
    write_csv(lab.out / f"{name}.csv", rows)
    write_manifest(lab.out / f"{name}.manifest.json", cfg,
                   {"groundstate": lab.groundstate_path(), "reference": lab.reference_path()},
                   {"failed": [r for r in rows if "error" in r],
                    "wall_seconds": {f"{r['method']}:{r['i']}": r.get("_wall_seconds") for r in rows}})
    return rows


def basis_gap(a: lod.LODBasis, b: lod.LODBasis, gram) -> float:
    """Largest relative H1 distance between corresponding basis columns."""
    D = (a.B - b.B).tocsc()
    Bb = b.B.tocsc()
    num = np.sqrt(np.maximum(np.asarray((D.multiply(gram @ D)).sum(axis=0)).ravel(), 0))
    den = np.sqrt(np.asarray((Bb.multiply(gram @ Bb)).sum(axis=0)).ravel())
    return float(np.max(num / den))


def cmd_localization_study(cfg: ExperimentConfig, out=None, ells=None, level: int | None = None,
                           solutions: bool = True, lab: Lab | None = None) -> list[dict]:
    """Basis and solution gaps between ell-localized and whole-domain LOD."""
    lab = lab or Lab(cfg, out)
    level = level or cfg.study.localization_level
    V = lab.potential()
    pair = RefinementPair(lab.mesh(level), lab.fine_mesh)
    ops = lod.FineOperators(pair, V)
    gram = ops.stiffness + ops.mass
    ell_max = 2**level - 1
    ells = sorted(set(ells or cfg.study.ells) | {ell_max})
    full = lod.assemble_lod_basis(lod.LODConfig(pair, ell_max, V), ops)
    ref_u = lab.run("lod", level, ell=ell_max)["_final"] if solutions else None
    rows = []
    for ell in ells:
        basis = full if ell == ell_max else lod.assemble_lod_basis(lod.LODConfig(pair, ell, V), ops)
        row = {"ell": ell, "basis_gap": basis_gap(basis, full, gram)}
        if solutions:
            u = ref_u if ell == ell_max else lab.run("lod", level, ell=ell)["_final"]
            row["h1_error"] = fem.h1_error(ref_u, u)
        rows.append(row)
    for prev, row in zip(rows, rows[1:]):
        if prev["basis_gap"] > 0 and row["ell"] == prev["ell"] + 1:
            row["ratio"] = row["basis_gap"] / prev["basis_gap"]
    fit = [(r["ell"], r["basis_gap"]) for r in rows if r["ell"] >= 2 and r["basis_gap"] > 1e-12]
    rate = None
    if len(fit) >= 2:
        x, y = zip(*fit)
        rate = float(np.exp(np.polyfit(x, np.log(y), 1)[0]))
    for r in rows:
        r["fitted_ratio"] = rate
    write_csv(lab.out / f"localization_{cfg.problem.potential}_{level}.csv", rows,
              ("ell", "basis_gap", "ratio", "h1_error", "fitted_ratio"))
    return rows


def cmd_time_order(cfg: ExperimentConfig, out=None, taus=None, lab: Lab | None = None) -> list[dict]:
    lab = lab or Lab(cfg, out)
    st = cfg.study
    s = lab.setup(st.time_method, st.time_level)
    rows = time_order_study(s.system, s.u0, cfg.problem.T, lab.cg_config(), taus or st.taus, tau_ref=st.tau_ref)
    write_csv(lab.out / f"time_order_{cfg.problem.potential}_q{cfg.time.q}.csv", rows, ("tau", "h1_error", "eoc"))
    return rows


def cmd_ritz_study(cfg: ExperimentConfig, out=None, levels=None, potential: str | None = None) -> list[dict]:
    """LOD Ritz projection error for the stationary problem with a Gaussian load."""
    out = Path(out or cfg.outputs.dir)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    p, d = cfg.problem, cfg.discretization
    name = potential or p.potential
    rows = lod.ritz_error_study(levels or cfg.study.ritz_levels, d.fine_level, name, lambda x: np.exp(-x**2),
                                ell_rule=d.ell_for, a=p.a, b=p.b)
    write_csv(out / f"ritz_{name}.csv", rows, ("i", "H", "ell", "h1_error", "eoc"))
    return rows

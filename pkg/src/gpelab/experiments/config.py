"""Declarative experiment configuration loaded from YAML."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

METHODS = ("lod", "p1", "p2", "p3")


@dataclass
class ProblemConfig:
    a: float = -15.0
    b: float = 15.0
    beta: float = 100.0
    T: float = 0.4
    potential: str = "V1"


@dataclass
class InitialConfig:
    potential: str = "Vgs"
    tol: float = 1e-9
    sigma: float = 1.0
    metric: str = "adaptive"
    max_iter: int = 2000
    snapshot: str | None = None


@dataclass
class DiscretizationConfig:
    method: str = "lod"
    level: int = 6
    fine_level: int = 13
    ell_offset: int = 5
    ell: int | None = None

    def ell_for(self, level: int) -> int:
        """Oversampling ``level + ell_offset`` unless fixed, capped at whole-domain patches."""
        ell = self.ell if self.ell is not None else level + self.ell_offset
        return min(ell, 2**level - 1)


@dataclass
class TimeConfig:
    q: int = 2
    tau: float = 2e-3
    fp_tol: float = 1e-10
    max_fp_iters: int = 200
    nl_time_points: int | None = None


@dataclass
class OutputConfig:
    dir: str = "out"
    snapshot_cadence: int = 0


@dataclass
class StudyConfig:
    levels: list[int] = field(default_factory=lambda: [4, 5, 6, 7, 8])
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    ells: list[int] = field(default_factory=lambda: list(range(1, 11)))
    localization_level: int = 5
    ritz_levels: list[int] = field(default_factory=lambda: [6, 7, 8])
    taus: list[float] = field(default_factory=lambda: [8e-3, 4e-3, 2e-3, 1e-3])
    tau_ref: float = 2.5e-4
    time_level: int = 10
    time_method: str = "p1"


@dataclass
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    study: StudyConfig = field(default_factory=StudyConfig)

    def __post_init__(self):
        d = self.discretization
        if d.method not in METHODS:
            raise ValueError(f"unknown method {d.method!r}; expected one of {METHODS}")
        for m in self.study.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r} in study")
        if d.level < 1 or d.fine_level < 1 or not self.time.tau > 0:
            raise ValueError("levels and step size must be positive")

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with some fields of sections replaced, e.g. ``time={"tau": 1e-3}``."""
        new = {}
        for f in dataclasses.fields(self):
            sec = getattr(self, f.name)
            new[f.name] = dataclasses.replace(sec, **sections.get(f.name, {}))
        return ExperimentConfig(**new)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        sections = {}
        types = {f.name: f.default_factory for f in dataclasses.fields(cls)}
        for name, values in (data or {}).items():
            if name not in types:
                raise ValueError(f"unknown config section {name!r}")
            proto = types[name]()
            known = {f.name for f in dataclasses.fields(proto)}
            extra = set(values or {}) - known
            if extra:
                raise ValueError(f"unknown keys in section {name!r}: {sorted(extra)}")
            sections[name] = dataclasses.replace(proto, **(values or {}))
        return cls(**sections)


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(yaml.safe_load(fh))


def paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """The published schedule: coarse levels 7..12 on a 2^16 fine mesh."""
    return cfg.replace(
        discretization={"fine_level": 16},
        study={"levels": [7, 8, 9, 10, 11, 12]},
    )

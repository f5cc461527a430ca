"""Uniform interval meshes, coarse/fine nesting and element patches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Mesh1D:
    a: float
    b: float
    n_elements: int

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError(f"empty interval ({self.a}, {self.b})")
        if self.n_elements < 2:
            raise ValueError(f"a mesh needs at least 2 elements, got {self.n_elements}")

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.n_elements

    @property
    def nodes(self) -> np.ndarray:
        return self.a + self.h * np.arange(self.n_elements + 1)

    def element(self, j: int) -> tuple[float, float]:
        return self.a + j * self.h, self.a + (j + 1) * self.h

    def locate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Element index and local coordinate in [0, 1] of each point."""
        t = (np.asarray(x, dtype=float) - self.a) / self.h
        e = np.clip(np.floor(t).astype(np.int64), 0, self.n_elements - 1)
        return e, t - e


def uniform_mesh(a: float, b: float, n_elements: int) -> Mesh1D:
    return Mesh1D(float(a), float(b), int(n_elements))


def interior_nodes(mesh: Mesh1D) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates of the interior nodes and their global node indices."""
    idx = np.arange(1, mesh.n_elements)
    return mesh.a + mesh.h * idx, idx


def element_patch(mesh: Mesh1D, K: int, ell: int) -> range:
    """Elements of the ``ell``-layer neighbourhood of element ``K``."""
    if not 0 <= K < mesh.n_elements:
        raise IndexError(f"element {K} not in mesh with {mesh.n_elements} elements")
    if ell < 0:
        raise ValueError("ell must be nonnegative")
    return range(max(0, K - ell), min(mesh.n_elements - 1, K + ell) + 1)


@dataclass(frozen=True)
class RefinementPair:
    coarse: Mesh1D
    fine: Mesh1D

    def __post_init__(self):
        c, f = self.coarse, self.fine
        if (c.a, c.b) != (f.a, f.b):
            raise ValueError("coarse and fine mesh cover different intervals")
        if f.n_elements % c.n_elements or f.n_elements == c.n_elements:
            raise ValueError(
                f"fine mesh ({f.n_elements} elements) is not a strict refinement of "
                f"the coarse mesh ({c.n_elements} elements)"
            )

    @property
    def factor(self) -> int:
        return self.fine.n_elements // self.coarse.n_elements


def fine_range(pair: RefinementPair, coarse: range) -> range:
    r = pair.factor
    return range(r * coarse.start, r * coarse.stop)


def level_mesh(level: int, a: float = -15.0, b: float = 15.0) -> Mesh1D:
    """Mesh with ``2**level`` elements, i.e. H = (b - a) 2^-level."""
    return uniform_mesh(a, b, 2 ** level)

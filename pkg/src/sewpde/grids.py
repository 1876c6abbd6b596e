"""Dyadic time grids and the canonical pair/triple families stored on them.

All increment tables in this package live on a dyadic partition of [0, T].
Indices are always expressed at the finest resolution of the grid (level L),
so the point with index i is t_i = i * T / 2**L.  Tuple arguments follow the
simplex ordering (t, u, s) with t >= u >= s.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class GridError(ValueError):
    """Raised when grids are incompatible or a tuple violates the simplex order."""


@dataclass(frozen=True)
class DyadicGrid:
    """Dyadic partition of [0, T] with 2**level + 1 points."""

    horizon: float
    level: int

    def __post_init__(self):
        if self.horizon <= 0:
            raise GridError(f"horizon must be positive, got {self.horizon}")
        if self.level < 0:
            raise GridError(f"level must be >= 0, got {self.level}")

    @property
    def npoints(self) -> int:
        return (1 << self.level) + 1

    @property
    def ncells(self) -> int:
        return 1 << self.level

    @cached_property
    def points(self) -> np.ndarray:
        return np.arange(self.npoints) * (self.horizon / self.ncells)

    def time(self, i: int) -> float:
        return i * (self.horizon / self.ncells)

    def refine(self, extra_levels: int) -> "DyadicGrid":
        return DyadicGrid(self.horizon, self.level + extra_levels)

    def step(self, at_level: int | None = None) -> float:
        n = self.level if at_level is None else at_level
        return self.horizon / (1 << n)

    def stride(self, at_level: int) -> int:
        """Index stride of adjacent points of the coarse ``at_level`` sub-grid."""
        if not 0 <= at_level <= self.level:
            raise GridError(f"sub-level {at_level} outside [0, {self.level}]")
        return 1 << (self.level - at_level)

    def adjacent_pairs(self, at_level: int) -> list[tuple[int, int]]:
        """(t, s) index pairs of adjacent points at the given coarser level."""
        k = self.stride(at_level)
        return [((i + 1) * k, i * k) for i in range(1 << at_level)]

    def pair_family(self) -> list[tuple[int, int]]:
        """Adjacent pairs at every level plus all pairs anchored at 0.

        This is the canonical storage family: the sewing and Riemann routines
        traverse exactly these pairs, and the anchored pairs are what the
        primitive B_ts = -h_{ts0} needs.
        """
        fam: list[tuple[int, int]] = []
        seen: set[tuple[int, int]] = set()
        for n in range(self.level + 1):
            for p in self.adjacent_pairs(n):
                if p not in seen:
                    seen.add(p)
                    fam.append(p)
        for i in range(1, self.npoints):
            p = (i, 0)
            if p not in seen:
                seen.add(p)
                fam.append(p)
        return fam

    def midpoint_triples(self) -> list[tuple[int, int, int]]:
        """(t, mid, s) for every adjacent pair of every level that has a midpoint.

        These balanced triples are the ones the dyadic sewing telescopes over,
        so Hoelder norms of 3-increments measured on them are exactly the
        quantity entering the sewing bound.
        """
        out = []
        for n in range(self.level):
            k = self.stride(n)
            for i in range(1 << n):
                out.append(((i + 1) * k, i * k + k // 2, i * k))
        return out

    def random_triples(self, count: int, rng: np.random.Generator) -> list[tuple[int, int, int]]:
        """Strictly ordered random (t, u, s) index triples for residual checks."""
        n = self.npoints
        if n < 3:
            return []
        out = []
        for _ in range(count):
            t, u, s = np.sort(rng.choice(n, size=3, replace=False))[::-1]
            out.append((int(t), int(u), int(s)))
        return out

    def random_quads(self, count: int, rng: np.random.Generator) -> list[tuple[int, int, int, int]]:
        n = self.npoints
        if n < 4:
            return []
        out = []
        for _ in range(count):
            q = np.sort(rng.choice(n, size=4, replace=False))[::-1]
            out.append(tuple(int(v) for v in q))
        return out


def check_simplex(*indices: int) -> None:
    for a, b in zip(indices, indices[1:]):
        if a < b:
            raise GridError(f"simplex order violated: {indices}")

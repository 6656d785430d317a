"""Mesh geometry, xy routing and the 3x3 temperature down-sampling."""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    """A rows x cols NoC mesh. Tile ``i`` sits at column ``i % cols``, row ``i // cols``.

    Numbering is row-major from the top-left tile; every tile carries one core
    and the router attached to it, so tile, core and router share an index.
    """

    rows: int
    cols: int
    positions: np.ndarray = field(init=False, repr=False, compare=False)
    neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.rows < 2 or self.cols < 2:
            raise MeshError(f"mesh must be at least 2x2, got {self.rows}x{self.cols}")
        idx = np.arange(self.rows * self.cols)
        pos = np.column_stack([idx % self.cols, idx // self.cols]).astype(float)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        nbrs = []
        for i in range(self.size):
            c, r = self.coords(i)
            # fixed W, E, N, S order; the thermal kernels sum in this order
            cand = [(c - 1, r), (c + 1, r), (c, r - 1), (c, r + 1)]
            nbrs.append(tuple(self.index(cc, rr) for cc, rr in cand
                              if 0 <= cc < self.cols and 0 <= rr < self.rows))
        object.__setattr__(self, "neighbors", tuple(nbrs))

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def center(self) -> tuple[float, float]:
        return ((self.cols - 1) / 2.0, (self.rows - 1) / 2.0)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.cols - 1, self.rows - 1)

    def coords(self, tile: int) -> tuple[int, int]:
        self._check(tile)
        return tile % self.cols, tile // self.cols

    def index(self, col: int, row: int) -> int:
        if not (0 <= col < self.cols and 0 <= row < self.rows):
            raise MeshError(f"({col}, {row}) outside {self.rows}x{self.cols} mesh")
        return row * self.cols + col

    def exposed_sides(self) -> np.ndarray:
        """Number of die-boundary sides per tile (0 interior, 1 edge, 2 corner)."""
        return np.array([4 - len(n) for n in self.neighbors], dtype=float)

    def neighbor_table(self) -> np.ndarray:
        """(M, 4) int32 neighbor indices padded with -1."""
        tab = np.full((self.size, 4), -1, dtype=np.int32)
        for i, nb in enumerate(self.neighbors):
            tab[i, : len(nb)] = nb
        return tab

    def _check(self, tile: int) -> None:
        if not (0 <= tile < self.size):
            raise IndexError(f"tile {tile} out of range for {self.size}-tile mesh")


def build_mesh(rows: int, cols: int) -> Mesh:
    return Mesh(int(rows), int(cols))


def xy_route(mesh: Mesh, src: int, dst: int) -> list[int]:
    """Routers visited from ``src`` to ``dst``: along the row to the target column, then along the column."""
    c0, r0 = mesh.coords(src)
    c1, r1 = mesh.coords(dst)
    route = [src]
    c, r = c0, r0
    while c != c1:
        c += 1 if c1 > c else -1
        route.append(mesh.index(c, r))
    while r != r1:
        r += 1 if r1 > r else -1
        route.append(mesh.index(c, r))
    return route


def dist_from_point(mesh: Mesh, tile: int, point: tuple[float, float]) -> float:
    c, r = mesh.coords(tile)
    return math.hypot(c - point[0], r - point[1])


# normalized chip coordinates of the 3x3 sensor grid
GRID_POINTS = (0.0, 0.5, 1.0)


@lru_cache(maxsize=32)
def interpolation_weights(mesh: Mesh) -> np.ndarray:
    """(9, M) matrix mapping core temperatures onto the 3x3 grid, row-major.

    Each sample is bilinear in the four cores around it, i.e. the
    ``Z(x, y) = ax + by + cxy + d`` surface fitted through those four points.
    """
    w = np.zeros((9, mesh.size))
    k = 0
    for gy in GRID_POINTS:
        for gx in GRID_POINTS:
            x = gx * (mesh.cols - 1)
            y = gy * (mesh.rows - 1)
            c0 = min(int(math.floor(x)), mesh.cols - 2)
            r0 = min(int(math.floor(y)), mesh.rows - 2)
            fx, fy = x - c0, y - r0
            w[k, mesh.index(c0, r0)] += (1 - fx) * (1 - fy)
            w[k, mesh.index(c0 + 1, r0)] += fx * (1 - fy)
            w[k, mesh.index(c0, r0 + 1)] += (1 - fx) * fy
            w[k, mesh.index(c0 + 1, r0 + 1)] += fx * fy
            k += 1
    w.setflags(write=False)
    return w


def interpolate_grid(mesh: Mesh, core_temps) -> np.ndarray:
    temps = np.asarray(core_temps, dtype=float)
    if temps.shape != (mesh.size,):
        raise ValueError(f"expected {mesh.size} core temperatures, got shape {temps.shape}")
    return interpolation_weights(mesh) @ temps

"""2-D occupancy grid with conservative line-of-sight queries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from activeloc.errors import ConfigurationError


@dataclass
class OccupancyGrid:
    origin: np.ndarray  # world xy of the lower-left corner of cell (0, 0)
    resolution: float
    occupied: np.ndarray  # bool, shape (nx, ny)
    outside_occupied: bool = False

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        self.occupied = np.asarray(self.occupied, dtype=bool)
        if not self.resolution > 0:
            raise ConfigurationError(f"grid resolution must be positive, got {self.resolution}")
        if self.occupied.ndim != 2:
            raise ConfigurationError("occupancy must be a 2-D array")

    @property
    def dims(self) -> tuple[int, int]:
        return self.occupied.shape

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        nx, ny = self.dims
        ox, oy = self.origin
        return ox, oy, ox + nx * self.resolution, oy + ny * self.resolution

    @classmethod
    def from_rectangles(cls, origin, resolution, size, rectangles, outside_occupied=False):
        """Rasterize axis-aligned ``[xmin, ymin, xmax, ymax]`` obstacles.

        A cell is occupied when it overlaps an obstacle with positive area.
        """
        nx = int(round(size[0] / resolution))
        ny = int(round(size[1] / resolution))
        if nx <= 0 or ny <= 0:
            raise ConfigurationError(f"grid size {size} gives no cells")
        ox, oy = float(origin[0]), float(origin[1])
        xs = ox + resolution * np.arange(nx + 1)
        ys = oy + resolution * np.arange(ny + 1)
        occ = np.zeros((nx, ny), dtype=bool)
        for r in rectangles:
            x0, y0, x1, y1 = (float(v) for v in r)
            if x1 <= x0 or y1 <= y0:
                raise ConfigurationError(f"degenerate obstacle rectangle {r}")
            cx = (xs[:-1] < x1) & (xs[1:] > x0)
            cy = (ys[:-1] < y1) & (ys[1:] > y0)
            occ |= cx[:, None] & cy[None, :]
        return cls(np.array([ox, oy]), float(resolution), occ, outside_occupied)

    def in_bounds(self, ix: int, iy: int) -> bool:
        nx, ny = self.dims
        return 0 <= ix < nx and 0 <= iy < ny

    def cell_occupied(self, ix: int, iy: int) -> bool:
        if not self.in_bounds(ix, iy):
            return self.outside_occupied
        return bool(self.occupied[ix, iy])

    def cell_of(self, p) -> tuple[int, int]:
        q = (np.asarray(p, float)[:2] - self.origin) / self.resolution
        return int(math.floor(q[0])), int(math.floor(q[1]))

    def segment_cells(self, a, b) -> list[tuple[int, int]]:
        """Every cell whose closed square touches the closed segment ``a``-``b``.

        Supercover semantics: passing exactly through a cell corner or along a
        cell edge reports the cells on both sides.
        """
        res = self.resolution
        pa = tuple((np.asarray(a, float)[:2] - self.origin) / res)
        pb = tuple((np.asarray(b, float)[:2] - self.origin) / res)
        (ax, ay), (bx, by) = sorted([pa, pb])  # order-independent rounding

        def y_at(x):
            if x == ax:
                return ay
            if x == bx:
                return by
            return ay + (by - ay) * (x - ax) / (bx - ax)  # one rounding: exact on lattices

        cells = []
        for ix in range(math.ceil(ax) - 1, math.floor(bx) + 1):
            xa, xb = max(ax, ix), min(bx, ix + 1)
            if xa > xb:
                continue
            if bx == ax:
                ylo, yhi = min(ay, by), max(ay, by)
            else:
                ya, yb = y_at(xa), y_at(xb)
                ylo, yhi = min(ya, yb), max(ya, yb)
            for iy in range(math.ceil(ylo) - 1, math.floor(yhi) + 1):
                cells.append((ix, iy))
        return cells

    def segment_blocked(self, a, b) -> bool:
        return any(self.cell_occupied(ix, iy) for ix, iy in self.segment_cells(a, b))

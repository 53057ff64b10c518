"""Height grids, wind-direction rotations, and normalization.

Grid convention: row 0 is the north edge, column 0 the west edge. The cell
at (row r, col c) is centered at x = (c + 0.5) * cell, y = side - (r + 0.5) * cell
in tile-local coordinates (y grows northward). Velocity components are
u = eastward (+col) and v = northward (-row).

All model training happens in a canonical frame where the wind blows from
the north, i.e. in the -v direction. `canonicalize` rotates a layout so a
given compass inflow becomes north inflow; `decanonicalize` rotates a
predicted field back into the world frame, transforming the components
along with the positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from shapely import contains_xy
from shapely.geometry import Polygon

from .errors import ValidationError
from .geomodel import Tile

CUT_HEIGHT = 1.2  # pedestrian cut-plane, meters
VELOCITY_HEADROOM = 1.05  # denominator padding so training magnitudes stay < 1


class Direction(str, Enum):
    """Compass direction the wind comes FROM."""

    N = "N"
    E = "E"
    S = "S"
    W = "W"

    @property
    def quarter_turns(self) -> int:
        """CCW quarter turns that map this inflow onto north inflow."""
        return {"N": 0, "E": 1, "S": 2, "W": 3}[self.value]


@dataclass(frozen=True)
class HeightGrid:
    """W x W raster of building heights in meters."""

    data: np.ndarray
    cell_size: float

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        object.__setattr__(self, "data", data)
        w = data.shape[0]
        if data.ndim != 2 or data.shape[1] != w:
            raise ValidationError(f"height grid must be square, got {data.shape}")
        if w < 16 or (w & (w - 1)) != 0:
            raise ValidationError(f"resolution must be a power of two >= 16, got {w}")
        if not np.all(np.isfinite(data)) or data.min() < 0:
            raise ValidationError("heights must be finite and >= 0")
        if self.cell_size <= 0:
            raise ValidationError("cell_size must be > 0")

    @property
    def resolution(self) -> int:
        return self.data.shape[0]

    @property
    def side(self) -> float:
        return self.resolution * self.cell_size


@dataclass(frozen=True)
class VelocityField:
    """Per-cell (u, v) in m/s at the pedestrian cut-plane."""

    u: np.ndarray
    v: np.ndarray
    cut_height: float = CUT_HEIGHT

    def __post_init__(self):
        u = np.ascontiguousarray(self.u, dtype=np.float32)
        v = np.ascontiguousarray(self.v, dtype=np.float32)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        if u.shape != v.shape or u.ndim != 2:
            raise ValidationError(f"u/v shape mismatch: {u.shape} vs {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValidationError("velocity components must be finite")

    @property
    def resolution(self) -> int:
        return self.u.shape[0]

    def speed(self) -> np.ndarray:
        return np.sqrt(self.u.astype(np.float64) ** 2 + self.v.astype(np.float64) ** 2)


@dataclass(frozen=True)
class NormStats:
    """Training-set scaling constants, frozen into every model bundle."""

    h_max: float
    v_scale_u: float
    v_scale_v: float

    def __post_init__(self):
        for name in ("h_max", "v_scale_u", "v_scale_v"):
            val = getattr(self, name)
            if not (val > 0) or not np.isfinite(val):
                raise ValidationError(f"{name} must be strictly positive, got {val}")

    def scale_for(self, component: str) -> float:
        if component == "u":
            return self.v_scale_u
        if component == "v":
            return self.v_scale_v
        raise ValidationError(f"unknown component {component!r}")


def rasterize(tile: Tile, resolution: int) -> HeightGrid:
    """Sample footprint heights at cell centers; overlaps take the max height."""
    cell = tile.side / resolution
    data = np.zeros((resolution, resolution), dtype=np.float32)
    if tile.footprints:
        # Cell-center coordinates; row 0 is the north edge (max y).
        xs = (np.arange(resolution) + 0.5) * cell
        ys = tile.side - (np.arange(resolution) + 0.5) * cell
        for fp in tile.footprints:
            arr = fp.vertex_array()
            c0 = max(0, int(np.searchsorted(xs, arr[:, 0].min(), side="left")))
            c1 = min(resolution, int(np.searchsorted(xs, arr[:, 0].max(), side="right")))
            # ys is decreasing; use the flipped view for the row range.
            r0 = max(0, int(np.searchsorted(-ys, -arr[:, 1].max(), side="left")))
            r1 = min(resolution, int(np.searchsorted(-ys, -arr[:, 1].min(), side="right")))
            if c0 >= c1 or r0 >= r1:
                continue
            gx, gy = np.meshgrid(xs[c0:c1], ys[r0:r1])
            inside = contains_xy(Polygon(fp.vertices), gx.ravel(), gy.ravel())
            block = data[r0:r1, c0:c1]
            np.maximum(block, np.where(inside.reshape(gy.shape), fp.height, 0.0), out=block)
    return HeightGrid(data, cell)


def rotate_grid_ccw(grid: np.ndarray, k: int) -> np.ndarray:
    """Exact quarter-turn rotation: out[r][c] = in[c][W-1-r], applied k times."""
    if k not in (0, 1, 2, 3):
        raise ValidationError(f"k must be in 0..3, got {k}")
    return np.ascontiguousarray(np.rot90(grid, k))


def rotate_vector_field(field: VelocityField, k: int) -> VelocityField:
    """Rotate positions like rotate_grid_ccw and components by (u, v) -> (-v, u) per turn."""
    if k not in (0, 1, 2, 3):
        raise ValidationError(f"k must be in 0..3, got {k}")
    u, v = field.u, field.v
    ur, vr = rotate_grid_ccw(u, k), rotate_grid_ccw(v, k)
    if k == 0:
        nu, nv = ur, vr
    elif k == 1:
        nu, nv = -vr, ur
    elif k == 2:
        nu, nv = -ur, -vr
    else:
        nu, nv = vr, -ur
    return VelocityField(nu, nv, field.cut_height)


def canonicalize(grid: HeightGrid, direction: Direction) -> HeightGrid:
    """Rotate a layout so wind from `direction` becomes canonical north inflow."""
    return HeightGrid(rotate_grid_ccw(grid.data, direction.quarter_turns), grid.cell_size)


def decanonicalize(field: VelocityField, direction: Direction) -> VelocityField:
    """Inverse of `canonicalize` on a predicted field, components included."""
    return rotate_vector_field(field, (4 - direction.quarter_turns) % 4)


def norm_stats_from_training(
    grids: list[np.ndarray], us: list[np.ndarray], vs: list[np.ndarray]
) -> NormStats:
    """Scaling constants from the training partition only."""
    h_max = max(float(g.max()) for g in grids)
    v_scale_u = max(float(np.abs(u).max()) for u in us)
    v_scale_v = max(float(np.abs(v).max()) for v in vs)
    return NormStats(h_max, v_scale_u, v_scale_v)


def normalize_heights(data: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(data, dtype=np.float32) / np.float32(stats.h_max)


def normalize_component(data: np.ndarray, stats: NormStats, component: str) -> np.ndarray:
    scale = np.float32(VELOCITY_HEADROOM * stats.scale_for(component))
    return np.asarray(data, dtype=np.float32) / scale


def denormalize_component(data: np.ndarray, stats: NormStats, component: str) -> np.ndarray:
    scale = np.float32(VELOCITY_HEADROOM * stats.scale_for(component))
    return np.asarray(data, dtype=np.float32) * scale

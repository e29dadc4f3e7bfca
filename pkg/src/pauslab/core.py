"""Core geometry and data types shared by every stage of the engine.

Axis convention: ``x`` is lateral (along the transducer face, array axis 0)
and ``z`` is axial (depth, increasing away from the face, array axis 1).
Arrays are row-major, so z is the fast axis; beamforming and depth loops
iterate contiguously. All stored float arrays are 32-bit; computation may
widen internally.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .errors import (
    EmptySource,
    GeometryMismatch,
    GridMismatch,
    OutOfBounds,
)

IMAGE_KINDS = ("initial_pressure", "bmode_db", "pa_recon")


def _readonly_f32(values) -> np.ndarray:
    out = np.array(values, dtype=np.float32, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Grid2D:
    """Regular isotropic 2D grid; positions are cell centers."""

    nx: int
    nz: int
    dx: float
    origin: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 1 or self.nz < 1:
            raise GridMismatch(f"grid must have positive dims, got {self.nx}x{self.nz}")
        if not (self.dx > 0):
            raise GridMismatch(f"grid spacing must be positive, got {self.dx}")

    @property
    def extent(self) -> Tuple[float, float]:
        """World size (x, z) in meters."""
        return (self.nx * self.dx, self.nz * self.dx)

    def world_to_grid(self, pos: Tuple[float, float]) -> Tuple[int, int]:
        """Map a world position to the nearest grid index (round half up).

        Raises OutOfBounds for positions outside [origin, origin + extent).
        """
        x, z = pos
        x0, z0 = self.origin
        # compare in index space so the upper boundary is not subject to the
        # float rounding of nx*dx
        u = (x - x0) / self.dx
        v = (z - z0) / self.dx
        eps = 1e-9
        if not (-eps <= u < self.nx - eps and -eps <= v < self.nz - eps):
            raise OutOfBounds(f"position {pos} outside grid extent")
        i = int(np.floor(u + 0.5))
        j = int(np.floor(v + 0.5))
        i = max(i, 0)
        j = max(j, 0)
        # rounding can push the last half cell one past the end; clamp to the
        # nearest existing point
        i = min(i, self.nx - 1)
        j = min(j, self.nz - 1)
        return i, j

    def grid_to_world(self, idx: Tuple[int, int]) -> Tuple[float, float]:
        i, j = idx
        if not (0 <= i < self.nx and 0 <= j < self.nz):
            raise OutOfBounds(f"index {idx} outside grid")
        return (self.origin[0] + i * self.dx, self.origin[1] + j * self.dx)

    def x_coords(self) -> np.ndarray:
        return self.origin[0] + np.arange(self.nx) * self.dx

    def z_coords(self) -> np.ndarray:
        return self.origin[1] + np.arange(self.nz) * self.dx


@dataclass(frozen=True)
class Medium:
    """Acoustic property maps on a grid.

    ``alpha_coeff`` is the power-law attenuation prefactor in dB/(MHz^y cm),
    ``alpha_power`` its exponent y.
    """

    grid: Grid2D
    sound_speed: np.ndarray
    density: np.ndarray
    alpha_coeff: float = 0.0
    alpha_power: float = 1.0

    def __post_init__(self):
        from .errors import NegativeAlpha

        c = _readonly_f32(self.sound_speed)
        rho = _readonly_f32(self.density)
        shape = (self.grid.nx, self.grid.nz)
        if c.shape != shape:
            raise GridMismatch(f"sound_speed shape {c.shape} != grid {shape}")
        if rho.shape != shape:
            raise GridMismatch(f"density shape {rho.shape} != grid {shape}")
        if not np.all(np.isfinite(c)) or not np.all(c > 0):
            raise GridMismatch("sound_speed must be finite and positive")
        if not np.all(np.isfinite(rho)) or not np.all(rho > 0):
            raise GridMismatch("density must be finite and positive")
        if self.alpha_coeff < 0:
            raise NegativeAlpha(f"alpha_coeff {self.alpha_coeff} < 0")
        object.__setattr__(self, "sound_speed", c)
        object.__setattr__(self, "density", rho)

    @property
    def c_max(self) -> float:
        return float(self.sound_speed.max())

    @property
    def c_mean(self) -> float:
        return float(self.sound_speed.mean())


def uniform_medium(grid: Grid2D, sound_speed: float, density: float = 1020.0,
                   alpha_coeff: float = 0.0, alpha_power: float = 1.0) -> Medium:
    c = np.full((grid.nx, grid.nz), sound_speed, dtype=np.float32)
    rho = np.full((grid.nx, grid.nz), density, dtype=np.float32)
    return Medium(grid, c, rho, alpha_coeff, alpha_power)


@dataclass(frozen=True)
class TransducerArray:
    """Linear array on the grid face row, elements laid out along x.

    Each element occupies ``element_points`` grid columns followed by
    ``kerf_points`` idle columns; together they must tile the pitch exactly.
    """

    n_elements: int
    pitch: float
    center_frequency: float
    element_points: int
    kerf_points: int
    face_row: int = 0

    def __post_init__(self):
        if self.n_elements < 1:
            raise GeometryMismatch("need at least one element")
        if self.element_points < 1 or self.kerf_points < 0:
            raise GeometryMismatch("element_points >= 1 and kerf_points >= 0 required")
        if self.pitch <= 0 or self.center_frequency <= 0:
            raise GeometryMismatch("pitch and center_frequency must be positive")

    @property
    def aperture(self) -> float:
        return self.n_elements * self.pitch

    @property
    def points_per_pitch(self) -> int:
        return self.element_points + self.kerf_points

    def validate_against(self, grid: Grid2D) -> None:
        """Check that the element layout tiles onto the grid."""
        step = int(np.floor(self.pitch / grid.dx + 0.5))
        if step != self.points_per_pitch:
            raise GeometryMismatch(
                f"pitch {self.pitch} is {step} cells of dx={grid.dx}, but "
                f"element_points+kerf_points = {self.points_per_pitch}")
        if abs(step * grid.dx - self.pitch) > 1e-9 * self.pitch:
            raise GeometryMismatch("pitch is not an integer number of grid cells")
        if self.n_elements * step > grid.nx:
            raise GeometryMismatch(
                f"array needs {self.n_elements * step} columns, grid has {grid.nx}")
        if not (0 <= self.face_row < grid.nz):
            raise GeometryMismatch(f"face_row {self.face_row} outside grid")

    def element_columns(self, grid: Grid2D) -> np.ndarray:
        """(n_elements, element_points) grid column indices of the faces."""
        self.validate_against(grid)
        step = self.points_per_pitch
        starts = np.arange(self.n_elements) * step
        return starts[:, None] + np.arange(self.element_points)[None, :]

    def element_centers_x(self, grid: Grid2D) -> np.ndarray:
        """World x of each element's face center (mean of its columns)."""
        cols = self.element_columns(grid)
        return grid.origin[0] + cols.mean(axis=1) * grid.dx


@dataclass(frozen=True)
class RFFrame:
    """Per-channel time series, shape (n_channels, n_samples)."""

    data: np.ndarray
    sampling_rate: float
    t0: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = _readonly_f32(self.data)
        if d.ndim != 2:
            raise GridMismatch(f"rf data must be 2D, got ndim={d.ndim}")
        if self.sampling_rate <= 0:
            raise GridMismatch("sampling_rate must be positive")
        object.__setattr__(self, "data", d)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray, **meta_updates) -> "RFFrame":
        meta = dict(self.meta)
        meta.update(meta_updates)
        return RFFrame(data, self.sampling_rate, self.t0, meta)


@dataclass(frozen=True)
class SosMap:
    """Sound-speed map on its own raster, decoupled from any sim grid."""

    values: np.ndarray
    resolution: float
    origin: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        v = _readonly_f32(self.values)
        if v.ndim != 2:
            raise GridMismatch(f"sos map must be 2D, got ndim={v.ndim}")
        if self.resolution <= 0:
            raise GridMismatch("resolution must be positive")
        object.__setattr__(self, "values", v)

    @property
    def grid(self) -> Grid2D:
        return Grid2D(self.values.shape[0], self.values.shape[1],
                      self.resolution, self.origin)


@dataclass(frozen=True)
class Image2D:
    """Scalar image tied to a grid; kind tags the pixel semantics."""

    values: np.ndarray
    grid: Grid2D
    kind: str

    def __post_init__(self):
        v = _readonly_f32(self.values)
        if v.shape != (self.grid.nx, self.grid.nz):
            raise GridMismatch(
                f"image shape {v.shape} != grid {(self.grid.nx, self.grid.nz)}")
        if self.kind not in IMAGE_KINDS:
            raise GridMismatch(f"unknown image kind {self.kind!r}")
        object.__setattr__(self, "values", v)


def resample_map(values: np.ndarray, src_grid: Grid2D, dst_grid: Grid2D,
                 method: str = "bilinear") -> np.ndarray:
    """Resample a field from one grid onto another.

    Sampling happens at destination cell centers; coordinates outside the
    source extent are edge-replicated (clamped). ``method`` is ``nearest``
    or ``bilinear``; bilinear output is a convex combination of source
    values, so min/max never exceed the source's.
    """
    values = np.asarray(values, dtype=np.float32)
    if values.size == 0:
        raise EmptySource("source map has zero area")
    if values.shape != (src_grid.nx, src_grid.nz):
        raise GridMismatch(f"values shape {values.shape} != src grid")
    if method not in ("nearest", "bilinear"):
        raise ValueError(f"unknown method {method!r}")

    # fractional source indices of destination cell centers
    u = (dst_grid.x_coords() - src_grid.origin[0]) / src_grid.dx
    v = (dst_grid.z_coords() - src_grid.origin[1]) / src_grid.dx
    # snap near-integer coordinates so identical grids reproduce exactly
    u = np.where(np.abs(u - np.rint(u)) < 1e-6, np.rint(u), u)
    v = np.where(np.abs(v - np.rint(v)) < 1e-6, np.rint(v), v)
    u = np.clip(u, 0.0, src_grid.nx - 1.0)
    v = np.clip(v, 0.0, src_grid.nz - 1.0)

    if method == "nearest":
        i = np.floor(u + 0.5).astype(np.intp).clip(0, src_grid.nx - 1)
        j = np.floor(v + 0.5).astype(np.intp).clip(0, src_grid.nz - 1)
        return values[np.ix_(i, j)]

    i0 = np.floor(u).astype(np.intp).clip(0, src_grid.nx - 1)
    j0 = np.floor(v).astype(np.intp).clip(0, src_grid.nz - 1)
    i1 = np.minimum(i0 + 1, src_grid.nx - 1)
    j1 = np.minimum(j0 + 1, src_grid.nz - 1)
    wu = (u - i0).astype(np.float64)[:, None]
    wv = (v - j0).astype(np.float64)[None, :]
    v64 = values.astype(np.float64)
    out = ((1 - wu) * (1 - wv) * v64[np.ix_(i0, j0)]
           + wu * (1 - wv) * v64[np.ix_(i1, j0)]
           + (1 - wu) * wv * v64[np.ix_(i0, j1)]
           + wu * wv * v64[np.ix_(i1, j1)])
    return out.astype(np.float32)


def replace(obj, **changes):
    """dataclasses.replace passthrough, re-exported for convenience."""
    return dataclasses.replace(obj, **changes)

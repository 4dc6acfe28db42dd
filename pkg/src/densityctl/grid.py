"""Cell-centred grids on [-a, a]^n and the finite-difference operators used
throughout the package.

Fields are plain numpy arrays whose shape equals ``grid.shape`` (scalar
fields) or ``(grid.ndim, *grid.shape)`` (vector fields).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class BoundaryKind(str, enum.Enum):
    PERIODIC = "periodic"
    REFLECTIVE = "reflective"

    @classmethod
    def coerce(cls, value: "BoundaryKind | str") -> "BoundaryKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown boundary kind {value!r}; expected 'periodic' or 'reflective'"
            ) from None


MIN_CELLS = 4


def _check_cells(n: int) -> int:
    if int(n) != n or n < MIN_CELLS:
        raise ValueError(f"n_cells must be an integer >= {MIN_CELLS}, got {n!r}")
    return int(n)


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Uniform cell-centred grid on [-half_width, half_width].

    Grids compare by identity so that a field built on one grid cannot be
    silently mixed with another grid of the same size.
    """

    half_width: float
    n_cells: int
    boundary: BoundaryKind = BoundaryKind.PERIODIC

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width!r}")
        object.__setattr__(self, "half_width", float(self.half_width))
        object.__setattr__(self, "n_cells", _check_cells(self.n_cells))
        object.__setattr__(self, "boundary", BoundaryKind.coerce(self.boundary))

    ndim = 1

    @property
    def shape(self) -> tuple[int]:
        return (self.n_cells,)

    @property
    def periodic(self) -> bool:
        return self.boundary is BoundaryKind.PERIODIC

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.n_cells

    @property
    def spacing(self) -> tuple[float]:
        return (self.dx,)

    @property
    def cell_volume(self) -> float:
        return self.dx

    @property
    def volume(self) -> float:
        return 2.0 * self.half_width

    @cached_property
    def centers(self) -> np.ndarray:
        j = np.arange(self.n_cells)
        return -self.half_width + (j + 0.5) * self.dx

    @cached_property
    def faces(self) -> np.ndarray:
        return -self.half_width + np.arange(self.n_cells + 1) * self.dx

    @property
    def axes(self) -> tuple["Grid1D"]:
        return (self,)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def __repr__(self):
        return (
            f"Grid1D(half_width={self.half_width!r}, n_cells={self.n_cells}, "
            f"boundary={self.boundary.value!r})"
        )


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Tensor product of two Grid1D layouts sharing one boundary kind."""

    half_width: float
    n_cells: tuple[int, int]
    boundary: BoundaryKind = BoundaryKind.PERIODIC

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width!r}")
        n = self.n_cells
        if np.ndim(n) == 0:
            n = (n, n)
        if len(n) != 2:
            raise ValueError(f"Grid2D needs two cell counts, got {self.n_cells!r}")
        object.__setattr__(self, "half_width", float(self.half_width))
        object.__setattr__(self, "n_cells", tuple(_check_cells(k) for k in n))
        object.__setattr__(self, "boundary", BoundaryKind.coerce(self.boundary))

    ndim = 2

    @cached_property
    def axes(self) -> tuple[Grid1D, Grid1D]:
        return tuple(Grid1D(self.half_width, k, self.boundary) for k in self.n_cells)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_cells

    @property
    def periodic(self) -> bool:
        return self.boundary is BoundaryKind.PERIODIC

    @property
    def spacing(self) -> tuple[float, float]:
        return tuple(ax.dx for ax in self.axes)

    @property
    def cell_volume(self) -> float:
        dx1, dx2 = self.spacing
        return dx1 * dx2

    @property
    def volume(self) -> float:
        return (2.0 * self.half_width) ** 2

    @cached_property
    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid of cell centres, ``indexing='ij'``."""
        return tuple(np.meshgrid(self.axes[0].centers, self.axes[1].centers, indexing="ij"))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def __repr__(self):
        return (
            f"Grid2D(half_width={self.half_width!r}, n_cells={self.n_cells}, "
            f"boundary={self.boundary.value!r})"
        )


Grid = Grid1D | Grid2D


def check_scalar(f, grid: Grid) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"scalar field of shape {f.shape} does not live on grid of shape {grid.shape}")
    return f


def check_vector(F, grid: Grid) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    expected = (grid.ndim, *grid.shape)
    if F.shape != expected:
        raise ValueError(f"vector field of shape {F.shape} does not match expected {expected}")
    return F


def integrate(f, grid: Grid) -> float:
    """Midpoint-rule integral over the whole domain."""
    f = check_scalar(f, grid)
    return float(np.sum(f) * grid.cell_volume)


def l2_norm(f, grid: Grid) -> float:
    f = check_scalar(f, grid)
    return float(np.sqrt(np.sum(f * f) * grid.cell_volume))


def sup_norm(f) -> float:
    f = np.asarray(f, dtype=float)
    if f.size == 0:
        raise ValueError("sup_norm of an empty field")
    return float(np.max(np.abs(f)))


def _take(f, idx, axis):
    return np.take(f, idx, axis=axis)


def diff_axis(f: np.ndarray, dx: float, axis: int, periodic: bool) -> np.ndarray:
    """Second-order first derivative along one axis."""
    n = f.shape[axis]
    if n < MIN_CELLS:
        raise ValueError(f"need at least {MIN_CELLS} cells to differentiate, got {n}")
    if periodic:
        return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * dx)
    out = np.empty_like(f)
    inner = [slice(None)] * f.ndim
    inner[axis] = slice(1, -1)
    out[tuple(inner)] = (_take(f, np.arange(2, n), axis) - _take(f, np.arange(0, n - 2), axis)) / (2.0 * dx)
    lo = [slice(None)] * f.ndim
    lo[axis] = 0
    hi = [slice(None)] * f.ndim
    hi[axis] = n - 1
    out[tuple(lo)] = (-3.0 * _take(f, 0, axis) + 4.0 * _take(f, 1, axis) - _take(f, 2, axis)) / (2.0 * dx)
    out[tuple(hi)] = (3.0 * _take(f, n - 1, axis) - 4.0 * _take(f, n - 2, axis) + _take(f, n - 3, axis)) / (2.0 * dx)
    return out


def diff2_axis(f: np.ndarray, dx: float, axis: int, periodic: bool) -> np.ndarray:
    """Second-order second derivative along one axis (compact 3-point stencil)."""
    n = f.shape[axis]
    if n < MIN_CELLS:
        raise ValueError(f"need at least {MIN_CELLS} cells to differentiate, got {n}")
    if periodic:
        return (np.roll(f, -1, axis=axis) - 2.0 * f + np.roll(f, 1, axis=axis)) / dx**2
    out = np.empty_like(f)
    inner = [slice(None)] * f.ndim
    inner[axis] = slice(1, -1)
    out[tuple(inner)] = (
        _take(f, np.arange(2, n), axis) - 2.0 * _take(f, np.arange(1, n - 1), axis) + _take(f, np.arange(0, n - 2), axis)
    ) / dx**2
    lo = [slice(None)] * f.ndim
    lo[axis] = 0
    hi = [slice(None)] * f.ndim
    hi[axis] = n - 1
    out[tuple(lo)] = (
        2.0 * _take(f, 0, axis) - 5.0 * _take(f, 1, axis) + 4.0 * _take(f, 2, axis) - _take(f, 3, axis)
    ) / dx**2
    out[tuple(hi)] = (
        2.0 * _take(f, n - 1, axis) - 5.0 * _take(f, n - 2, axis) + 4.0 * _take(f, n - 3, axis) - _take(f, n - 4, axis)
    ) / dx**2
    return out


def gradient_1d(f, grid: Grid1D) -> np.ndarray:
    """Central differences; one-sided second-order stencils at reflective walls."""
    if grid.ndim != 1:
        raise ValueError("gradient_1d needs a Grid1D")
    f = check_scalar(f, grid)
    return diff_axis(f, grid.dx, 0, grid.periodic)


def second_derivative_1d(f, grid: Grid1D) -> np.ndarray:
    if grid.ndim != 1:
        raise ValueError("second_derivative_1d needs a Grid1D")
    f = check_scalar(f, grid)
    return diff2_axis(f, grid.dx, 0, grid.periodic)


def gradient_2d(f, grid: Grid2D) -> np.ndarray:
    if grid.ndim != 2:
        raise ValueError("gradient_2d needs a Grid2D")
    f = check_scalar(f, grid)
    return np.stack([diff_axis(f, h, ax, grid.periodic) for ax, h in enumerate(grid.spacing)])


def divergence_2d(F, grid: Grid2D) -> np.ndarray:
    if grid.ndim != 2:
        raise ValueError("divergence_2d needs a Grid2D")
    F = check_vector(F, grid)
    return sum(diff_axis(F[ax], h, ax, grid.periodic) for ax, h in enumerate(grid.spacing))


def laplacian(f, grid: Grid) -> np.ndarray:
    """Sum of compact second differences along every axis."""
    f = check_scalar(f, grid)
    return sum(diff2_axis(f, h, ax, grid.periodic) for ax, h in enumerate(grid.spacing))


def partial_derivatives(f, grid: Grid) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """First and pure second derivatives along each axis."""
    f = check_scalar(f, grid)
    first = [diff_axis(f, h, ax, grid.periodic) for ax, h in enumerate(grid.spacing)]
    second = [diff2_axis(f, h, ax, grid.periodic) for ax, h in enumerate(grid.spacing)]
    return first, second

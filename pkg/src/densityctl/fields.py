"""Target densities and grid-based density estimation from agent positions."""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator

from .grid import Grid, Grid1D, Grid2D, check_scalar, integrate, partial_derivatives, sup_norm
from ._validation import check_positions

GAUSSIAN_TRUNCATE = 4.0


def normalize(values, grid: Grid) -> np.ndarray:
    """Scale a nonnegative field to unit mass on ``grid``."""
    values = check_scalar(values, grid)
    if np.any(values < 0):
        raise ValueError("density values must be nonnegative")
    mass = integrate(values, grid)
    if not mass > 0:
        raise ValueError("cannot normalize a field with zero mass")
    return values / mass


def uniform_density(grid: Grid) -> np.ndarray:
    return np.full(grid.shape, 1.0 / grid.volume)


def _require_periodic(grid: Grid, what: str):
    if not grid.periodic:
        raise ValueError(f"{what} needs a periodic grid")


def von_mises_1d(kappa: float, mu: float, grid: Grid1D) -> np.ndarray:
    """Density proportional to exp(kappa cos(x - mu)), normalised on the grid."""
    if grid.ndim != 1:
        raise ValueError("von_mises_1d needs a Grid1D")
    _require_periodic(grid, "von Mises target")
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    # subtracting kappa keeps exp() bounded for large concentrations
    raw = np.exp(kappa * (np.cos(grid.centers - mu) - 1.0))
    return normalize(raw, grid)


def bivariate_von_mises(kappa1: float, kappa2: float, mu: float, nu: float, grid: Grid2D) -> np.ndarray:
    if grid.ndim != 2:
        raise ValueError("bivariate_von_mises needs a Grid2D")
    _require_periodic(grid, "bivariate von Mises target")
    x1, x2 = grid.centers
    c1, c2 = np.cos(x1 - mu), np.cos(x2 - nu)
    s1, s2 = np.sin(x1 - mu), np.sin(x2 - nu)
    expo = kappa1 * c1 + kappa2 * c2 + c1 * c2 + s1 * s2
    return normalize(np.exp(expo - expo.max()), grid)


def _smooth(values: np.ndarray, grid: Grid, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return values
    mode = "wrap" if grid.periodic else "reflect"
    cells = [sigma / h for h in grid.spacing]
    return ndimage.gaussian_filter(values, sigma=cells, mode=mode, truncate=GAUSSIAN_TRUNCATE)


def image_to_grid(pixels, grid: Grid2D) -> np.ndarray:
    """Bilinear resample of an image onto the grid.

    Column ``c`` maps to x1 and row ``r`` to x2 with row 0 at the top
    (x2 = +a), so the image reads upright with x2 pointing up.  When the image
    has exactly the grid's resolution, pixel (r, c) lands on cell
    ``(c, n2 - 1 - r)``.
    """
    pixels = np.asarray(pixels, dtype=float)
    if pixels.ndim != 2 or pixels.size == 0:
        raise ValueError("pixels must be a nonempty 2-D matrix")
    h, w = pixels.shape
    a = grid.half_width
    x1, x2 = grid.centers
    col = (x1 + a) / (2 * a) * w - 0.5
    row = (a - x2) / (2 * a) * h - 0.5
    return ndimage.map_coordinates(pixels, [row, col], order=1, mode="nearest")


def pixel_cell(row: int, col: int, image_shape, grid: Grid2D) -> tuple[int, int]:
    """Cell that contains the centre of pixel ``(row, col)``."""
    h, w = image_shape
    a = grid.half_width
    x1 = -a + (col + 0.5) * 2 * a / w
    x2 = a - (row + 0.5) * 2 * a / h
    i = min(int((x1 + a) / grid.spacing[0]), grid.shape[0] - 1)
    j = min(int((x2 + a) / grid.spacing[1]), grid.shape[1] - 1)
    return i, j


def density_from_image(pixels, grid: Grid2D, smoothing_sigma: float, invert: bool = False) -> np.ndarray:
    if grid.ndim != 2:
        raise ValueError("density_from_image needs a Grid2D")
    if smoothing_sigma < 0:
        raise ValueError("smoothing_sigma must be >= 0")
    values = image_to_grid(pixels, grid)
    if invert:
        values = values.max() - values
    values = _smooth(values, grid, smoothing_sigma)
    values = values - min(values.min(), 0.0)
    if not np.any(values > 0):
        raise ValueError("image is identically zero after processing; cannot normalise")
    return normalize(values, grid)


def histogram(positions, grid: Grid) -> np.ndarray:
    """Agent counts per grid cell."""
    positions = check_positions(positions, grid)
    a = grid.half_width
    flat = np.zeros(positions.shape[0], dtype=np.int64)
    for ax, (h, n) in enumerate(zip(grid.spacing, grid.shape)):
        idx = np.floor((positions[:, ax] + a) / h).astype(np.int64)
        np.clip(idx, 0, n - 1, out=idx)
        flat = flat * n + idx
    counts = np.bincount(flat, minlength=int(np.prod(grid.shape)))
    return counts.reshape(grid.shape)


def estimate_density(positions, grid: Grid, bandwidth_sigma: float | None = None) -> np.ndarray:
    """Normalised, Gaussian-filtered histogram of agent positions.

    ``bandwidth_sigma`` is a length; ``None`` selects twice the cell size.
    The filter wraps on periodic grids and mirrors at reflective walls, so it
    conserves mass; the result is renormalised to absorb the truncation at
    four standard deviations.
    """
    if bandwidth_sigma is None:
        bandwidth_sigma = 2.0 * max(grid.spacing)
    if bandwidth_sigma < 0:
        raise ValueError("bandwidth_sigma must be >= 0")
    counts = histogram(positions, grid).astype(float)
    rho = counts / (counts.sum() * grid.cell_volume)
    rho = _smooth(rho, grid, bandwidth_sigma)
    return rho / integrate(rho, grid)


class ReferenceDensity:
    """Desired density, either static or given as a function of time.

    For a time-varying target pass ``profile(t)`` and its time derivative
    ``rate(t)``; both must return arrays on ``grid``.  The rate is projected
    onto mean-free fields so the reference conserves mass exactly.
    """

    def __init__(self, grid: Grid, values=None, profile: Callable | None = None, rate: Callable | None = None):
        if values is None and profile is None:
            raise ValueError("need either static values or a profile(t) callable")
        self.grid = grid
        self._profile = profile
        self._rate = rate
        self.values = check_scalar(values if values is not None else profile(0.0), grid)
        self._static_sups = None

    @property
    def is_static(self) -> bool:
        return self._profile is None

    def at(self, t: float = 0.0) -> np.ndarray:
        if self._profile is None:
            return self.values
        return check_scalar(self._profile(t), self.grid)

    def rate(self, t: float = 0.0) -> np.ndarray | None:
        if self._rate is None:
            return None
        r = check_scalar(self._rate(t), self.grid)
        return r - integrate(r, self.grid) / self.grid.volume

    def sup_derivatives(self, t: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis sup norms of the first and pure second derivatives."""
        if self.is_static and self._static_sups is not None:
            return self._static_sups
        first, second = partial_derivatives(self.at(t), self.grid)
        sups = (np.array([sup_norm(d) for d in first]), np.array([sup_norm(d) for d in second]))
        if self.is_static:
            self._static_sups = sups
        return sups


def tracking_von_mises(kappa: float, mu0: float, mu_rate: float, grid: Grid1D) -> ReferenceDensity:
    """Von Mises target whose mean moves as ``mu0 + mu_rate * t``."""

    def profile(t):
        return von_mises_1d(kappa, mu0 + mu_rate * t, grid)

    def rate(t):
        mu = mu0 + mu_rate * t
        return mu_rate * kappa * np.sin(grid.centers - mu) * profile(t)

    return ReferenceDensity(grid, profile=profile, rate=rate)


class GridDensityEstimator(BaseEstimator):
    """Histogram-plus-Gaussian-filter density estimate on a fixed grid.

    Parameters
    ----------
    grid : Grid1D or Grid2D
    bandwidth : float or None
        Standard deviation of the Gaussian filter in length units; ``None``
        uses twice the cell size.
    """

    def __init__(self, grid=None, bandwidth=None):
        self.grid = grid
        self.bandwidth = bandwidth

    def fit(self, X, y=None):
        if self.grid is None:
            raise ValueError("GridDensityEstimator needs a grid")
        X = check_positions(X, self.grid)
        self.density_ = estimate_density(X, self.grid, self.bandwidth)
        self.n_samples_ = X.shape[0]
        return self

    def evaluate(self, X) -> np.ndarray:
        """Interpolate the fitted density at ``X``."""
        from .micro import sample_field

        if not hasattr(self, "density_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("call fit() first")
        return sample_field(self.density_, X, self.grid)

"""Robust macroscopic feedback law.

The control source is

    q = -k_p e - k_s sign_eps(e) + alpha  [- d(rho_d)/dt when tracking]

with ``e = rho_d - rho``.  ``alpha`` makes the recovered flux satisfy the
boundary conditions; the flux ``Phi`` with ``div(Phi) = q`` is recovered by
integration in 1-D and by a Poisson solve in 2-D, and the velocity field is
``U = Phi / rho``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .fields import ReferenceDensity
from .grid import Grid, Grid1D, check_scalar, diff_axis, integrate, sup_norm
from .poisson import COMPATIBILITY_TOL, CompatibilityError, recover_flux


class GainMode(str, enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


@dataclass(frozen=True)
class ControlGains:
    k_p: float = 1.0
    ks_safety: float = 1.1
    epsilon: float = 1e-3
    ks_mode: GainMode = GainMode.STATIC

    def __post_init__(self):
        if not self.k_p > 0:
            raise ValueError(f"k_p must be positive, got {self.k_p!r}")
        if not self.ks_safety > 1:
            raise ValueError(f"ks_safety must exceed 1, got {self.ks_safety!r}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon!r}")
        object.__setattr__(self, "ks_mode", GainMode(self.ks_mode))


@dataclass(frozen=True)
class DisturbanceBound:
    k_vec: tuple[float, ...]

    def __post_init__(self):
        k = tuple(float(v) for v in np.atleast_1d(self.k_vec))
        if any(v < 0 for v in k):
            raise ValueError(f"disturbance bounds must be nonnegative, got {k}")
        object.__setattr__(self, "k_vec", k)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.k_vec)


@dataclass(frozen=True)
class FluxBoundaryTerms:
    alpha: float
    B: float


def _bound(k) -> DisturbanceBound:
    return k if isinstance(k, DisturbanceBound) else DisturbanceBound(k)


def error_field(rho_d, rho, grid: Grid | None = None) -> np.ndarray:
    rho_d = np.asarray(rho_d, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if grid is not None:
        check_scalar(rho_d, grid)
        check_scalar(rho, grid)
    if rho_d.shape != rho.shape:
        raise ValueError(f"grid mismatch: {rho_d.shape} vs {rho.shape}")
    return rho_d - rho


def bound_A(reference: ReferenceDensity, D: float, k, t: float = 0.0) -> float:
    """sum_i K_i sup|d_i rho_d| + D sup|d_ii rho_d| from discrete derivatives."""
    k = _bound(k).array
    first, second = reference.sup_derivatives(t)
    if k.size == 1 and first.size > 1:
        k = np.full(first.size, k[0])
    if k.size != first.size:
        raise ValueError(f"need {first.size} disturbance bounds, got {k.size}")
    return float(np.sum(k * first + D * second))


def error_gradient_sup(e, grid: Grid) -> np.ndarray:
    e = check_scalar(e, grid)
    return np.array([sup_norm(diff_axis(e, h, ax, grid.periodic)) for ax, h in enumerate(grid.spacing)])


def switching_gain(gains: ControlGains, A: float, k, e=None, grid: Grid | None = None) -> float:
    if A < 0:
        raise ValueError("A must be nonnegative")
    ks = gains.ks_safety * A
    if gains.ks_mode is GainMode.DYNAMIC:
        if e is None or grid is None:
            raise ValueError("dynamic gain needs the error field and its grid")
        kv = _bound(k).array
        sups = error_gradient_sup(e, grid)
        if kv.size == 1:
            kv = np.full(sups.size, kv[0])
        ks += float(np.sum(kv * sups))
    return ks


def regularized_sign(e, epsilon: float) -> np.ndarray:
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return np.tanh(np.asarray(e, dtype=float) / epsilon)


def alpha_periodic(k_s: float, sgn_e, grid: Grid) -> float:
    """Offset making ``-k_s sgn_e + alpha`` integrate to zero."""
    if not grid.periodic:
        raise ValueError("alpha_periodic needs a periodic grid")
    return k_s * integrate(sgn_e, grid) / grid.volume


def alpha_compatible(k_s: float, sgn_e, grid: Grid) -> float:
    """Same offset on any boundary kind; used for the 2-D Poisson closure."""
    return k_s * integrate(sgn_e, grid) / grid.volume


def cumulative_integral(f, grid: Grid1D) -> np.ndarray:
    """Integral of ``f`` from -a to each cell centre (midpoint rule)."""
    f = check_scalar(f, grid)
    return grid.dx * (np.cumsum(f) - 0.5 * f)


def face_values(G, grid: Grid1D) -> tuple[float, float]:
    """Quadratic extrapolation of cell-centred values to x = -a and x = +a."""
    G = check_scalar(G, grid)
    left = (15.0 * G[0] - 10.0 * G[1] + 3.0 * G[2]) / 8.0
    right = (15.0 * G[-1] - 10.0 * G[-2] + 3.0 * G[-3]) / 8.0
    return float(left), float(right)


def alpha_B_reflective(G, grid: Grid1D) -> FluxBoundaryTerms:
    if grid.ndim != 1:
        raise ValueError("alpha_B_reflective needs a Grid1D")
    if grid.periodic:
        raise ValueError("alpha_B_reflective needs a reflective grid")
    a = grid.half_width
    g_left, g_right = face_values(G, grid)
    return FluxBoundaryTerms(alpha=(g_left - g_right) / (2 * a), B=-(g_left + g_right) / 2)


def control_source_q(e, gains: ControlGains, k_s: float, alpha: float, feedforward=None) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    q = -gains.k_p * e - k_s * regularized_sign(e, gains.epsilon) + alpha
    if feedforward is not None:
        feedforward = np.asarray(feedforward, dtype=float)
        if feedforward.shape != e.shape:
            raise ValueError("grid mismatch between error and feedforward")
        q = q - feedforward
    return q


def flux_from_q_1d(q, grid: Grid1D, return_terms: bool = False, gauge: str = "left"):
    """Recover ``Phi`` with ``dPhi/dx = q`` (plus ``alpha`` on reflective grids).

    Periodic grids: ``q`` must be mean-free. The integration constant ``B``
    is free; ``gauge="left"`` takes ``B = 0`` (integral from -a) and
    ``gauge="zero_mean"`` picks the mean-free flux, matching the 2-D
    spectral solution.
    Reflective grids: ``q`` is taken without ``alpha``; ``alpha`` and ``B`` are
    chosen so the extrapolated flux vanishes on both walls.
    """
    if grid.ndim != 1:
        raise ValueError("flux_from_q_1d needs a Grid1D")
    q = check_scalar(q, grid)
    G = cumulative_integral(q, grid)
    if grid.periodic:
        total = integrate(q, grid)
        if abs(total) > COMPATIBILITY_TOL:
            raise CompatibilityError(
                f"periodic flux recovery needs a mean-free q; integral is {total:.3e}"
            )
        if gauge == "left":
            B = 0.0
        elif gauge == "zero_mean":
            B = -integrate(G, grid) / grid.volume
        else:
            raise ValueError(f"unknown flux gauge {gauge!r}")
        terms = FluxBoundaryTerms(alpha=0.0, B=B)
        flux = G + B
    else:
        terms = alpha_B_reflective(G, grid)
        flux = G + terms.alpha * grid.centers + terms.B
    return (flux, terms) if return_terms else flux


def velocity_from_flux(flux, rho, rho_floor: float) -> np.ndarray:
    if not rho_floor > 0:
        raise ValueError("rho_floor must be positive")
    flux = np.asarray(flux, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if flux.shape[-rho.ndim :] != rho.shape:
        raise ValueError("flux and density live on different grids")
    return flux / np.maximum(rho, rho_floor)


@dataclass
class ControlOutput:
    error: np.ndarray
    k_s: float
    alpha: float
    q: np.ndarray
    flux: np.ndarray
    velocity: np.ndarray
    B: float = 0.0


class DensityController(BaseEstimator):
    """Feedback law mapping a measured density to a velocity field.

    ``fit`` takes the desired density (a :class:`ReferenceDensity` or an
    array on ``grid``) and caches the disturbance/diffusion bound ``A_``.
    ``transform`` maps a measured density to the velocity field ``U``;
    :meth:`compute` returns every intermediate quantity.

    Parameters
    ----------
    grid : Grid1D or Grid2D
    k_p : float
        Proportional gain.
    ks_safety : float
        Multiplier (> 1) on ``A`` in the switching gain.
    ks_mode : {"static", "dynamic"}
        ``dynamic`` adds ``sum_i K_i sup|d_i e|`` at every call.
    epsilon : float
        Width of the ``tanh`` regularisation of the sign function.
    diffusion : float
        Diffusion coefficient D of the agents.
    disturbance : float or sequence of float
        Per-axis bound K_i on the unknown drift.
    rho_floor : float or None
        Lower clamp on the density when dividing the flux; ``None`` uses
        ``1e-6 / |Omega|``.
    strict : bool
        Raise instead of warning when the 2-D source is not mean-free.
    flux_gauge : {"left", "zero_mean"}
        Integration constant of the periodic 1-D flux, see
        :func:`flux_from_q_1d`.
    """

    def __init__(
        self,
        grid=None,
        k_p=1.0,
        ks_safety=1.1,
        ks_mode="static",
        epsilon=1e-3,
        diffusion=0.0,
        disturbance=0.0,
        rho_floor=None,
        strict=False,
        flux_gauge="left",
    ):
        self.grid = grid
        self.k_p = k_p
        self.ks_safety = ks_safety
        self.ks_mode = ks_mode
        self.epsilon = epsilon
        self.diffusion = diffusion
        self.disturbance = disturbance
        self.rho_floor = rho_floor
        self.strict = strict
        self.flux_gauge = flux_gauge

    @property
    def gains(self) -> ControlGains:
        return ControlGains(self.k_p, self.ks_safety, self.epsilon, self.ks_mode)

    def fit(self, reference, y=None):
        if self.grid is None:
            raise ValueError("DensityController needs a grid")
        if not isinstance(reference, ReferenceDensity):
            reference = ReferenceDensity(self.grid, values=reference)
        if reference.grid is not self.grid:
            raise ValueError("reference density lives on a different grid")
        self.gains_ = self.gains
        self.bound_ = _bound(self.disturbance)
        if len(self.bound_.k_vec) not in (1, self.grid.ndim):
            raise ValueError(f"disturbance needs 1 or {self.grid.ndim} components")
        self.reference_ = reference
        self.A_ = bound_A(reference, self.diffusion, self.bound_)
        self.rho_floor_ = self.rho_floor if self.rho_floor is not None else 1e-6 / self.grid.volume
        return self

    def _check_fitted(self):
        if not hasattr(self, "reference_"):
            raise NotFittedError("call fit() with the desired density first")

    def bound_at(self, t: float) -> float:
        self._check_fitted()
        if self.reference_.is_static:
            return self.A_
        return bound_A(self.reference_, self.diffusion, self.bound_, t)

    def compute(self, rho, t: float = 0.0) -> ControlOutput:
        self._check_fitted()
        grid = self.grid
        rho = check_scalar(rho, grid)
        gains = self.gains_
        e = error_field(self.reference_.at(t), rho)
        A = self.bound_at(t)
        k_s = switching_gain(gains, A, self.bound_, e, grid)
        sgn = regularized_sign(e, gains.epsilon)
        ff = self.reference_.rate(t)
        B = 0.0
        if grid.ndim == 1 and not grid.periodic:
            q0 = control_source_q(e, gains, k_s, 0.0, ff)
            flux, terms = flux_from_q_1d(q0, grid, return_terms=True)
            alpha, B = terms.alpha, terms.B
            q = q0 + alpha
        else:
            alpha = alpha_compatible(k_s, sgn, grid)
            q = control_source_q(e, gains, k_s, alpha, ff)
            if grid.ndim == 1:
                # remove roundoff so the compatibility check sees an exact zero mean
                q = q - integrate(q, grid) / grid.volume
                flux, terms = flux_from_q_1d(q, grid, return_terms=True, gauge=self.flux_gauge)
                B = terms.B
            else:
                flux = recover_flux(q, grid, strict=self.strict)
        velocity = velocity_from_flux(flux, rho, self.rho_floor_)
        return ControlOutput(e, k_s, alpha, q, flux, velocity, B)

    def transform(self, rho, t: float = 0.0) -> np.ndarray:
        return self.compute(rho, t).velocity

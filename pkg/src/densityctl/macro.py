"""Finite-volume steppers for the bounding advection-diffusion dynamics

    rho_t + div(rho (U + s*k)) = D lap(rho),   s in {+1, -1} per axis,

and the closed-loop macroscopic driver.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .control import DensityController
from .grid import Grid, Grid1D, Grid2D, check_scalar, check_vector, integrate, l2_norm

# positivity of the unsplit Lax-Friedrichs update: sum_i |v_i| dt / h_i <= 1
ADVECTIVE_CFL_LIMIT = {1: 1.0, 2: 1.0}
DIFFUSIVE_LIMIT = 0.5


class CflError(RuntimeError):
    def __init__(self, report: "CflReport", message: str):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class CflReport:
    advective: float
    diffusive: float

    def check(self, ndim: int, explicit_diffusion: bool):
        limit = ADVECTIVE_CFL_LIMIT[ndim]
        if self.advective > limit:
            raise CflError(self, f"advective CFL {self.advective:.4g} exceeds {limit}")
        if explicit_diffusion and self.diffusive > DIFFUSIVE_LIMIT:
            raise CflError(self, f"diffusive number {self.diffusive:.4g} exceeds {DIFFUSIVE_LIMIT}")


@dataclass(frozen=True)
class MacroState:
    grid: Grid
    rho: np.ndarray
    t: float = 0.0
    drift_sign: tuple[int, ...] = (1,)
    k: tuple[float, ...] = (0.0,)
    D: float = 0.0

    def __post_init__(self):
        rho = check_scalar(self.rho, self.grid)
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        n = self.grid.ndim
        sign = tuple(int(s) for s in np.broadcast_to(np.atleast_1d(self.drift_sign), (n,)))
        if any(s not in (1, -1) for s in sign):
            raise ValueError(f"drift_sign entries must be +1 or -1, got {sign}")
        k = tuple(float(v) for v in np.broadcast_to(np.atleast_1d(self.k), (n,)))
        object.__setattr__(self, "drift_sign", sign)
        object.__setattr__(self, "k", k)

    @property
    def drift(self) -> np.ndarray:
        return np.asarray(self.drift_sign) * np.asarray(self.k)

    @property
    def mass(self) -> float:
        return integrate(self.rho, self.grid)


def cfl_report(grid: Grid, velocity, drift, D: float, dt: float) -> CflReport:
    velocity = np.asarray(velocity, dtype=float).reshape((grid.ndim, *grid.shape))
    courant = sum(np.abs(velocity[ax] + drift[ax]) * dt / h for ax, h in enumerate(grid.spacing))
    adv = float(np.max(courant))
    diff = max(D * dt / h**2 for h in grid.spacing)
    return CflReport(adv, diff)


def _face_flux(rho, v, dx, dt, axis, periodic, viscosity):
    """Lax-Friedrichs flux at the interior (and, if periodic, wrapped) faces.

    Returns an array with one more entry than ``rho`` along ``axis``;
    entry ``j`` is the flux through the left face of cell ``j``.
    """
    f = rho * v
    rho_r = np.roll(rho, -1, axis=axis)
    f_r = np.roll(f, -1, axis=axis)
    if viscosity == "rusanov":
        lam = np.maximum(np.abs(v), np.abs(np.roll(v, -1, axis=axis)))
    elif viscosity == "classic":
        lam = dx / dt
    else:
        raise ValueError(f"unknown viscosity {viscosity!r}")
    # flux through the right face of each cell
    F = 0.5 * (f + f_r) - 0.5 * lam * (rho_r - rho)
    n = rho.shape[axis]
    shape = list(rho.shape)
    shape[axis] = n + 1
    out = np.zeros(shape)
    right = [slice(None)] * rho.ndim
    right[axis] = slice(1, n + 1)
    out[tuple(right)] = F
    first = [slice(None)] * rho.ndim
    first[axis] = 0
    last = [slice(None)] * rho.ndim
    last[axis] = n - 1
    if periodic:
        out[tuple(first)] = np.take(F, n - 1, axis=axis)
    else:
        out[tuple(first)] = 0.0
        out_last = [slice(None)] * rho.ndim
        out_last[axis] = n
        out[tuple(out_last)] = 0.0
    return out


def _diffusive_face_flux(rho, D, dx, axis, periodic):
    n = rho.shape[axis]
    grad = (np.roll(rho, -1, axis=axis) - rho) / dx
    shape = list(rho.shape)
    shape[axis] = n + 1
    out = np.zeros(shape)
    right = [slice(None)] * rho.ndim
    right[axis] = slice(1, n + 1)
    out[tuple(right)] = -D * grad
    first = [slice(None)] * rho.ndim
    first[axis] = 0
    if periodic:
        out[tuple(first)] = -D * np.take(grad, n - 1, axis=axis)
    else:
        out[tuple(first)] = 0.0
        last = [slice(None)] * rho.ndim
        last[axis] = n
        out[tuple(last)] = 0.0
    return out


def _flux_divergence(F, dx, axis):
    n = F.shape[axis] - 1
    hi = [slice(None)] * F.ndim
    hi[axis] = slice(1, n + 1)
    lo = [slice(None)] * F.ndim
    lo[axis] = slice(0, n)
    return (F[tuple(hi)] - F[tuple(lo)]) / dx


def step_1d(state: MacroState, U, dt: float, viscosity: str = "rusanov") -> MacroState:
    """Lax-Friedrichs advection with explicit centred diffusion."""
    grid = state.grid
    if grid.ndim != 1:
        raise ValueError("step_1d needs a 1-D state")
    U = check_scalar(U, grid)
    v = U + state.drift[0]
    cfl_report(grid, U, state.drift, state.D, dt).check(1, explicit_diffusion=True)
    rho = state.rho
    dx = grid.dx
    F = _face_flux(rho, v, dx, dt, 0, grid.periodic, viscosity)
    if state.D:
        F = F + _diffusive_face_flux(rho, state.D, dx, 0, grid.periodic)
    rho_new = rho - dt * _flux_divergence(F, dx, 0)
    return replace(state, rho=rho_new, t=state.t + dt)


def advect_2d(rho, velocity, drift, grid: Grid2D, dt: float, viscosity: str = "rusanov") -> np.ndarray:
    """Unsplit Lax-Friedrichs update for the advective part only."""
    out = rho.copy()
    for ax, h in enumerate(grid.spacing):
        v = velocity[ax] + drift[ax]
        F = _face_flux(rho, v, h, dt, ax, grid.periodic, viscosity)
        out -= dt * _flux_divergence(F, h, ax)
    return out


def _laplacian_matrix(n: int, dx: float, periodic: bool) -> sparse.csc_matrix:
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    L = sparse.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="lil")
    if periodic:
        L[0, n - 1] = 1.0
        L[n - 1, 0] = 1.0
    else:
        # zero-flux walls
        L[0, 0] = -1.0
        L[n - 1, n - 1] = -1.0
    return (L / dx**2).tocsc()


@lru_cache(maxsize=16)
def _cn_factor(n: int, dx: float, coef: float, periodic: bool):
    L = _laplacian_matrix(n, dx, periodic)
    implicit = splu((sparse.identity(n, format="csc") - coef * L).tocsc())
    explicit = (sparse.identity(n, format="csr") + coef * L).tocsr()
    return implicit, explicit


def crank_nicolson_2d(rho, D: float, grid: Grid2D, dt: float) -> np.ndarray:
    """Approximately factorised (ADI) Crank-Nicolson diffusion step.

    Solves ``(I - c L1)(I - c L2) rho' = (I + c L1)(I + c L2) rho`` with
    ``c = D dt / 2``; L1 and L2 commute on a tensor grid, so every separable
    Fourier mode decays by exactly the Crank-Nicolson factor.
    """
    if D == 0:
        return rho
    c = 0.5 * D * dt
    (n1, n2), (dx1, dx2) = grid.shape, grid.spacing
    imp1, exp1 = _cn_factor(n1, dx1, c, grid.periodic)
    imp2, exp2 = _cn_factor(n2, dx2, c, grid.periodic)
    rhs = exp1 @ (exp2 @ rho.T).T
    tmp = imp1.solve(rhs)
    return imp2.solve(tmp.T).T


def step_2d(
    state: MacroState, U, dt: float, viscosity: str = "rusanov", splitting: str = "lie"
) -> MacroState:
    grid = state.grid
    if grid.ndim != 2:
        raise ValueError("step_2d needs a 2-D state")
    U = check_vector(U, grid)
    drift = state.drift
    cfl_report(grid, U, drift, state.D, dt).check(2, explicit_diffusion=False)
    rho = np.array(state.rho)
    if splitting == "lie":
        rho = advect_2d(rho, U, drift, grid, dt, viscosity)
        rho = crank_nicolson_2d(rho, state.D, grid, dt)
    elif splitting == "strang":
        rho = crank_nicolson_2d(rho, state.D, grid, dt / 2)
        rho = advect_2d(rho, U, drift, grid, dt, viscosity)
        rho = crank_nicolson_2d(rho, state.D, grid, dt / 2)
    else:
        raise ValueError(f"unknown splitting {splitting!r}")
    return replace(state, rho=rho, t=state.t + dt)


def metric_columns(ndim: int, micro: bool = False) -> list[str]:
    cols = ["t", "l2_error"]
    cols += ["l2_U"] if ndim == 1 else [f"l2_U{i + 1}" for i in range(ndim)]
    cols += ["mass", "ks", "alpha", "cfl"]
    if micro:
        cols += ["mean_abs_u", "n_agents"]
    return cols


def velocity_norms(velocity, grid: Grid) -> dict[str, float]:
    if grid.ndim == 1:
        return {"l2_U": l2_norm(velocity, grid)}
    return {f"l2_U{i + 1}": l2_norm(velocity[i], grid) for i in range(grid.ndim)}


@dataclass
class MacroResult:
    metrics: list[dict] = field(default_factory=list)
    state: MacroState | None = None

    def series(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.metrics])


def run_closed_loop_macro(
    controller: DensityController,
    state: MacroState,
    dt: float,
    t_final: float,
    record_every: int = 1,
    viscosity: str = "rusanov",
    splitting: str = "lie",
) -> MacroResult:
    """Close the loop on the bounding PDE: control from the current density,
    then one PDE step; the control is recomputed at every step."""
    grid = state.grid
    if controller.grid is not grid:
        raise ValueError("controller and state use different grids")
    n_steps = int(round(t_final / dt))
    t0 = state.t
    result = MacroResult()
    for i in range(n_steps + 1):
        t = t0 + i * dt
        state = replace(state, t=t)
        out = controller.compute(state.rho, t)
        cfl = cfl_report(grid, out.velocity, state.drift, state.D, dt)
        if i % record_every == 0 or i == n_steps:
            row = {"t": t, "l2_error": l2_norm(out.error, grid)}
            row.update(velocity_norms(out.velocity, grid))
            row.update({"mass": state.mass, "ks": out.k_s, "alpha": out.alpha, "cfl": cfl.advective})
            result.metrics.append(row)
        if i == n_steps:
            break
        if grid.ndim == 1:
            state = step_1d(state, out.velocity, dt, viscosity)
        else:
            state = step_2d(state, out.velocity, dt, viscosity, splitting)
    result.state = state
    return result

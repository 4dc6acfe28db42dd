"""Agent-level simulation: drift models, spatial sampling of the velocity
field, Euler-Maruyama stepping and the closed-loop microscopic driver."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .control import DensityController
from .fields import estimate_density
from .grid import Grid, integrate, l2_norm
from ._validation import check_positions
from .macro import cfl_report, velocity_norms

# stream tags, so that positions, frequencies and noise never share draws
INIT_TAG, PARAM_TAG, NOISE_TAG = 0, 1, 2


def stream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    """Counter-based generator for (seed, tag), advanced to block ``index``.

    Draws are consumed in agent order, so agent ``i`` receives the same
    numbers whatever the population size.
    """
    bitgen = np.random.Philox(np.random.SeedSequence([int(seed), int(tag)]))
    if index:
        bitgen = bitgen.jumped(int(index))
    return np.random.Generator(bitgen)


# -- drift models -----------------------------------------------------------


@dataclass(frozen=True)
class NoDrift:
    ndim: int = 1

    def __call__(self, positions: np.ndarray, t: float = 0.0) -> np.ndarray:
        return np.zeros_like(positions)

    @property
    def declared_bound(self) -> np.ndarray:
        return np.zeros(self.ndim)

    clip = None


@dataclass(frozen=True)
class HeterogeneousOscillator:
    """Constant natural frequencies ``omega_i`` acting as the drift."""

    omegas: np.ndarray
    bound: float

    @classmethod
    def uniform(cls, n_agents: int, k_dist: float, seed: int, bound: float | None = None):
        """Frequencies drawn from U(-k_dist, k_dist); ``bound`` defaults to k_dist."""
        u = stream(seed, PARAM_TAG).random(n_agents)
        omegas = k_dist * (2.0 * u - 1.0)
        return cls(omegas, k_dist if bound is None else bound)

    def __call__(self, positions: np.ndarray, t: float = 0.0) -> np.ndarray:
        return self.omegas[: positions.shape[0], None].copy()

    @property
    def declared_bound(self) -> np.ndarray:
        return np.array([self.bound])

    clip = None


def optimal_velocity(s, v_max: float, delta_s: float, beta: float):
    s = np.asarray(s, dtype=float)
    tb = np.tanh(beta)
    return v_max * (np.tanh(s / delta_s - beta) + tb) / (1.0 + tb)


@dataclass(frozen=True)
class OptimalVelocityTraffic:
    """Car-following drift on a ring in the zero-relaxation-time limit."""

    v_max: float
    delta_s: float
    beta: float
    ring_length: float

    def gaps(self, positions: np.ndarray) -> np.ndarray:
        x = positions[:, 0]
        if x.size < 2:
            raise ValueError("traffic drift needs at least two vehicles")
        order = np.argsort(x, kind="stable")
        xs = x[order]
        gap_sorted = np.empty_like(xs)
        gap_sorted[:-1] = xs[1:] - xs[:-1]
        gap_sorted[-1] = xs[0] + self.ring_length - xs[-1]
        out = np.empty_like(x)
        out[order] = gap_sorted
        return out

    def __call__(self, positions: np.ndarray, t: float = 0.0) -> np.ndarray:
        return optimal_velocity(self.gaps(positions), self.v_max, self.delta_s, self.beta)[:, None]

    @property
    def declared_bound(self) -> np.ndarray:
        return np.array([self.v_max])

    @property
    def clip(self) -> tuple[float, float]:
        return (0.0, self.v_max)


@dataclass(frozen=True)
class TerrainGradient:
    """Gradient of two Gaussian hills ``h exp(-w |x - c|^2)``."""

    h1: float = 5.0
    h2: float = 10.0
    centers: tuple = ((np.pi / 2, np.pi / 2), (-np.pi / 2, -np.pi / 2))
    width: float = 2.0
    bound: tuple | None = None

    def potential(self, positions: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(positions)
        total = np.zeros(x.shape[0])
        for h, c in zip((self.h1, self.h2), self.centers):
            r2 = np.sum((x - np.asarray(c)) ** 2, axis=1)
            total += h * np.exp(-self.width * r2)
        return total

    def __call__(self, positions: np.ndarray, t: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(positions)
        g = np.zeros_like(x)
        for h, c in zip((self.h1, self.h2), self.centers):
            d = x - np.asarray(c)
            r2 = np.sum(d * d, axis=1)
            g += (-2.0 * self.width * h * np.exp(-self.width * r2))[:, None] * d
        return g

    @property
    def declared_bound(self) -> np.ndarray:
        if self.bound is not None:
            return np.asarray(self.bound, dtype=float)
        return np.array([self.h1, self.h2])

    @property
    def analytic_sup(self) -> float:
        """Largest single-hill slope, attained at radius 1/(2 w)^(1/2)."""
        return max(self.h1, self.h2) * np.sqrt(2.0 * self.width) * np.exp(-0.5)

    clip = None


@dataclass(frozen=True)
class DriftBoundReport:
    max_abs: np.ndarray
    bound: np.ndarray

    @property
    def conforming(self) -> bool:
        return bool(np.all(self.max_abs <= self.bound))


def drift_bound_report(drift_model, positions, t: float = 0.0, bound=None) -> DriftBoundReport:
    """Compare sampled per-axis ``max |g|`` with a bound (default: the model's own)."""
    g = np.atleast_2d(drift_model(np.atleast_2d(positions), t))
    k = drift_model.declared_bound if bound is None else np.atleast_1d(np.asarray(bound, dtype=float))
    k = np.broadcast_to(k, (g.shape[1],))
    return DriftBoundReport(np.max(np.abs(g), axis=0), np.array(k))


# -- sampling and stepping --------------------------------------------------


def _axis_weights(x, a, h, n, periodic):
    s = (x + a) / h - 0.5
    if periodic:
        i0 = np.floor(s).astype(np.int64)
        w = s - i0
        return np.mod(i0, n), np.mod(i0 + 1, n), w
    s = np.clip(s, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(s).astype(np.int64), n - 2)
    return i0, i0 + 1, s - i0


def sample_field(U, positions, grid: Grid) -> np.ndarray:
    """Multilinear interpolation of a scalar or vector field at positions.

    Scalar fields return shape ``(N,)``; vector fields ``(N, ndim)``.
    """
    positions = check_positions(positions, grid)
    U = np.asarray(U, dtype=float)
    vector = U.ndim == grid.ndim + 1
    comps = U if vector else U[None]
    a = grid.half_width
    parts = [
        _axis_weights(positions[:, ax], a, h, n, grid.periodic)
        for ax, (h, n) in enumerate(zip(grid.spacing, grid.shape))
    ]
    out = np.zeros((positions.shape[0], comps.shape[0]))
    if grid.ndim == 1:
        (i0, i1, w), = parts
        for c, comp in enumerate(comps):
            out[:, c] = (1 - w) * comp[i0] + w * comp[i1]
    else:
        (i0, i1, w), (j0, j1, v) = parts
        for c, comp in enumerate(comps):
            out[:, c] = (
                (1 - w) * (1 - v) * comp[i0, j0]
                + w * (1 - v) * comp[i1, j0]
                + (1 - w) * v * comp[i0, j1]
                + w * v * comp[i1, j1]
            )
    return out if vector else out[:, 0]


def sample_velocity(U, positions, grid: Grid) -> np.ndarray:
    """Per-agent control input ``u_i = U(x_i)`` as an ``(N, ndim)`` array."""
    u = sample_field(U, positions, grid)
    return u[:, None] if u.ndim == 1 else u


def confine(x: np.ndarray, grid: Grid) -> np.ndarray:
    """Wrap (periodic) or specularly reflect (reflective) into [-a, a]."""
    a = grid.half_width
    if grid.periodic:
        return np.mod(x + a, 2 * a) - a
    y = np.mod(x + a, 4 * a)
    return np.where(y > 2 * a, 4 * a - y, y) - a


@dataclass(frozen=True)
class AgentPopulation:
    positions: np.ndarray
    seed: int = 0
    step: int = 0

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] < 1:
            raise ValueError("a population needs at least one agent")
        x.setflags(write=False)
        object.__setattr__(self, "positions", x)

    @property
    def n_agents(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def uniform(cls, n_agents: int, grid: Grid, seed: int = 0) -> "AgentPopulation":
        a = grid.half_width
        u = stream(seed, INIT_TAG).random((n_agents, grid.ndim))
        return cls(-a + 2 * a * u, seed)

    def noise(self, substep: int = 0, substeps: int = 1) -> np.ndarray:
        index = self.step * substeps + substep + 1
        return stream(self.seed, NOISE_TAG, index).standard_normal(self.positions.shape)


def step_agents(
    pop: AgentPopulation,
    drift_model,
    U,
    D: float,
    dt: float,
    grid: Grid,
    t: float = 0.0,
    return_control: bool = False,
    substeps: int = 1,
):
    """One Euler-Maruyama step ``x += (u + g) dt + sqrt(2 D dt) xi``.

    If the drift model defines ``clip``, the total velocity ``u + g`` is
    saturated to that interval and the returned control is the applied one.
    With ``substeps > 1`` the field ``U`` is held over ``dt`` while agents
    integrate with step ``dt / substeps``, resampling ``U`` and the drift at
    every substep (for stiff drifts such as car following). The returned
    control is the one applied at the first substep; the returned drift is
    the per-axis maximum of ``|g|`` over the substeps.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    h = dt / substeps
    x = pop.positions
    u_first = None
    g_max = np.zeros(grid.ndim)
    for k in range(substeps):
        u = sample_velocity(U, x, grid)
        g = drift_model(x, t + k * h)
        total = u + g
        if drift_model.clip is not None:
            total = np.clip(total, *drift_model.clip)
            u = total - g
        if u_first is None:
            u_first = u
        g_max = np.maximum(g_max, np.max(np.abs(g), axis=0))
        x_new = x + total * h
        if D > 0:
            x_new = x_new + np.sqrt(2.0 * D * h) * pop.noise(k, substeps)
        x = confine(x_new, grid)
    new = replace(pop, positions=x, step=pop.step + 1)
    return (new, u_first, g_max) if return_control else new


@dataclass
class MicroResult:
    metrics: list[dict] = field(default_factory=list)
    population: AgentPopulation | None = None
    snapshots: list[tuple[float, np.ndarray]] = field(default_factory=list)
    max_drift: np.ndarray | None = None
    density: np.ndarray | None = None

    def series(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.metrics])


def run_closed_loop_micro(
    controller: DensityController,
    population: AgentPopulation,
    drift_model,
    D: float,
    dt: float,
    t_final: float,
    bandwidth: float | None = None,
    record_every: int = 1,
    snapshot_every: int | None = None,
    substeps: int = 1,
) -> MicroResult:
    grid = controller.grid
    n_steps = int(round(t_final / dt))
    result = MicroResult()
    k_decl = np.broadcast_to(controller.bound_.array, (grid.ndim,))
    max_drift = np.zeros(grid.ndim)
    for i in range(n_steps + 1):
        t = i * dt
        rho = estimate_density(population.positions, grid, bandwidth)
        out = controller.compute(rho, t)
        if snapshot_every and (i % snapshot_every == 0 or i == n_steps):
            result.snapshots.append((t, population.positions.copy()))
        if i == n_steps:
            u = sample_velocity(out.velocity, population.positions, grid)
        else:
            population, u, g = step_agents(
                population, drift_model, out.velocity, D, dt, grid, t,
                return_control=True, substeps=substeps,
            )
            max_drift = np.maximum(max_drift, g)
        if i % record_every == 0 or i == n_steps:
            cfl = cfl_report(grid, out.velocity, k_decl, D, dt)
            row = {"t": t, "l2_error": l2_norm(out.error, grid)}
            row.update(velocity_norms(out.velocity, grid))
            row.update(
                {
                    "mass": integrate(rho, grid),
                    "ks": out.k_s,
                    "alpha": out.alpha,
                    "cfl": cfl.advective,
                    "mean_abs_u": float(np.mean(np.linalg.norm(u, axis=1))),
                    "n_agents": population.n_agents,
                }
            )
            result.metrics.append(row)
    result.population = population
    result.max_drift = max_drift
    result.density = rho
    return result

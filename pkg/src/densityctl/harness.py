"""Scenario files, single runs, sweeps and the exponential-bound check.

A scenario is one YAML document. Every key is validated; unknown keys and
keys that do not apply to the chosen variant are rejected with the line
they appear on.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .control import DensityController
from .fields import (
    ReferenceDensity,
    bivariate_von_mises,
    density_from_image,
    tracking_von_mises,
    uniform_density,
    von_mises_1d,
)
from .grid import BoundaryKind, Grid1D, Grid2D
from .imageio import read_image, write_raw_matrix
from .macro import (
    ADVECTIVE_CFL_LIMIT,
    DIFFUSIVE_LIMIT,
    MacroState,
    metric_columns,
    run_closed_loop_macro,
)
from .micro import (
    AgentPopulation,
    HeterogeneousOscillator,
    NoDrift,
    OptimalVelocityTraffic,
    TerrainGradient,
    run_closed_loop_micro,
)

log = logging.getLogger(__name__)

BUNDLED = ("macro1d", "osc1d", "osc1d_kdist_sweep", "macro2d", "traffic_ring", "ugv_terrain")


class ScenarioError(ValueError):
    """Invalid scenario; ``field`` is the dotted path, ``line`` 1-based or None."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if field:
            where.append(f"field '{field}'")
        if line:
            where.append(f"line {line}")
        super().__init__(f"{message}" + (f" ({', '.join(where)})" if where else ""))
        self.field = field
        self.line = line


# -- schema -----------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    dim: int
    cells: int | tuple[int, int]
    boundary: str = "periodic"
    half_width: float = math.pi


@dataclass(frozen=True)
class TargetSpec:
    kind: str
    kappa: float | None = None
    mu: float | None = None
    mu_rate: float | None = None
    kappa1: float | None = None
    kappa2: float | None = None
    nu: float | None = None
    image: str | None = None
    smoothing: float | None = None
    invert: bool | None = None


@dataclass(frozen=True)
class DriftSpec:
    kind: str = "none"
    k_dist: float | None = None
    v_max: float | None = None
    delta_s: float | None = None
    beta: float | None = None
    h1: float | None = None
    h2: float | None = None
    width: float | None = None


@dataclass(frozen=True)
class ControlSpec:
    k_p: float = 1.0
    ks_safety: float = 1.1
    ks_mode: str = "static"
    epsilon: float = 1e-3
    rho_floor: float | None = None
    flux_gauge: str = "left"


@dataclass(frozen=True)
class NumericsSpec:
    dt: float
    t_final: float
    viscosity: str = "rusanov"
    splitting: str = "lie"
    bandwidth: float | None = None
    v_scale: float | None = None


@dataclass(frozen=True)
class OutputSpec:
    record_every: int = 1
    snapshot_every: int | None = None


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple


@dataclass(frozen=True)
class Scenario:
    name: str
    mode: str
    grid: GridSpec
    target: TargetSpec
    numerics: NumericsSpec
    diffusion: float = 0.0
    disturbance: tuple[float, ...] = (0.0,)
    drift_sign: tuple[int, ...] = (1,)
    initial: TargetSpec | None = None
    drift: DriftSpec = field(default_factory=DriftSpec)
    control: ControlSpec = field(default_factory=ControlSpec)
    agents: int | None = None
    seed: int = 0
    output: OutputSpec = field(default_factory=OutputSpec)
    sweep: SweepSpec | None = None
    description: str = ""
    base_dir: str | None = field(default=None, compare=False)

    @property
    def hash(self) -> str:
        return scenario_hash(self)


_SECTIONS = {
    "grid": GridSpec,
    "target": TargetSpec,
    "initial": TargetSpec,
    "drift": DriftSpec,
    "control": ControlSpec,
    "numerics": NumericsSpec,
    "output": OutputSpec,
    "sweep": SweepSpec,
}

_TARGET_FIELDS = {
    "uniform": (set(), set()),
    "von_mises": ({"kappa"}, {"mu"}),
    "tracking_von_mises": ({"kappa", "mu_rate"}, {"mu"}),
    "bivariate_von_mises": ({"kappa1", "kappa2"}, {"mu", "nu"}),
    "image": ({"image", "smoothing"}, {"invert"}),
}
_TARGET_DIM = {"von_mises": 1, "tracking_von_mises": 1, "bivariate_von_mises": 2, "image": 2}

_DRIFT_FIELDS = {
    "none": (set(), set()),
    "oscillator": ({"k_dist"}, set()),
    "traffic": ({"v_max", "beta"}, {"delta_s"}),
    "terrain": (set(), {"h1", "h2", "width"}),
}
_DRIFT_MODE = {"oscillator": 1, "traffic": 1, "terrain": 2}


# -- YAML parsing with line numbers -----------------------------------------


def _key_lines(node, prefix="", out=None) -> dict[str, int]:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            _key_lines(v, path, out)
    return out


def _parse_yaml(text: str, source: str) -> tuple[dict, dict[str, int]]:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ScenarioError(f"cannot parse {source}: {getattr(exc, 'problem', exc)}", line=line) from exc
    if data is None:
        raise ScenarioError(f"cannot parse {source}: document is empty", line=1)
    if not isinstance(data, dict):
        raise ScenarioError(f"cannot parse {source}: top level must be a mapping", line=1)
    return data, _key_lines(node)


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)} - {"base_dir"}


def _build(cls, raw, path: str, lines: dict[str, int]):
    if not isinstance(raw, dict):
        raise ScenarioError("expected a mapping", path, lines.get(path))
    names = _field_names(cls)
    for key in raw:
        if key not in names:
            p = f"{path}.{key}" if path else str(key)
            raise ScenarioError(f"unknown key '{key}'", p, lines.get(p))
    required = {
        f.name
        for f in dataclasses.fields(cls)
        if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
    }
    for key in sorted(required - set(raw)):
        raise ScenarioError(f"missing required key '{key}'", f"{path}.{key}" if path else key, lines.get(path))
    kwargs = {}
    for key, value in raw.items():
        p = f"{path}.{key}" if path else key
        if cls is Scenario and key in _SECTIONS and value is not None:
            value = _build(_SECTIONS[key], value, p, lines)
        kwargs[key] = value
    return cls(**kwargs)


def _as_tuple(x) -> tuple:
    return tuple(x) if isinstance(x, (list, tuple)) else (x,)


def _num(value, path, lines, positive=False, nonneg=False, integer=False):
    ok_type = isinstance(value, (int, float)) and not isinstance(value, bool)
    if integer:
        ok_type = isinstance(value, int) and not isinstance(value, bool)
    if not ok_type or not math.isfinite(value):
        raise ScenarioError(f"expected a {'integer' if integer else 'number'}, got {value!r}", path, lines.get(path))
    if positive and not value > 0:
        raise ScenarioError(f"must be positive, got {value!r}", path, lines.get(path))
    if nonneg and value < 0:
        raise ScenarioError(f"must be nonnegative, got {value!r}", path, lines.get(path))
    return value


def _check_variant(spec, table: dict, section: str, lines) -> None:
    kind = spec.kind
    if kind not in table:
        raise ScenarioError(f"unknown kind '{kind}', expected one of {sorted(table)}", f"{section}.kind", lines.get(f"{section}.kind"))
    required, optional = table[kind]
    for f in dataclasses.fields(spec):
        if f.name == "kind":
            continue
        value = getattr(spec, f.name)
        path = f"{section}.{f.name}"
        if value is not None and f.name not in required | optional:
            raise ScenarioError(f"not used by {section} kind '{kind}'", path, lines.get(path))
        if value is None and f.name in required:
            raise ScenarioError(f"required by {section} kind '{kind}'", path, lines.get(f"{section}"))


def _normalise(sc: Scenario, lines: dict[str, int]) -> Scenario:
    """Type checks, cross-field checks and canonical forms."""
    L = lines
    if sc.mode not in ("macro", "micro"):
        raise ScenarioError(f"mode must be 'macro' or 'micro', got {sc.mode!r}", "mode", L.get("mode"))
    g = sc.grid
    if g.dim not in (1, 2):
        raise ScenarioError("dim must be 1 or 2", "grid.dim", L.get("grid.dim"))
    cells = _as_tuple(g.cells)
    if len(cells) == 1 and g.dim == 2:
        cells = cells * 2
    if len(cells) != g.dim:
        raise ScenarioError(f"cells needs {g.dim} entries", "grid.cells", L.get("grid.cells"))
    for c in cells:
        _num(c, "grid.cells", L, positive=True, integer=True)
        if c < 4:
            raise ScenarioError("at least 4 cells per axis", "grid.cells", L.get("grid.cells"))
    try:
        BoundaryKind.coerce(g.boundary)
    except ValueError as exc:
        raise ScenarioError(str(exc), "grid.boundary", L.get("grid.boundary")) from None
    _num(g.half_width, "grid.half_width", L, positive=True)
    grid = GridSpec(g.dim, cells[0] if g.dim == 1 else tuple(cells), str(g.boundary), float(g.half_width))

    for section, spec in (("target", sc.target), ("initial", sc.initial)):
        if spec is None:
            continue
        _check_variant(spec, _TARGET_FIELDS, section, L)
        need = _TARGET_DIM.get(spec.kind)
        if need is not None and need != g.dim:
            raise ScenarioError(f"kind '{spec.kind}' needs a {need}-D grid", f"{section}.kind", L.get(f"{section}.kind"))
        if spec.kind in ("von_mises", "tracking_von_mises", "bivariate_von_mises") and g.boundary != "periodic":
            raise ScenarioError("von Mises profiles need a periodic grid", f"{section}.kind", L.get(f"{section}.kind"))
    if sc.initial is not None and sc.initial.kind in ("tracking_von_mises",):
        raise ScenarioError("initial density must be static", "initial.kind", L.get("initial.kind"))
    if sc.mode == "micro" and sc.initial is not None:
        raise ScenarioError("micro scenarios start from uniform positions", "initial", L.get("initial"))

    _num(sc.diffusion, "diffusion", L, nonneg=True)
    disturbance = tuple(float(_num(k, "disturbance", L, nonneg=True)) for k in _as_tuple(sc.disturbance))
    if len(disturbance) not in (1, g.dim):
        raise ScenarioError(f"disturbance needs 1 or {g.dim} entries", "disturbance", L.get("disturbance"))
    drift_sign = tuple(int(s) for s in _as_tuple(sc.drift_sign))
    if any(s not in (1, -1) for s in drift_sign) or len(drift_sign) not in (1, g.dim):
        raise ScenarioError("drift_sign entries must be +1 or -1", "drift_sign", L.get("drift_sign"))

    d = sc.drift
    _check_variant(d, _DRIFT_FIELDS, "drift", L)
    if d.kind != "none" and sc.mode != "micro":
        raise ScenarioError("agent drift models need mode 'micro'", "drift.kind", L.get("drift.kind"))
    need = _DRIFT_MODE.get(d.kind)
    if need is not None and need != g.dim:
        raise ScenarioError(f"drift '{d.kind}' needs a {need}-D grid", "drift.kind", L.get("drift.kind"))

    c = sc.control
    _num(c.k_p, "control.k_p", L, positive=True)
    _num(c.ks_safety, "control.ks_safety", L)
    if not c.ks_safety > 1:
        raise ScenarioError("ks_safety must exceed 1", "control.ks_safety", L.get("control.ks_safety"))
    _num(c.epsilon, "control.epsilon", L, positive=True)
    if c.ks_mode not in ("static", "dynamic"):
        raise ScenarioError("ks_mode must be 'static' or 'dynamic'", "control.ks_mode", L.get("control.ks_mode"))
    if c.flux_gauge not in ("left", "zero_mean"):
        raise ScenarioError("flux_gauge must be 'left' or 'zero_mean'", "control.flux_gauge", L.get("control.flux_gauge"))
    if c.rho_floor is not None:
        _num(c.rho_floor, "control.rho_floor", L, positive=True)

    n = sc.numerics
    _num(n.dt, "numerics.dt", L, positive=True)
    _num(n.t_final, "numerics.t_final", L, positive=True)
    if n.viscosity not in ("rusanov", "classic"):
        raise ScenarioError("viscosity must be 'rusanov' or 'classic'", "numerics.viscosity", L.get("numerics.viscosity"))
    if n.splitting not in ("lie", "strang"):
        raise ScenarioError("splitting must be 'lie' or 'strang'", "numerics.splitting", L.get("numerics.splitting"))
    for name in ("bandwidth", "v_scale"):
        if getattr(n, name) is not None:
            _num(getattr(n, name), f"numerics.{name}", L, positive=True)

    if sc.mode == "micro":
        if sc.agents is None:
            raise ScenarioError("micro scenarios need 'agents'", "agents", None)
        _num(sc.agents, "agents", L, positive=True, integer=True)
        if d.kind == "traffic" and sc.agents < 2:
            raise ScenarioError("traffic needs at least two vehicles", "agents", L.get("agents"))
    elif sc.agents is not None:
        raise ScenarioError("'agents' only applies to micro scenarios", "agents", L.get("agents"))
    _num(sc.seed, "seed", L, nonneg=True, integer=True)
    o = sc.output
    _num(o.record_every, "output.record_every", L, positive=True, integer=True)
    if o.snapshot_every is not None:
        _num(o.snapshot_every, "output.snapshot_every", L, positive=True, integer=True)
    sweep = sc.sweep
    if sweep is not None:
        sweep = SweepSpec(str(sweep.param), tuple(_as_tuple(sweep.values)))

    out = dataclasses.replace(
        sc,
        grid=grid,
        disturbance=disturbance,
        drift_sign=drift_sign,
        sweep=sweep,
    )
    if sweep is not None:
        get_param(out, sweep.param)
    check_cfl(out)
    return out


def check_cfl(sc: Scenario) -> None:
    """Reject macro scenarios whose time step cannot be stable.

    The advective test uses ``numerics.v_scale`` (default: the largest
    disturbance bound) as the velocity magnitude on every axis.
    """
    if sc.mode != "macro":
        return
    n = sc.numerics
    spacing = [2 * sc.grid.half_width / c for c in _as_tuple(sc.grid.cells)]
    v = n.v_scale if n.v_scale is not None else max(sc.disturbance)
    adv = sum(v * n.dt / h for h in spacing)
    if adv > ADVECTIVE_CFL_LIMIT[sc.grid.dim]:
        raise ScenarioError(
            f"advective CFL {adv:.4g} exceeds {ADVECTIVE_CFL_LIMIT[sc.grid.dim]} for velocity scale {v:g}",
            "numerics.dt",
        )
    if sc.grid.dim == 1:
        diff = sc.diffusion * n.dt / min(spacing) ** 2
        if diff > DIFFUSIVE_LIMIT:
            raise ScenarioError(f"diffusive number {diff:.4g} exceeds {DIFFUSIVE_LIMIT}", "numerics.dt")


def parse_scenario(text: str, source: str = "<string>", base_dir: str | None = None) -> Scenario:
    data, lines = _parse_yaml(text, source)
    sc = _build(Scenario, data, "", lines)
    sc = _normalise(sc, lines)
    if base_dir is not None:
        for section in ("target", "initial"):
            spec = getattr(sc, section)
            if spec is not None and spec.kind == "image" and not image_path(spec, base_dir).is_file():
                raise ScenarioError(
                    f"image file {image_path(spec, base_dir)} not found", f"{section}.image", lines.get(f"{section}.image")
                )
    return dataclasses.replace(sc, base_dir=base_dir)


def resolve_scenario_path(name_or_path: str | Path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    if str(name_or_path) in BUNDLED:
        return Path(str(resources.files("densityctl") / "scenarios" / f"{name_or_path}.yaml"))
    raise FileNotFoundError(f"no scenario file or bundled scenario named {name_or_path!r}")


def load_scenario(name_or_path: str | Path) -> Scenario:
    path = resolve_scenario_path(name_or_path)
    return parse_scenario(path.read_text(), str(path), base_dir=str(path.parent))


# -- serialisation, hashing, overrides --------------------------------------


def scenario_to_dict(sc: Scenario) -> dict:
    def clean(obj):
        if dataclasses.is_dataclass(obj):
            return {
                f.name: clean(getattr(obj, f.name))
                for f in dataclasses.fields(obj)
                if f.name != "base_dir" and getattr(obj, f.name) is not None
            }
        if isinstance(obj, tuple):
            return [clean(v) for v in obj]
        return obj

    return clean(sc)


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False)


def scenario_hash(sc: Scenario) -> str:
    canonical = json.dumps(scenario_to_dict(sc), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def get_param(sc: Scenario, path: str):
    obj: Any = sc
    for part in path.split("."):
        if not dataclasses.is_dataclass(obj) or part not in _field_names(type(obj)):
            raise ScenarioError(f"no such parameter '{path}'", path)
        obj = getattr(obj, part)
    return obj


def with_param(sc: Scenario, path: str, value) -> Scenario:
    """Copy of ``sc`` with one dotted parameter replaced, then revalidated."""
    get_param(sc, path)
    data = scenario_to_dict(sc)
    node = data
    parts = path.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return parse_scenario(yaml.safe_dump(data, sort_keys=False), f"{sc.name}[{path}={value}]", sc.base_dir)


def coerce_value(text: str):
    """CLI value: YAML scalar rules (ints, floats, booleans, strings)."""
    return yaml.safe_load(text)


# -- building the run -------------------------------------------------------


def build_grid(sc: Scenario):
    g = sc.grid
    if g.dim == 1:
        return Grid1D(g.half_width, g.cells, g.boundary)
    return Grid2D(g.half_width, g.cells, g.boundary)


def image_path(spec: TargetSpec, base_dir: str | None = None) -> Path:
    """Image files are resolved relative to the scenario file's directory."""
    path = Path(spec.image)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    return path


def build_density(spec: TargetSpec, grid, base_dir: str | None = None):
    """Static array or tracking :class:`ReferenceDensity` for a target spec."""
    kind = spec.kind
    if kind == "uniform":
        return uniform_density(grid)
    if kind == "von_mises":
        return von_mises_1d(spec.kappa, spec.mu or 0.0, grid)
    if kind == "tracking_von_mises":
        return tracking_von_mises(spec.kappa, spec.mu or 0.0, spec.mu_rate, grid)
    if kind == "bivariate_von_mises":
        return bivariate_von_mises(spec.kappa1, spec.kappa2, spec.mu or 0.0, spec.nu or 0.0, grid)
    if kind == "image":
        pixels = read_image(image_path(spec, base_dir))
        return density_from_image(pixels, grid, spec.smoothing, bool(spec.invert))
    raise ScenarioError(f"unknown target kind {kind!r}", "target.kind")


def build_controller(sc: Scenario, grid) -> DensityController:
    target = build_density(sc.target, grid, sc.base_dir)
    c = sc.control
    ctl = DensityController(
        grid,
        k_p=c.k_p,
        ks_safety=c.ks_safety,
        ks_mode=c.ks_mode,
        epsilon=c.epsilon,
        diffusion=sc.diffusion,
        disturbance=sc.disturbance,
        rho_floor=c.rho_floor,
        flux_gauge=c.flux_gauge,
    )
    return ctl.fit(target)


def build_drift(sc: Scenario, grid, n_agents: int):
    d = sc.drift
    if d.kind == "none":
        return NoDrift(grid.ndim)
    if d.kind == "oscillator":
        return HeterogeneousOscillator.uniform(n_agents, d.k_dist, sc.seed, bound=max(sc.disturbance))
    if d.kind == "traffic":
        ring = 2 * grid.half_width
        delta_s = d.delta_s if d.delta_s is not None else ring / n_agents
        return OptimalVelocityTraffic(d.v_max, delta_s, d.beta, ring)
    if d.kind == "terrain":
        kw = {k: getattr(d, k) for k in ("h1", "h2", "width") if getattr(d, k) is not None}
        return TerrainGradient(**kw, bound=tuple(np.broadcast_to(sc.disturbance, (2,))))
    raise ScenarioError(f"unknown drift kind {d.kind!r}", "drift.kind")


# -- records ----------------------------------------------------------------


@dataclass
class RunRecord:
    scenario_name: str
    scenario_hash: str
    columns: list[str]
    metrics: list[dict]
    final_density: np.ndarray
    wall_clock: float
    version: str = __version__
    seed: int = 0
    snapshots: list = field(default_factory=list)
    max_drift: list[float] | None = None
    declared_bound: list[float] | None = None
    out_dir: str | None = None

    def series(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.metrics])

    @property
    def final_error(self) -> float:
        return float(self.metrics[-1]["l2_error"])

    def metrics_csv(self) -> str:
        return format_metrics_csv(self.columns, self.metrics)

    def summary(self) -> dict:
        return {
            "scenario": self.scenario_name,
            "scenario_hash": self.scenario_hash,
            "seed": self.seed,
            "version": self.version,
            "wall_clock_s": self.wall_clock,
            "n_records": len(self.metrics),
            "initial_l2_error": float(self.metrics[0]["l2_error"]),
            "final_l2_error": self.final_error,
            "max_drift": self.max_drift,
            "declared_bound": self.declared_bound,
            "drift_within_bound": self.drift_within_bound,
        }

    @property
    def drift_within_bound(self) -> bool | None:
        """Whether the sampled drift respected the controller's K over the run."""
        if self.max_drift is None or self.declared_bound is None:
            return None
        return bool(np.all(np.asarray(self.max_drift) <= np.asarray(self.declared_bound)))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def format_metrics_csv(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def read_metrics_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty metrics file") from None
        rows = [list(map(float, r)) for r in reader if r]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    arr = np.array(rows)
    return {name: arr[:, i] for i, name in enumerate(header)}


def format_positions_csv(snapshots, ndim: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "agent_id"] + (["x"] if ndim == 1 else [f"x{i + 1}" for i in range(ndim)]))
    for t, pos in snapshots:
        for i, p in enumerate(pos):
            w.writerow([_fmt(t), i] + [_fmt(v) for v in p])
    return buf.getvalue()


def write_record(record: RunRecord, out_dir, ndim: int) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(record.metrics_csv())
    dens = record.final_density
    write_raw_matrix(out / "final_density.bin", dens if dens.ndim == 2 else dens[None, :])
    if record.snapshots:
        (out / "positions.csv").write_text(format_positions_csv(record.snapshots, ndim))
    (out / "record.json").write_text(json.dumps(record.summary(), indent=2) + "\n")
    record.out_dir = str(out)
    return out


# -- orchestration ----------------------------------------------------------


def run(sc: Scenario, seed: int | None = None, out_dir=None) -> RunRecord:
    if seed is not None:
        sc = dataclasses.replace(sc, seed=int(seed))
    grid = build_grid(sc)
    ctl = build_controller(sc, grid)
    n = sc.numerics
    t0 = time.perf_counter()
    if sc.mode == "macro":
        rho0 = build_density(sc.initial, grid, sc.base_dir) if sc.initial else uniform_density(grid)
        if isinstance(rho0, ReferenceDensity):
            rho0 = rho0.at(0.0)
        state = MacroState(grid, rho0, drift_sign=sc.drift_sign, k=sc.disturbance, D=sc.diffusion)
        res = run_closed_loop_macro(
            ctl, state, n.dt, n.t_final, sc.output.record_every, n.viscosity, n.splitting
        )
        final, snaps, max_drift, bound = res.state.rho, [], None, None
        columns = metric_columns(grid.ndim)
    else:
        pop = AgentPopulation.uniform(sc.agents, grid, sc.seed)
        drift = build_drift(sc, grid, sc.agents)
        bw = n.bandwidth
        res = run_closed_loop_micro(
            ctl,
            pop,
            drift,
            sc.diffusion,
            n.dt,
            n.t_final,
            bandwidth=bw,
            record_every=sc.output.record_every,
            snapshot_every=sc.output.snapshot_every,
        )
        final, snaps, max_drift = res.density, res.snapshots, res.max_drift.tolist()
        bound = np.broadcast_to(ctl.bound_.array, (grid.ndim,)).tolist()
        columns = metric_columns(grid.ndim, micro=True)
    record = RunRecord(
        scenario_name=sc.name,
        scenario_hash=scenario_hash(sc),
        columns=columns,
        metrics=res.metrics,
        final_density=np.asarray(final),
        wall_clock=time.perf_counter() - t0,
        seed=sc.seed,
        snapshots=snaps,
        max_drift=max_drift,
        declared_bound=bound,
    )
    log.info("%s: final l2 error %.3e in %.2fs", sc.name, record.final_error, record.wall_clock)
    if out_dir is not None:
        write_record(record, out_dir, grid.ndim)
    return record


def _run_one(args):
    sc, out_dir = args
    return run(sc, out_dir=out_dir)


def sweep(sc: Scenario, param: str | None = None, values=None, out_dir=None, workers: int = 1) -> list[RunRecord]:
    """One run per value of a single dotted parameter, seed held fixed.

    Defaults to the scenario's own ``sweep`` block. Element ``i`` equals a
    standalone :func:`run` of ``with_param(sc, param, values[i])``.
    """
    if param is None:
        if sc.sweep is None:
            raise ScenarioError("no sweep parameter given and the scenario declares none", "sweep")
        param = sc.sweep.param
        values = sc.sweep.values if values is None else values
    values = list(values if values is not None else [])
    if not values:
        return []
    scenarios = [with_param(sc, param, v) for v in values]
    dirs = [None if out_dir is None else str(Path(out_dir) / f"{i:03d}_{param}={v}") for i, v in enumerate(values)]
    jobs = list(zip(scenarios, dirs))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


# -- exponential bound ------------------------------------------------------


@dataclass(frozen=True)
class BoundCheck:
    passed: bool
    first_violation: float | None
    worst_ratio: float

    def __bool__(self):
        return self.passed


def exponential_bound_check(t, err, k_p: float, slack: float = 0.0, floor: float = 0.0) -> BoundCheck:
    """Check ``|e(t)|^2 <= |e(0)|^2 exp(-k_p t) (1 + slack)`` sample by sample.

    Samples with ``err <= floor`` pass unconditionally. ``worst_ratio`` is the
    largest ``|e|^2 / bound`` over the checked samples.
    """
    t = np.asarray(t, dtype=float)
    err = np.asarray(err, dtype=float)
    if t.size == 0 or t.shape != err.shape:
        raise ValueError("need a nonempty series of matching (t, err)")
    if np.any(np.diff(t) <= 0):
        raise ValueError("t must be strictly increasing")
    t = t - t[0]
    bound = err[0] ** 2 * np.exp(-k_p * t) * (1.0 + slack)
    checked = err > floor
    # relative roundoff allowance so an exact exponential passes with zero slack
    bad = checked & (err**2 > bound * (1 + 1e-12))
    ratio = np.where(checked & (bound > 0), err**2 / np.where(bound > 0, bound, 1.0), 0.0)
    worst = float(ratio.max()) if ratio.size else 0.0
    if np.any(bad):
        return BoundCheck(False, float(t[np.argmax(bad)]), worst)
    return BoundCheck(True, None, worst)


def check_bound_file(path, k_p: float, slack: float, floor: float, relative: bool = False) -> BoundCheck:
    data = read_metrics_csv(path)
    if "t" not in data or "l2_error" not in data:
        raise ValueError(f"{path}: needs 't' and 'l2_error' columns")
    e = data["l2_error"]
    if relative:
        floor = floor * e[0]
    return exponential_bound_check(data["t"], e, k_p, slack, floor)


def detect_rise(t, err, settle_level: float, tol: float = 0.01):
    """First time the error climbs more than ``tol`` above its running
    minimum while still above ``settle_level`` (a transient bump), or None."""
    t = np.asarray(t, dtype=float)
    err = np.asarray(err, dtype=float)
    runmin = np.minimum.accumulate(err)
    hit = (err > runmin * (1 + tol)) & (runmin > settle_level)
    return float(t[np.argmax(hit)]) if np.any(hit) else None

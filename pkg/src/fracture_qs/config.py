"""Run configuration: TOML text -> validated RunConfig -> built Problem.

Unknown keys are rejected with their full path; the first offending key is
reported. Sections: [w] density, [mesh] geometry, [load] boundary program,
[time] horizon/grid, [solver] backend options, [output] cadence, plus a
top-level integer ``seed``.
"""
from __future__ import annotations

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .density import EnergyDensity
from .driver import TimeGrid
from .errors import ConfigError, FractureError
from .harness import Problem
from .mesh import LoadProgram, NotchSpec, build_bar, build_rect, make_profile
from .solver import StepOptions

_SECTIONS = {"w", "mesh", "load", "time", "solver", "output"}
_KEYS = {
    "w": {"form", "p", "coefficient", "growth_c"},
    "mesh": {"kind", "length", "nodes", "kappa", "width", "height", "h",
             "notch", "boundary"},
    "load": {"profile", "g0", "schedule"},
    "time": {"horizon", "steps", "levels"},
    "solver": {"backend", "tolerance", "budget", "at_epsilon_over_h",
               "truncate", "tie_tolerance", "v_threshold", "max_iterations"},
    "output": {"snapshot_every", "checkpoint_every"},
}
_NOTCH_KEYS = {"orientation", "position", "start", "stop"}
_SIDES = {"left", "right", "bottom", "top"}


@dataclass(frozen=True)
class RunConfig:
    seed: int
    w: dict
    mesh: dict
    load: dict
    time: dict
    solver: dict
    output: dict
    text: str = field(default="", repr=False)


def _need(table: dict, key: str, path: str, types, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError("missing required key", key=f"{path}.{key}")
        return default
    value = table[key]
    if types is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, types):
        raise ConfigError(f"expected {getattr(types, '__name__', types)}, got "
                          f"{type(value).__name__}", key=f"{path}.{key}")
    return value


def parse_config(text: str) -> RunConfig:
    """Validate config text; raises ConfigError naming the first bad key."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"config is not valid TOML: {err}") from err

    for key in raw:
        if key not in _SECTIONS and key != "seed":
            raise ConfigError("unknown key", key=key)
    for section in _SECTIONS:
        table = raw.get(section, {})
        if not isinstance(table, dict):
            raise ConfigError("expected a table", key=section)
        for key in table:
            if key not in _KEYS[section]:
                raise ConfigError("unknown key", key=f"{section}.{key}")

    seed = _need(raw, "seed", "<root>", int, default=0)

    w = dict(raw.get("w", {}))
    form = _need(w, "form", "w", str, default="quadratic")
    p = _need(w, "p", "w", float, default=2.0)
    if form in ("p-power",) and not (1.0 < p):
        raise ConfigError("exponent must exceed 1", key="w.p")
    if not (1.0 < p < float("inf")):
        raise ConfigError("exponent must lie in (1, inf)", key="w.p")
    coefficient = _need(w, "coefficient", "w", float, default=1.0)
    if coefficient <= 0:
        raise ConfigError("coefficient must be positive", key="w.coefficient")
    growth_c = _need(w, "growth_c", "w", float, default=None)
    if growth_c is not None and growth_c < 1.0:
        raise ConfigError("growth constant must be >= 1", key="w.growth_c")

    mesh = dict(raw.get("mesh", {}))
    kind = _need(mesh, "kind", "mesh", str, required=True)
    if kind not in ("bar", "rect"):
        raise ConfigError("kind must be 'bar' or 'rect'", key="mesh.kind")
    kappa = _need(mesh, "kappa", "mesh", float, default=1.0)
    if kappa <= 0:
        raise ConfigError("kappa must be positive", key="mesh.kappa")
    if kind == "bar":
        _need(mesh, "length", "mesh", float, required=True)
        nodes = _need(mesh, "nodes", "mesh", int, required=True)
        if nodes < 2:
            raise ConfigError("a bar needs at least 2 nodes", key="mesh.nodes")
        for bad in ("width", "height", "h", "notch", "boundary"):
            if bad in mesh:
                raise ConfigError("not a bar key", key=f"mesh.{bad}")
    else:
        for req in ("width", "height", "h"):
            _need(mesh, req, "mesh", float, required=True)
        notch = mesh.get("notch")
        if notch is not None:
            if not isinstance(notch, dict):
                raise ConfigError("expected a table", key="mesh.notch")
            for key in notch:
                if key not in _NOTCH_KEYS:
                    raise ConfigError("unknown key", key=f"mesh.notch.{key}")
            orientation = _need(notch, "orientation", "mesh.notch", str, required=True)
            if orientation not in ("x", "y"):
                raise ConfigError("orientation must be 'x' or 'y'",
                                  key="mesh.notch.orientation")
            for req in ("position", "start", "stop"):
                _need(notch, req, "mesh.notch", float, required=True)
        boundary = mesh.get("boundary")
        if boundary is not None:
            if not isinstance(boundary, dict):
                raise ConfigError("expected a table", key="mesh.boundary")
            for side, val in boundary.items():
                if side not in _SIDES:
                    raise ConfigError("unknown side", key=f"mesh.boundary.{side}")
                if val not in ("dirichlet", "free"):
                    raise ConfigError("must be 'dirichlet' or 'free'",
                                      key=f"mesh.boundary.{side}")

    time = dict(raw.get("time", {}))
    horizon = _need(time, "horizon", "time", float, required=True)
    if horizon <= 0:
        raise ConfigError("horizon must be positive", key="time.horizon")
    steps = _need(time, "steps", "time", int, required=True)
    if steps < 1:
        raise ConfigError("steps must be >= 1", key="time.steps")
    levels = _need(time, "levels", "time", int, default=1)
    if levels < 1:
        raise ConfigError("levels must be >= 1", key="time.levels")

    load = dict(raw.get("load", {}))
    profile = _need(load, "profile", "load", str, default="stretch_x")
    if profile not in ("stretch_x", "shear_y", "shear_y_taper", "uniform"):
        raise ConfigError("unknown profile", key="load.profile")
    _need(load, "g0", "load", float, default=0.0)
    schedule = load.get("schedule")
    if schedule is not None:
        if (not isinstance(schedule, list) or len(schedule) < 2 or
                not all(isinstance(pair, list) and len(pair) == 2 and
                        all(isinstance(x, (int, float)) and not isinstance(x, bool)
                            for x in pair) for pair in schedule)):
            raise ConfigError("schedule must be a list of [t, r] pairs",
                              key="load.schedule")
        knots = [pair[0] for pair in schedule]
        if any(knots[i + 1] <= knots[i] for i in range(len(knots) - 1)):
            raise ConfigError("schedule knots out of order", key="load.schedule")
        if knots[0] != 0.0 or abs(knots[-1] - horizon) > 1e-12:
            raise ConfigError("schedule must span [0, horizon]",
                              key="load.schedule")

    solver = dict(raw.get("solver", {}))
    backend = _need(solver, "backend", "solver", str, default="exact")
    if backend not in ("exact", "altmin"):
        raise ConfigError("backend must be 'exact' or 'altmin'",
                          key="solver.backend")
    tolerance = _need(solver, "tolerance", "solver", float, default=1e-9)
    if tolerance <= 0:
        raise ConfigError("tolerance must be positive", key="solver.tolerance")
    budget = _need(solver, "budget", "solver", int, default=20)
    if budget < 1:
        raise ConfigError("budget must be >= 1", key="solver.budget")
    eps_over_h = _need(solver, "at_epsilon_over_h", "solver", float, default=4.0)
    if eps_over_h < 2.0:
        raise ConfigError("at_epsilon_over_h must be >= 2", key="solver.at_epsilon_over_h")
    _need(solver, "truncate", "solver", bool, default=None)
    _need(solver, "max_iterations", "solver", int, default=400)

    output = dict(raw.get("output", {}))
    for key in ("snapshot_every", "checkpoint_every"):
        val = _need(output, key, "output", int, default=0 if key == "snapshot_every" else 25)
        if val < 0:
            raise ConfigError("must be >= 0", key=f"output.{key}")

    return RunConfig(seed=seed, w=w, mesh=mesh, load=load, time=time,
                     solver=solver, output=output, text=text)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def build_problem(config: RunConfig) -> Problem:
    """Instantiate mesh, density, load program, grid and options."""
    w = config.w
    try:
        density = EnergyDensity(
            form=w.get("form", "quadratic"),
            p=float(w.get("p", 2.0)),
            coefficient=float(w.get("coefficient", 1.0)),
            growth_constant=w.get("growth_c"),
        )
    except FractureError as err:
        raise ConfigError(str(err), key="w") from err

    mc = config.mesh
    try:
        if mc["kind"] == "bar":
            mesh = build_bar(float(mc["length"]), int(mc["nodes"]),
                             kappa=float(mc.get("kappa", 1.0)))
        else:
            notch = None
            if mc.get("notch") is not None:
                nt = mc["notch"]
                notch = NotchSpec(orientation=nt["orientation"],
                                  position=float(nt["position"]),
                                  start=float(nt["start"]),
                                  stop=float(nt["stop"]))
            mesh = build_rect(float(mc["width"]), float(mc["height"]),
                              float(mc["h"]), notch=notch,
                              boundary=mc.get("boundary"),
                              kappa=float(mc.get("kappa", 1.0)))
    except FractureError as err:
        raise ConfigError(str(err), key="mesh") from err

    tc = config.time
    horizon = float(tc["horizon"])
    grid = TimeGrid.regular(horizon, int(tc["steps"]))

    lc = config.load
    profile = make_profile(mesh, lc.get("profile", "stretch_x"))
    offset = np.full_like(profile, float(lc.get("g0", 0.0)))
    schedule = lc.get("schedule")
    if schedule is None:
        schedule = ((0.0, 0.0), (horizon, horizon))
    else:
        schedule = tuple((float(t), float(r)) for t, r in schedule)
    try:
        load = LoadProgram(profile=profile, offset=offset, schedule=schedule,
                           horizon=horizon)
    except FractureError as err:
        raise ConfigError(str(err), key="load.schedule") from err

    sc = config.solver
    opts = StepOptions(
        backend=sc.get("backend", "exact"),
        tolerance=float(sc.get("tolerance", 1e-9)),
        budget=int(sc.get("budget", 20)),
        max_iterations=int(sc.get("max_iterations", 400)),
        tie_tolerance=float(sc.get("tie_tolerance", 1e-9)),
        truncate=sc.get("truncate"),
        at_epsilon=float(sc.get("at_epsilon_over_h", 4.0)) * mesh.spacing,
        v_threshold=float(sc.get("v_threshold", 0.1)),
    )
    return Problem(mesh=mesh, density=density, load=load, grid=grid, opts=opts)

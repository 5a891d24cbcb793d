"""Independent ground truth: closed forms, full enumeration, file verifier.

``brute_force_step`` enumerates every crack pattern over the candidate bonds
(hard cap 20) with a fresh convex solve per pattern; it shares the inner
elastic solver with the step backend but none of its search logic, so
agreement between the two exercises the branch-and-bound pruning and the tie
rule end to end. ``verify_trajectory`` re-derives every checked property
from the output files plus the config, without trusting the driver.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .crack import CrackSet, measure_c
from .density import EnergyDensity
from .driver import TimeGrid
from .errors import BudgetExceededError
from .mesh import LoadProgram, Mesh, build_bar, build_rect, make_profile
from .solver import (DisplacementState, StepOptions, _tie_better,
                     elastic_solve, gradient_p_norm, apriori_gradient_constant)

_HARD_CAP = 20


@dataclass(frozen=True)
class BarOracle:
    """Uniform bar under a linear ramp: everything in closed form."""

    length: float
    kappa: float
    rate: float = 1.0
    horizon: float = 1.0

    def __post_init__(self):
        if not (self.length > 0 and self.kappa > 0 and self.rate > 0):
            raise ValueError("length, kappa and rate must be positive")

    def elastic_energy(self, t: float) -> float:
        """(rate*t)^2 / L: the uncracked bulk at load value rate*t."""
        return (self.rate * t) ** 2 / self.length

    def crack_cost(self) -> float:
        return self.kappa


def bar_crack_time(oracle: BarOracle) -> Optional[float]:
    """Continuum threshold sqrt(kappa L)/rate, or None past the horizon.

    At the exact tie the no-crack branch is preferred, matching the step
    solver's tie rule, so a discrete run cracks at the first knot strictly
    past this value.
    """
    t = np.sqrt(oracle.kappa * oracle.length) / oracle.rate
    return float(t) if t <= oracle.horizon else None


def expected_grid_crack_time(oracle: BarOracle, knots) -> Optional[float]:
    """First knot whose elastic energy strictly exceeds the crack cost."""
    for t in np.asarray(knots, dtype=float):
        if oracle.elastic_energy(t) > oracle.crack_cost():
            return float(t)
    return None


def brute_force_step(mesh: Mesh, density: EnergyDensity, gamma_prev: CrackSet,
                     boundary: np.ndarray, opts: Optional[StepOptions] = None,
                     warm_start: Optional[np.ndarray] = None) -> DisplacementState:
    """Exact reference minimizer by full enumeration of crack patterns."""
    opts = opts or StepOptions()
    candidates = [int(b) for b in range(mesh.n_bonds)
                  if b not in gamma_prev.broken]
    k = len(candidates)
    if k > _HARD_CAP:
        raise BudgetExceededError(
            f"{k} candidate bonds exceed the brute-force cap {_HARD_CAP}")
    boundary = np.atleast_2d(np.asarray(boundary, dtype=float))
    m = boundary.shape[1]
    trunc = opts.truncate if opts.truncate is not None else (m == 1)
    bound = None
    if trunc and m == 1:
        bound = opts.truncation_bound
        if bound is None:
            bound = float(np.abs(boundary).max())
    cost_c = np.where(mesh.on_free_boundary, 0.0, mesh.surface_weight)
    prev = gamma_prev.broken

    best = None
    for mask in range(1 << k):
        pattern = tuple(candidates[i] for i in range(k) if mask >> i & 1)
        full = frozenset(prev | set(pattern))
        values, bulk = elastic_solve(mesh, density, full, boundary,
                                     warm=warm_start, truncate_bound=bound)
        surf = float(sum(cost_c[b] for b in pattern))
        e = bulk + surf
        key = (surf, tuple(sorted(pattern)))
        if best is None or _tie_better(e, key, best[0], best[1],
                                       opts.tie_tolerance):
            best = (e, key, values, bulk, surf, pattern)
    _, _, values, bulk, surf, pattern = best
    return DisplacementState(
        values=values, jump=frozenset(pattern), bulk_energy=bulk,
        new_surface=surf,
        max_abs=float(np.abs(values).max()) if values.size else 0.0)


# -- trajectory/ledger verification ------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class VerifyReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def lines(self):
        return [f"{'PASS' if c.passed else 'FAIL'} {c.name}"
                + (f": {c.detail}" if c.detail and not c.passed else "")
                for c in self.checks]


def verify_trajectory(records, ledger_rows, mesh: Mesh,
                      density: EnergyDensity, load: LoadProgram,
                      opts: Optional[StepOptions] = None,
                      tol: float = 1e-8) -> VerifyReport:
    """Re-check a finished run from its serialized outputs.

    ``records`` is a list of (time, broken ids, values); ``ledger_rows`` the
    parsed CSV columns. Checks: irreversibility, ledger arithmetic, the
    incremental energy bound re-derived from the states, boundary-condition
    satisfaction, and (when the instance fits the cap) per-knot global
    minimality against brute force.
    """
    opts = opts or StepOptions()
    checks = []

    broken_sets = [frozenset(rec[1]) for rec in records]
    grows = all(broken_sets[i] <= broken_sets[i + 1]
                for i in range(len(broken_sets) - 1))
    checks.append(CheckResult("irreversibility", grows,
                              "crack set must never lose bonds"))

    times = np.asarray([row["t"] for row in ledger_rows])
    ok_t = (len(records) == len(ledger_rows) and
            all(abs(records[i][0] - times[i]) < 1e-12 for i in range(len(records))))
    checks.append(CheckResult("knot alignment", ok_t,
                              "trajectory and ledger knots differ"))
    if not ok_t:
        return VerifyReport(tuple(checks))

    arith = all(abs(row["total"] - row["bulk"] - row["surface_c"]) <= 1e-12 *
                max(1.0, abs(row["total"])) for row in ledger_rows)
    checks.append(CheckResult("ledger arithmetic", arith,
                              "total != bulk + surface_c"))

    monotone = all(ledger_rows[i + 1]["surface_c"] >= ledger_rows[i]["surface_c"] - 1e-12
                   for i in range(len(ledger_rows) - 1))
    checks.append(CheckResult("surface monotone", monotone,
                              "surface_c decreased"))

    # recompute bulk and the crack measure per knot
    bulk_ok = True
    surf_ok = True
    for i, (t, broken, values) in enumerate(records):
        gamma = CrackSet.from_ids(mesh, broken)
        ids = [b for b in mesh.interior_ids if b not in gamma.broken]
        if ids:
            xi = mesh.bond_gradients(np.atleast_2d(values), ids)
            bulk = float(np.dot(mesh.elastic_weight[ids],
                                np.atleast_1d(density.eval_w(xi))))
        else:
            bulk = 0.0
        if abs(bulk - ledger_rows[i]["bulk"]) > tol * max(1.0, abs(bulk)):
            bulk_ok = False
        if abs(measure_c(gamma) - ledger_rows[i]["surface_c"]) > 1e-12:
            surf_ok = False
    checks.append(CheckResult("bulk recomputation", bulk_ok,
                              "ledger bulk does not match the stored fields"))
    checks.append(CheckResult("surface recomputation", surf_ok,
                              "ledger surface_c does not match the broken sets"))

    # boundary condition: nodes with an unbroken ghost carry g(t)
    bc_ok = True
    for t, broken, values in records:
        g = load.values(t)
        for gid in mesh.ghost_ids:
            if gid in broken:
                continue
            node = mesh.bond_i[gid]
            if np.max(np.abs(np.atleast_2d(values)[node] - g[node])) > 1e-9:
                bc_ok = False
    checks.append(CheckResult("boundary condition", bc_ok,
                              "a pinned node differs from the imposed datum"))

    # incremental bound re-derived from the stored states
    env = 0.0
    total0 = ledger_rows[0]["total"]
    bound_ok = True
    for i in range(len(records)):
        if i > 0:
            t_prev, broken_prev, values_prev = records[i - 1]
            dg = load.values(records[i][0]) - load.values(t_prev)
            gamma = frozenset(broken_prev)
            ids = [b for b in mesh.interior_ids if b not in gamma]
            if ids:
                xi = mesh.bond_gradients(np.atleast_2d(values_prev), ids)
                xig = mesh.bond_gradients(np.atleast_2d(dg), ids)
                w_new = np.atleast_1d(density.eval_w(xi + xig))
                w_old = np.atleast_1d(density.eval_w(xi))
                env += float(np.dot(mesh.elastic_weight[ids], w_new - w_old))
        if ledger_rows[i]["total"] - total0 - env > tol:
            bound_ok = False
    checks.append(CheckResult("incremental energy bound", bound_ok,
                              "total exceeds total(0) plus the work envelope"))

    # global minimality by brute force where the instance allows it
    n_candidates0 = mesh.n_bonds - len(broken_sets[0])
    if n_candidates0 <= _HARD_CAP:
        minimal = True
        prev = CrackSet.from_ids(mesh, records[0][1])
        for i in range(1, len(records)):
            t, broken, values = records[i]
            ref = brute_force_step(mesh, density, prev, load.values(t), opts)
            stored = ledger_rows[i]["bulk"] + _new_cost(mesh, broken, prev.broken)
            if abs(ref.energy - stored) > tol * max(1.0, abs(ref.energy)):
                minimal = False
            if frozenset(broken) != prev.broken | ref.jump:
                minimal = False
            prev = CrackSet.from_ids(mesh, broken)
        checks.append(CheckResult("global minimality", minimal,
                                  "a knot state is beaten by brute force"))

    return VerifyReport(tuple(checks))


def _new_cost(mesh, broken, prev):
    fresh = [b for b in broken if b not in prev]
    if not fresh:
        return 0.0
    ids = np.asarray(fresh, dtype=np.int64)
    keep = ~mesh.on_free_boundary[ids]
    return float(mesh.surface_weight[ids[keep]].sum())


# -- seeded instance generator for the fuzz suites ----------------------------

@dataclass
class RandomInstance:
    mesh: Mesh
    density: EnergyDensity
    gamma_prev: CrackSet
    boundary: np.ndarray
    load: LoadProgram
    opts: StepOptions
    seed: int


def random_step_instance(seed: int, max_candidates: int = 12) -> RandomInstance:
    """Small random step problem with at most ``max_candidates`` unbroken bonds."""
    rng = np.random.RandomState(seed)
    kappa = float(rng.uniform(0.3, 3.0))
    if rng.rand() < 0.7:
        n = int(rng.randint(2, 7))
        mesh = build_bar(1.0 + rng.rand(), n, kappa)
    else:
        mesh = build_rect(1.0, 1.0, 0.5, kappa=kappa,
                          boundary={"left": "free"} if rng.rand() < 0.3 else None)
    n_bonds = mesh.n_bonds
    n_pre = max(0, n_bonds - max_candidates)
    extra = rng.randint(0, 3) if n_bonds - n_pre > 3 else 0
    pre = rng.choice(n_bonds, size=n_pre + extra, replace=False) if n_pre + extra else []
    gamma = CrackSet.from_ids(mesh, [int(b) for b in pre])
    coef = float(rng.uniform(0.5, 2.5))
    density = EnergyDensity(form="scaled-quadratic" if rng.rand() < 0.5 else "quadratic",
                            coefficient=coef if rng.rand() < 0.5 else 1.0)
    horizon = 1.0
    load = LoadProgram.ramp(mesh, "stretch_x", rate=float(rng.uniform(0.3, 2.0)),
                            horizon=horizon)
    t = float(rng.uniform(0.1, 1.0))
    boundary = load.values(t)
    opts = StepOptions(budget=max_candidates + 4)
    return RandomInstance(mesh=mesh, density=density, gamma_prev=gamma,
                          boundary=boundary, load=load, opts=opts, seed=seed)


@dataclass
class RandomRun:
    mesh: Mesh
    density: EnergyDensity
    load: LoadProgram
    grid: TimeGrid
    opts: StepOptions
    seed: int


def random_run(seed: int):
    """Small random evolution problem for the driver-level fuzz suite."""
    rng = np.random.RandomState(seed + 10_000)
    kappa = float(rng.uniform(0.3, 3.0))
    if rng.rand() < 0.75:
        n = int(rng.randint(2, 7))
        mesh = build_bar(float(rng.uniform(0.5, 2.0)), n, kappa)
    else:
        mesh = build_rect(1.0, 0.5, 0.5, kappa=kappa)
    density = EnergyDensity(form="scaled-quadratic",
                            coefficient=float(rng.uniform(0.5, 2.0)))
    horizon = float(rng.uniform(0.8, 2.0))
    rate = float(rng.uniform(0.4, 1.6))
    if rng.rand() < 0.3:
        t_hold = float(rng.uniform(0.3, 0.7)) * horizon
        schedule = ((0.0, 0.0), (t_hold, rate * t_hold), (horizon, rate * t_hold))
    else:
        schedule = ((0.0, 0.0), (horizon, rate * horizon))
    prof = make_profile(mesh, "stretch_x")
    load = LoadProgram(profile=prof, offset=np.zeros_like(prof),
                       schedule=schedule, horizon=horizon)
    steps = int(rng.randint(4, 10))
    grid = TimeGrid.regular(horizon, steps)
    opts = StepOptions(budget=mesh.n_bonds + 1)
    return RandomRun(mesh=mesh, density=density, load=load, grid=grid,
                     opts=opts, seed=seed)


def apriori_bounds_hold(mesh, density, load, result, tol: float = 1e-7) -> bool:
    """Re-check the gradient, sup-norm and surface-budget estimates on a run."""
    c_ap = apriori_gradient_constant(density, mesh)
    bound_sup = load.sup_norm()
    ledger = result.ledger
    for i, rec in enumerate(result.records):
        broken = frozenset(rec.broken)
        gp = gradient_p_norm(mesh, rec.values, broken, density.p)
        g_lift = load.values(rec.time)
        gg = gradient_p_norm(mesh, g_lift, frozenset(), density.p)
        if gp > c_ap * (gg + 1.0) + tol:
            return False
        if np.max(np.abs(rec.values)) > bound_sup + 1e-12:
            return False
        if ledger.surface_c[i] > ledger.total[0] + ledger.envelope_cum[i] + tol:
            return False
    return True

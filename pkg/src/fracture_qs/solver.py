"""One incremental step: globally minimize bulk energy plus new-crack cost.

The step problem is combinatorial: choose a set of bonds to break (on top of
the inherited crack), then solve the convex elastic problem on the remaining
lattice with ghost-pinned boundary values. ``solve_step_exact`` searches the
crack patterns by depth-first branch and bound; since the bulk term is
nonnegative, the accumulated new-surface cost of a pattern is an admissible
lower bound for all of its supersets, which keeps driven benchmarks at one
elastic solve per step away from the cracking load.

Ties between minimizers are resolved by a fixed total order: smaller
new-crack measure first, then the lexicographically smallest broken-bond
tuple. Bond ids put interior bonds before ghost bonds, so on a uniform bar
the canonical pick is the leftmost interior bond.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla
from scipy.optimize import minimize

from .crack import CrackSet, new_surface_measure
from .density import EnergyDensity
from .errors import BudgetExceededError, InvalidInputError, NonconvergenceError
from .mesh import KIND_GHOST, KIND_INTERIOR, Mesh

_DENSE_LIMIT = 96  # free-node count below which the dense path is used


@dataclass(frozen=True)
class StepOptions:
    backend: str = "exact"
    tolerance: float = 1e-9
    max_iterations: int = 400
    budget: int = 20
    max_explored: int = 500_000
    tie_tolerance: float = 1e-9
    truncate: Optional[bool] = None          # default: scalar fields only
    truncation_bound: Optional[float] = None  # default: max-abs of the boundary data
    at_epsilon: Optional[float] = None        # altmin regularization length (default 4h)
    at_eta: Optional[float] = None            # altmin residual stiffness (default 1e-6 eps)
    v_threshold: float = 0.1                  # damage level reported as crack

    def __post_init__(self):
        if self.backend not in ("exact", "altmin"):
            raise InvalidInputError(f"unknown backend {self.backend!r}")
        if not (self.tolerance > 0):
            raise InvalidInputError("tolerance must be positive")

    def with_(self, **kw) -> "StepOptions":
        return replace(self, **kw)


@dataclass(frozen=True)
class DisplacementState:
    """Solution of one incremental step.

    ``jump`` holds the bonds broken by this solve (not the inherited crack);
    ``new_surface`` is its reduced (free-boundary-discounted) measure times
    kappa. ``damage`` and ``stiffness_scale`` are set by the altmin backend.
    """

    values: np.ndarray
    jump: frozenset
    bulk_energy: float
    new_surface: float
    max_abs: float
    damage: Optional[np.ndarray] = field(default=None, repr=False)
    stiffness_scale: Optional[np.ndarray] = field(default=None, repr=False)
    surface_surrogate: Optional[float] = None

    @property
    def energy(self) -> float:
        return self.bulk_energy + self.new_surface


def _union_find_labels(n_nodes: int, bi, bj) -> np.ndarray:
    parent = list(range(n_nodes))

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for a, b in zip(bi, bj):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra
    return np.asarray([find(x) for x in range(n_nodes)], dtype=np.int64)


def _component_labels(n_nodes: int, bi, bj) -> np.ndarray:
    if n_nodes <= 64 or len(bi) == 0:
        return _union_find_labels(n_nodes, bi, bj)
    data = np.ones(len(bi))
    adj = sp.coo_matrix((data, (bi, bj)), shape=(n_nodes, n_nodes))
    _, labels = csgraph.connected_components(adj, directed=False)
    return labels


def elastic_solve(mesh: Mesh, density: EnergyDensity, broken: frozenset,
                  pin_field: np.ndarray, warm: Optional[np.ndarray] = None,
                  stiffness_scale: Optional[np.ndarray] = None,
                  truncate_bound: Optional[float] = None):
    """Minimize the bulk energy on the lattice minus ``broken``.

    Nodes with an unbroken ghost bond are pinned to ``pin_field``; connected
    components without a pin are floating and take the warm-start value at
    their lowest node id (zero without a warm start), which contributes no
    energy. Returns ``(values, bulk_energy)``.
    """
    pin_field = np.atleast_2d(np.asarray(pin_field, dtype=float))
    if pin_field.shape[0] != mesh.n_nodes:
        raise InvalidInputError("pin field must cover every node")
    m = pin_field.shape[1]
    n = mesh.n_nodes

    # bond ids are laid out interior-first, ghosts after
    interior = mesh.interior_ids
    n_int = len(interior)
    active_mask = np.ones(n_int, dtype=bool)
    ghost_broken = []
    for b in broken:
        if b < n_int:
            active_mask[b] = False
        else:
            ghost_broken.append(b)
    act = interior[active_mask]
    bi = mesh.bond_i[act]
    bj = mesh.bond_j[act]
    ell = mesh.bond_length[act]
    w_eff = mesh.elastic_weight[act]
    if stiffness_scale is not None:
        w_eff = w_eff * np.asarray(stiffness_scale)[active_mask]

    pinned = np.zeros(n, dtype=bool)
    ghost_ok = np.ones(mesh.n_bonds - n_int, dtype=bool)
    for g in ghost_broken:
        ghost_ok[g - n_int] = False
    pinned[mesh.bond_i[n_int:][ghost_ok]] = True

    labels = _component_labels(n, bi, bj)
    comp_pinned = np.zeros(n, dtype=bool)
    if pinned.any():
        pinned_labels = np.unique(labels[pinned])
        comp_pinned = np.isin(labels, pinned_labels)

    values = np.zeros((n, m))
    values[pinned] = pin_field[pinned]
    # floating components: constant fields carry no energy; pick the warm value
    floating = ~comp_pinned
    if floating.any():
        for lab in np.unique(labels[floating]):
            nodes = np.nonzero(labels == lab)[0]
            fill = warm[nodes.min()] if warm is not None else np.zeros(m)
            values[nodes] = fill

    free = comp_pinned & ~pinned
    free_idx = np.nonzero(free)[0]
    nf = len(free_idx)
    if nf > 0:
        if density.is_quadratic:
            _solve_quadratic(density, values, free_idx, bi, bj, ell, w_eff,
                             pinned, m)
        else:
            _solve_descent(density, values, free_idx, bi, bj, ell, w_eff,
                           warm, pin_field, m)

    if truncate_bound is not None:
        np.clip(values, -truncate_bound, truncate_bound, out=values)

    if len(act) == 0:
        return values, 0.0
    xi = (values[bj] - values[bi]) / ell[:, None]
    bulk = float(np.dot(w_eff, np.atleast_1d(density.eval_w(xi))))
    return values, bulk


def _solve_quadratic(density, values, free_idx, bi, bj, ell, w_eff, pinned, m):
    n = values.shape[0]
    pos = np.full(n, -1, dtype=np.int64)
    pos[free_idx] = np.arange(len(free_idx))
    k_bond = density.coefficient * w_eff / ell**2
    ia, ja = pos[bi], pos[bj]

    nf = len(free_idx)
    rhs = np.zeros((nf, m))
    both = (ia >= 0) & (ja >= 0)
    i_only = (ia >= 0) & (ja < 0)
    j_only = (ia < 0) & (ja >= 0)
    if i_only.any():
        np.add.at(rhs, ia[i_only], k_bond[i_only, None] * values[bj[i_only]])
    if j_only.any():
        np.add.at(rhs, ja[j_only], k_bond[j_only, None] * values[bi[j_only]])

    if nf <= _DENSE_LIMIT:
        K = np.zeros((nf, nf))
        diag_ids = np.concatenate([ia[ia >= 0], ja[ja >= 0]])
        diag_vals = np.concatenate([k_bond[ia >= 0], k_bond[ja >= 0]])
        np.add.at(K, (diag_ids, diag_ids), diag_vals)
        if both.any():
            np.add.at(K, (ia[both], ja[both]), -k_bond[both])
            np.add.at(K, (ja[both], ia[both]), -k_bond[both])
        values[free_idx] = np.linalg.solve(K, rhs)
    else:
        rows = np.concatenate([ia[ia >= 0], ja[ja >= 0], ia[both], ja[both]])
        cols = np.concatenate([ia[ia >= 0], ja[ja >= 0], ja[both], ia[both]])
        vals = np.concatenate([k_bond[ia >= 0], k_bond[ja >= 0],
                               -k_bond[both], -k_bond[both]])
        K = sp.csr_matrix((vals, (rows, cols)), shape=(nf, nf))
        if m == 1:
            values[free_idx, 0] = spla.spsolve(K, rhs[:, 0])
        else:
            lu = spla.splu(K.tocsc())
            for c in range(m):
                values[free_idx, c] = lu.solve(rhs[:, c])


def _solve_descent(density, values, free_idx, bi, bj, ell, w_eff, warm,
                   pin_field, m):
    """Convex non-quadratic bulk: monotone quasi-Newton descent on free DOFs."""
    u_full = values.copy()
    if warm is not None:
        u_full[free_idx] = warm[free_idx]
    x0 = u_full[free_idx].ravel().copy()

    def fun(x):
        u_full[free_idx] = x.reshape(-1, m)
        xi = (u_full[bj] - u_full[bi]) / ell[:, None]
        f = float(np.dot(w_eff, np.atleast_1d(density.eval_w(xi))))
        dw = np.atleast_2d(density.eval_dw(xi)) * (w_eff / ell)[:, None]
        grad = np.zeros_like(u_full)
        np.add.at(grad, bj, dw)
        np.add.at(grad, bi, -dw)
        return f, grad[free_idx].ravel()

    res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 1000, "ftol": 1e-16, "gtol": 1e-12})
    values[free_idx] = res.x.reshape(-1, m)


def _candidate_ids(mesh: Mesh, gamma_prev: CrackSet) -> list:
    return [int(b) for b in range(mesh.n_bonds) if b not in gamma_prev.broken]


def _stress_order(mesh, density, candidates, values) -> list:
    """Candidates sorted by decreasing bond energy in the uncracked solve."""
    energy = {}
    interior = set(int(b) for b in mesh.interior_ids)
    for b in candidates:
        if b in interior:
            xi = mesh.bond_gradients(values, [b])
            energy[b] = mesh.elastic_weight[b] * float(
                np.atleast_1d(density.eval_w(xi))[0])
        else:
            energy[b] = 0.0
    return sorted(candidates, key=lambda b: (-energy[b], b))


def _tie_better(e_new, key_new, e_best, key_best, tie_tol):
    tol = tie_tol * max(1.0, abs(e_best))
    if e_new < e_best - tol:
        return True
    if e_new > e_best + tol:
        return False
    return key_new < key_best


def solve_step_exact(mesh: Mesh, density: EnergyDensity, gamma_prev: CrackSet,
                     boundary: np.ndarray, opts: StepOptions,
                     warm_start: Optional[np.ndarray] = None,
                     cache: Optional[dict] = None,
                     ramp_value: Optional[float] = None) -> DisplacementState:
    """Global minimizer of bulk + new-crack measure for one load value.

    Searches every crack pattern that the surface-cost bound cannot exclude;
    equivalent to full enumeration over the candidate bonds, which must
    number at most ``opts.budget``.

    Under proportional loading (quadratic density, boundary = r * profile
    with zero offset) a pattern's bulk is r^2 times a load-independent
    factor; the driver passes a per-crack-epoch ``cache`` plus the current
    ``ramp_value`` so each pattern is solved once per epoch instead of once
    per knot. The winner is always re-solved at the actual load.
    """
    candidates = _candidate_ids(mesh, gamma_prev)
    if len(candidates) > opts.budget:
        raise BudgetExceededError(
            f"{len(candidates)} candidate bonds exceed the enumeration budget "
            f"{opts.budget}; raise solver.budget or use the altmin backend")
    boundary = np.atleast_2d(np.asarray(boundary, dtype=float))
    if not np.all(np.isfinite(boundary)):
        raise InvalidInputError("boundary data contains non-finite entries")
    m = boundary.shape[1]
    trunc = opts.truncate if opts.truncate is not None else (m == 1)
    bound = None
    if trunc and m == 1:
        bound = opts.truncation_bound
        if bound is None:
            bound = float(np.abs(boundary).max())

    cost_c = np.where(mesh.on_free_boundary, 0.0, mesh.surface_weight)
    prev = gamma_prev.broken
    use_cache = (cache is not None and ramp_value is not None
                 and density.is_quadratic and abs(ramp_value) > 1e-300)
    r2 = ramp_value * ramp_value if use_cache else 1.0

    explored = 0

    def solve_pattern(pattern: tuple):
        nonlocal explored
        explored += 1
        if explored > opts.max_explored:
            raise BudgetExceededError("pattern search exceeded max_explored")
        full = prev | set(pattern)
        return elastic_solve(mesh, density, frozenset(full), boundary,
                             warm=warm_start, truncate_bound=bound)

    def evaluate(pattern: tuple):
        """(values_or_None, bulk, new_surface); values lazy on cache hits."""
        surf = float(sum(cost_c[b] for b in pattern))
        key = tuple(sorted(pattern))
        if use_cache and key in cache:
            return None, cache[key] * r2, surf
        values, bulk = solve_pattern(pattern)
        if use_cache and key:
            cache[key] = bulk / r2
        return values, bulk, surf

    # the empty pattern is solved fresh every knot: it seeds the incumbent,
    # the stress ordering and the warm field
    best_values, best_bulk = solve_pattern(())
    best_surf = 0.0
    best_e = best_bulk
    best_key = (0.0, ())
    best_pattern = ()

    # visit candidates in decreasing stored-energy order: breaking the most
    # loaded bond first drops the incumbent fast, which tightens the surface
    # bound; the comparator makes the winner order-independent
    order = _stress_order(mesh, density, candidates, best_values)

    def descend(pattern: tuple, surf: float, start: int):
        nonlocal best_values, best_bulk, best_surf, best_e, best_key, best_pattern
        for idx in range(start, len(order)):
            b = order[idx]
            child_surf = surf + cost_c[b]
            # bulk >= 0, so the surface cost bounds every superset from below
            if child_surf > best_e + opts.tie_tolerance * max(1.0, abs(best_e)):
                continue
            child = pattern + (b,)
            values, bulk, csurf = evaluate(child)
            e = bulk + csurf
            key = (csurf, tuple(sorted(child)))
            if _tie_better(e, key, best_e, best_key, opts.tie_tolerance):
                best_values, best_bulk, best_surf = values, bulk, csurf
                best_e, best_key, best_pattern = e, key, child
            descend(child, child_surf, idx + 1)

    descend((), 0.0, 0)

    if best_values is None:
        best_values, best_bulk = solve_pattern(best_pattern)

    return DisplacementState(
        values=best_values, jump=frozenset(best_pattern),
        bulk_energy=best_bulk, new_surface=best_surf,
        max_abs=float(np.abs(best_values).max()) if best_values.size else 0.0,
    )


def verify_own_jump_minimality(mesh: Mesh, density: EnergyDensity,
                               state: DisplacementState, gamma_prev: CrackSet,
                               boundary: np.ndarray, opts: StepOptions) -> float:
    """Re-minimize with the crack frozen to gamma_prev + state.jump.

    The surface term vanishes on the frozen crack, so the residual is the
    bulk excess of the state over the re-solve; a genuine minimizer for its
    own jump set gives a residual in [0, solver tolerance].
    """
    boundary = np.atleast_2d(np.asarray(boundary, dtype=float))
    full = frozenset(gamma_prev.broken | state.jump)
    if state.stiffness_scale is not None:
        _, bulk = elastic_solve(mesh, density, frozenset(gamma_prev.broken),
                                boundary, stiffness_scale=state.stiffness_scale)
    else:
        _, bulk = elastic_solve(mesh, density, full, boundary)
    return state.bulk_energy - bulk


def gradient_p_norm(mesh: Mesh, values: np.ndarray, broken: frozenset,
                    p: float) -> float:
    """Discrete p-norm of the gradient over unbroken interior bonds."""
    interior = mesh.interior_ids
    keep = np.fromiter((b not in broken for b in interior), dtype=bool,
                       count=len(interior))
    ids = interior[keep]
    if len(ids) == 0:
        return 0.0
    xi = mesh.bond_gradients(np.atleast_2d(values), ids)
    norms = np.linalg.norm(xi, axis=-1)
    return float(np.dot(mesh.elastic_weight[ids], norms**p) ** (1.0 / p))


def apriori_gradient_constant(density: EnergyDensity, mesh: Mesh) -> float:
    """Constant C with ||grad u||_p <= C (||grad g||_p + 1), from the growth bounds.

    Testing the step minimizer against the lifted boundary datum gives
    ||grad u||_p^p <= C0^2 ||grad g||_p^p + 2 C0^2 V with C0 the growth
    constant and V the discrete volume, whence the advertised form.
    """
    c0 = density.growth_constant
    v = mesh.elastic_volume
    p = density.p
    return c0 ** (2.0 / p) * max(1.0, (2.0 * v) ** (1.0 / p))

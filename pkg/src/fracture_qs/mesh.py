"""Lattice discretization of the sample and the boundary displacement program.

The domain is an axis-aligned interval (1D) or rectangle (2D) sampled on a
uniform grid of spacing h. Nodes carry the displacement; bonds connect
adjacent nodes and carry two weights:

* an elastic quadrature weight (h in 1D; h^2 in 2D, halved on boundary rows
  or columns so that affine fields integrate exactly), and
* a surface weight kappa * h^{N-1}, the cost of breaking the bond. Broken
  bonds are the discrete crack; their dual facets approximate the
  (N-1)-dimensional crack measure exactly for grid-aligned paths.

Dirichlet data enters through ghost bonds: each node of a gripped side is
tied to a ghost pinned at the imposed displacement, and the tie itself is
breakable at its surface cost (debonding). Free sides get no ghosts; bonds
lying along a free side are flagged and cost nothing in the reduced measure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidGeometryError, InvalidMeshError, OutOfRangeError

_SNAP = 1e-9

KIND_INTERIOR = 0
KIND_GHOST = 1


@dataclass(frozen=True)
class NotchSpec:
    """A pre-broken straight segment.

    ``orientation`` is the axis the notch runs along ("x" for a horizontal
    cut at height ``position``, "y" for a vertical cut at abscissa
    ``position``); the notch covers the half-open span (start, stop] along
    its axis and pre-breaks the transverse bonds it crosses.
    """

    orientation: str
    position: float
    start: float
    stop: float


@dataclass(frozen=True)
class Mesh:
    dimension: int
    spacing: float
    kappa: float
    grid_shape: tuple
    node_coords: np.ndarray          # (n_nodes, dimension)
    bond_kind: np.ndarray            # (n_bonds,) KIND_*
    bond_i: np.ndarray               # (n_bonds,) node id
    bond_j: np.ndarray               # (n_bonds,) node id, -1 for ghosts
    elastic_weight: np.ndarray       # (n_bonds,) zero for ghosts
    bond_length: np.ndarray          # (n_bonds,)
    surface_weight: np.ndarray       # (n_bonds,) kappa-weighted
    on_free_boundary: np.ndarray     # (n_bonds,) bool
    notch_bonds: tuple = ()
    boundary_spec: tuple = ()
    extents: tuple = ()

    def __post_init__(self):
        if np.any(self.surface_weight <= 0):
            raise InvalidMeshError("surface weights must be positive")
        if not np.isfinite(self.surface_weight.sum()):
            raise InvalidMeshError("total breakable measure must be finite")

    @property
    def n_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def n_bonds(self) -> int:
        return self.bond_kind.shape[0]

    @property
    def interior_ids(self) -> np.ndarray:
        return np.nonzero(self.bond_kind == KIND_INTERIOR)[0]

    @property
    def ghost_ids(self) -> np.ndarray:
        return np.nonzero(self.bond_kind == KIND_GHOST)[0]

    @property
    def breakable_ids(self) -> np.ndarray:
        return np.arange(self.n_bonds)

    @property
    def total_breakable_measure(self) -> float:
        return float(self.surface_weight.sum())

    @property
    def elastic_volume(self) -> float:
        """Sum of elastic quadrature weights (the discrete |Omega| per term)."""
        return float(self.elastic_weight.sum())

    def bond_gradients(self, values: np.ndarray, bond_ids=None) -> np.ndarray:
        """Directional gradients (u_j - u_i)/len on interior bonds.

        ``values`` has shape (n_nodes, m); the result is (k, m).
        """
        ids = self.interior_ids if bond_ids is None else np.asarray(bond_ids)
        i = self.bond_i[ids]
        j = self.bond_j[ids]
        ell = self.bond_length[ids][:, None]
        return (values[j] - values[i]) / ell


def build_bar(length: float, node_count: int, kappa: float = 1.0) -> Mesh:
    """1D chain: ``node_count`` nodes, n-1 interior bonds, 2 end ghost bonds.

    Each bond's surface weight is kappa (h^0 = 1); interior bonds carry the
    elastic weight h = length/(n-1). Ghost bonds pin the end nodes to the
    imposed displacement and are breakable like any other bond.
    """
    if node_count < 2:
        raise InvalidMeshError("a bar needs at least 2 nodes")
    if not (length > 0 and kappa > 0):
        raise InvalidMeshError("length and kappa must be positive")
    n = node_count
    h = length / (n - 1)
    coords = np.linspace(0.0, length, n).reshape(-1, 1)

    n_int = n - 1
    kind = np.concatenate([np.full(n_int, KIND_INTERIOR, dtype=np.uint8),
                           np.full(2, KIND_GHOST, dtype=np.uint8)])
    bi = np.concatenate([np.arange(n_int), [0, n - 1]]).astype(np.int64)
    bj = np.concatenate([np.arange(1, n), [-1, -1]]).astype(np.int64)
    w_el = np.concatenate([np.full(n_int, h), [0.0, 0.0]])
    ell = np.concatenate([np.full(n_int, h), [1.0, 1.0]])
    w_sf = np.full(n_int + 2, kappa)
    free = np.zeros(n_int + 2, dtype=bool)
    return Mesh(
        dimension=1, spacing=h, kappa=kappa, grid_shape=(n,),
        node_coords=coords, bond_kind=kind, bond_i=bi, bond_j=bj,
        elastic_weight=w_el, bond_length=ell, surface_weight=w_sf,
        on_free_boundary=free, boundary_spec=(("left", "dirichlet"), ("right", "dirichlet")),
        extents=(length,),
    )


def _grid_count(extent: float, h: float, name: str) -> int:
    n = int(round(extent / h))
    if n < 1 or abs(n * h - extent) > _SNAP * max(1.0, extent):
        raise InvalidMeshError(f"spacing h must divide the {name}")
    return n


def _notch_bond_ids(notch: NotchSpec, h: float, nx: int, ny: int,
                    n_horizontal: int) -> list:
    """Transverse bonds crossed by the notch (grid positions in (start, stop])."""
    if notch.orientation not in ("x", "y"):
        raise InvalidGeometryError("notch orientation must be 'x' or 'y'")
    along_extent = nx * h if notch.orientation == "x" else ny * h
    trans_extent = ny * h if notch.orientation == "x" else nx * h
    a, b, c = notch.start, notch.stop, notch.position
    for val, label in ((a, "start"), (b, "stop")):
        if abs(val / h - round(val / h)) > _SNAP:
            raise InvalidGeometryError(f"notch {label} is not grid-aligned")
    if not (0.0 <= a < b <= along_extent + _SNAP):
        raise InvalidGeometryError("notch span must lie inside the domain")
    if not (_SNAP < c < trans_extent - _SNAP):
        raise InvalidGeometryError("notch position must be strictly interior")

    k_lo = int(round(a / h)) + 1          # first grid line strictly past `start`
    k_hi = int(round(b / h))              # last grid line at or before `stop`
    row = int(np.floor(c / h + _SNAP))    # transverse cell [row*h, (row+1)*h) containing c
    ids = []
    for k in range(k_lo, k_hi + 1):
        if notch.orientation == "x":
            # cuts the vertical bond at column k between rows `row` and `row+1`
            ids.append(n_horizontal + row * (nx + 1) + k)
        else:
            # cuts the horizontal bond at row k between columns `row` and `row+1`
            ids.append(k * nx + row)
    return ids


def build_rect(width: float, height: float, h: float,
               notch: Optional[NotchSpec] = None,
               boundary: Optional[dict] = None,
               kappa: float = 1.0) -> Mesh:
    """2D grid mesh on [0, width] x [0, height].

    ``boundary`` maps side names ("left", "right", "bottom", "top") to
    "dirichlet" or "free"; the default grips every side. At least one side
    must be gripped. The free part of the boundary is closed: a corner node
    shared with a free side gets no ghost. A notch pre-breaks the transverse
    bonds it crosses; the resulting ids are recorded in ``notch_bonds``.
    """
    if not (width > 0 and height > 0 and h > 0 and kappa > 0):
        raise InvalidMeshError("width, height, h, kappa must be positive")
    nx = _grid_count(width, h, "width")
    ny = _grid_count(height, h, "height")
    spec = {"left": "dirichlet", "right": "dirichlet",
            "bottom": "dirichlet", "top": "dirichlet"}
    if boundary:
        for side, kind in boundary.items():
            if side not in spec or kind not in ("dirichlet", "free"):
                raise InvalidMeshError(f"bad boundary entry {side}={kind}")
            spec[side] = kind
    if all(v == "free" for v in spec.values()):
        raise InvalidMeshError("at least one side must be gripped (all-free sample is undriven)")

    n_nodes = (nx + 1) * (ny + 1)
    xs = np.arange(nx + 1) * h
    ys = np.arange(ny + 1) * h
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    coords = np.stack([gx.ravel(), gy.ravel()], axis=-1)  # row-major: iy*(nx+1)+ix

    def node(ix, iy):
        return iy * (nx + 1) + ix

    bi, bj, w_el, w_sf, free_flag = [], [], [], [], []
    # horizontal bonds, row-major
    for iy in range(ny + 1):
        row_factor = 0.5 if iy in (0, ny) else 1.0
        row_free = (iy == 0 and spec["bottom"] == "free") or (iy == ny and spec["top"] == "free")
        for ix in range(nx):
            bi.append(node(ix, iy))
            bj.append(node(ix + 1, iy))
            w_el.append(h * h * row_factor)
            w_sf.append(kappa * h)
            free_flag.append(row_free)
    n_horizontal = len(bi)
    # vertical bonds, row-major
    for iy in range(ny):
        for ix in range(nx + 1):
            col_factor = 0.5 if ix in (0, nx) else 1.0
            col_free = (ix == 0 and spec["left"] == "free") or (ix == nx and spec["right"] == "free")
            bi.append(node(ix, iy))
            bj.append(node(ix, iy + 1))
            w_el.append(h * h * col_factor)
            w_sf.append(kappa * h)
            free_flag.append(col_free)
    n_int = len(bi)

    # ghost bonds per gripped side, skipping nodes that belong to a free side
    def on_free_side(ix, iy):
        return ((ix == 0 and spec["left"] == "free") or (ix == nx and spec["right"] == "free")
                or (iy == 0 and spec["bottom"] == "free") or (iy == ny and spec["top"] == "free"))

    side_nodes = {
        "left": [(0, iy) for iy in range(ny + 1)],
        "right": [(nx, iy) for iy in range(ny + 1)],
        "bottom": [(ix, 0) for ix in range(nx + 1)],
        "top": [(ix, ny) for ix in range(nx + 1)],
    }
    for side in ("left", "right", "bottom", "top"):
        if spec[side] != "dirichlet":
            continue
        along = (ny if side in ("left", "right") else nx) * h
        for ix, iy in side_nodes[side]:
            if on_free_side(ix, iy):
                continue
            pos = iy * h if side in ("left", "right") else ix * h
            facet = min(pos + h / 2, along) - max(pos - h / 2, 0.0)
            bi.append(node(ix, iy))
            bj.append(-1)
            w_el.append(0.0)
            w_sf.append(kappa * facet)
            free_flag.append(False)

    n_bonds = len(bi)
    kind = np.concatenate([np.full(n_int, KIND_INTERIOR, dtype=np.uint8),
                           np.full(n_bonds - n_int, KIND_GHOST, dtype=np.uint8)])
    ell = np.concatenate([np.full(n_int, h), np.ones(n_bonds - n_int)])
    mesh = Mesh(
        dimension=2, spacing=h, kappa=kappa, grid_shape=(nx + 1, ny + 1),
        node_coords=coords,
        bond_kind=kind,
        bond_i=np.asarray(bi, dtype=np.int64),
        bond_j=np.asarray(bj, dtype=np.int64),
        elastic_weight=np.asarray(w_el), bond_length=ell,
        surface_weight=np.asarray(w_sf),
        on_free_boundary=np.asarray(free_flag, dtype=bool),
        boundary_spec=tuple(sorted(spec.items())),
        extents=(width, height),
    )
    if notch is not None:
        ids = _notch_bond_ids(notch, h, nx, ny, n_horizontal)
        if not ids:
            raise InvalidGeometryError("notch crosses no bond")
        object.__setattr__(mesh, "notch_bonds", tuple(ids))
    assert n_nodes == mesh.n_nodes
    return mesh


# -- boundary displacement program ------------------------------------------

_PROFILES = ("stretch_x", "shear_y", "shear_y_taper", "uniform")


def make_profile(mesh: Mesh, name: str, components: int = 1) -> np.ndarray:
    """Nodal profile G evaluated at every node (ghosts read their node's entry).

    ``shear_y_taper`` is the antiplane shear y/H scaled by (1 - x/W): the
    imposed strain decays along x, which turns crack advance from a
    left-edge notch into stable bond-by-bond growth.
    """
    if name not in _PROFILES:
        raise InvalidMeshError(f"unknown load profile {name!r}")
    n = mesh.n_nodes
    if name == "uniform":
        base = np.ones(n)
    elif name == "stretch_x":
        base = mesh.node_coords[:, 0] / mesh.extents[0]
    else:
        if mesh.dimension < 2:
            raise InvalidMeshError(f"{name} needs a 2D mesh")
        base = mesh.node_coords[:, 1] / mesh.extents[1]
        if name == "shear_y_taper":
            base = base * (1.0 - mesh.node_coords[:, 0] / mesh.extents[0])
    out = np.zeros((n, components))
    out[:, 0] = base
    return out


@dataclass(frozen=True)
class LoadProgram:
    """g(t) = g0 + r(t) * G with r piecewise linear on [0, T].

    ``profile`` and ``offset`` are full nodal fields of shape (n_nodes, m);
    the ghost of a gripped node reads that node's entry, and the interior
    entries are the affine lift used for the work integral.
    """

    profile: np.ndarray
    offset: np.ndarray
    schedule: tuple            # ((t0, r0), (t1, r1), ...), t0 = 0, tk = horizon
    horizon: float

    def __post_init__(self):
        knots = np.asarray([t for t, _ in self.schedule], dtype=float)
        if len(knots) < 2 or knots[0] != 0.0 or abs(knots[-1] - self.horizon) > _SNAP:
            raise InvalidMeshError("schedule must start at 0 and end at the horizon")
        if np.any(np.diff(knots) <= 0):
            raise InvalidMeshError("schedule knots must be strictly increasing")
        if self.profile.shape != self.offset.shape:
            raise InvalidMeshError("profile and offset shapes differ")

    @classmethod
    def ramp(cls, mesh: Mesh, profile_name: str = "stretch_x", rate: float = 1.0,
             horizon: float = 1.0, offset: float = 0.0, components: int = 1) -> "LoadProgram":
        prof = make_profile(mesh, profile_name, components)
        off = np.full_like(prof, offset)
        return cls(profile=prof, offset=off,
                   schedule=((0.0, 0.0), (horizon, rate * horizon)), horizon=horizon)

    def _check_time(self, t: float):
        if t < -_SNAP or t > self.horizon + _SNAP:
            raise OutOfRangeError(f"t={t} outside [0, {self.horizon}]")

    def ramp_value(self, t: float) -> float:
        """r(t) by piecewise-linear interpolation of the schedule knots."""
        self._check_time(t)
        knots = [k for k, _ in self.schedule]
        vals = [v for _, v in self.schedule]
        return float(np.interp(t, knots, vals))

    def ramp_rate(self, t: float) -> float:
        """Right derivative of r (left derivative at the horizon)."""
        self._check_time(t)
        knots = [k for k, _ in self.schedule]
        vals = [v for _, v in self.schedule]
        if t >= knots[-1] - _SNAP:
            i = len(knots) - 2
        else:
            i = int(np.searchsorted(knots, t + _SNAP) - 1)
            i = max(0, min(i, len(knots) - 2))
        return (vals[i + 1] - vals[i]) / (knots[i + 1] - knots[i])

    def values(self, t: float) -> np.ndarray:
        """Full nodal field g(t) = g0 + r(t) G."""
        return self.offset + self.ramp_value(t) * self.profile

    def rates(self, t: float) -> np.ndarray:
        """Full nodal field g-dot(t) = r-dot(t) G."""
        return self.ramp_rate(t) * self.profile

    def sup_norm(self) -> float:
        """sup over [0, T] and nodes of the max-abs component of g(t).

        r is piecewise linear, so the sup is attained at a schedule knot.
        """
        best = 0.0
        for t, _ in self.schedule:
            best = max(best, float(np.abs(self.values(t)).max()))
        return best


def boundary_values(load: LoadProgram, t: float) -> np.ndarray:
    """Nodal ghost values at time t (full lifted field; ghosts read their node)."""
    return load.values(t)


def time_derivative(load: LoadProgram, t: float) -> np.ndarray:
    """Nodal ghost rates at time t."""
    return load.rates(t)

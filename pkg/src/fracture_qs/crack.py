"""Irreversible crack sets.

A crack is a finite set of broken bond ids. Snapshots are value-semantic:
updates return new sets, so trajectories can hand them across workers and
set inclusion is decidable exactly (no tolerances).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .mesh import Mesh


@dataclass(frozen=True)
class CrackSet:
    mesh: Mesh
    broken: frozenset

    @classmethod
    def empty(cls, mesh: Mesh) -> "CrackSet":
        return cls(mesh, frozenset())

    @classmethod
    def from_ids(cls, mesh: Mesh, ids) -> "CrackSet":
        ids = frozenset(int(b) for b in ids)
        _check_ids(mesh, ids)
        return cls(mesh, ids)

    @classmethod
    def initial(cls, mesh: Mesh) -> "CrackSet":
        """The mesh's pre-broken notch bonds (Gamma_0)."""
        return cls.from_ids(mesh, mesh.notch_bonds)

    def sorted_ids(self) -> list:
        return sorted(self.broken)

    def __contains__(self, bond_id) -> bool:
        return int(bond_id) in self.broken

    def __le__(self, other: "CrackSet") -> bool:
        return self.broken <= other.broken


def _check_ids(mesh: Mesh, ids):
    n = mesh.n_bonds
    for b in ids:
        if not (0 <= b < n):
            raise InvalidInputError(f"unknown bond id {b}")


def union_with_jump(gamma: CrackSet, jump) -> CrackSet:
    """New snapshot gamma.broken | jump; ``gamma`` itself is unmodified."""
    jump = frozenset(int(b) for b in jump)
    _check_ids(gamma.mesh, jump)
    return CrackSet(gamma.mesh, gamma.broken | jump)


def measure(gamma: CrackSet) -> float:
    """Total surface weight of the broken set (crack length/area times kappa)."""
    if not gamma.broken:
        return 0.0
    ids = np.fromiter(gamma.broken, dtype=np.int64)
    return float(gamma.mesh.surface_weight[ids].sum())


def measure_c(gamma: CrackSet) -> float:
    """Like :func:`measure` but bonds on the free boundary count zero."""
    if not gamma.broken:
        return 0.0
    ids = np.fromiter(gamma.broken, dtype=np.int64)
    keep = ~gamma.mesh.on_free_boundary[ids]
    return float(gamma.mesh.surface_weight[ids[keep]].sum())


def new_surface_measure(mesh: Mesh, jump, relative_to: frozenset) -> float:
    """Reduced measure of ``jump`` minus already-broken bonds (the step cost)."""
    fresh = [b for b in jump if b not in relative_to]
    if not fresh:
        return 0.0
    ids = np.asarray(fresh, dtype=np.int64)
    keep = ~mesh.on_free_boundary[ids]
    return float(mesh.surface_weight[ids[keep]].sum())

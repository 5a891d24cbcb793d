"""Bulk energy densities.

A density maps a gradient sample xi (an m-vector of directional derivatives
in the lattice setting) to a nonnegative scalar, with p-growth controlled by
a constant C >= 1:

    (1/C)|xi|^p - C <= W(xi) <= C|xi|^p + C

and a stress bound |DW(xi)| <= C'(1 + |xi|^{p-1}). The shipped forms are all
convex (hence quasiconvex): ``quadratic`` (|xi|^2), ``scaled-quadratic``
(c|xi|^2) and ``p-power`` (c|xi|^p). A user-supplied convex form can be
plugged in through the ``custom`` hooks, but it is excluded from the
global-minimality guarantees of the exact backend.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidInputError

_FORMS = ("quadratic", "scaled-quadratic", "p-power", "custom")


def _as_samples(xi) -> np.ndarray:
    """Coerce xi to a (k, m) float array of gradient samples."""
    arr = np.asarray(xi, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("gradient sample contains non-finite entries")
    return arr


@dataclass(frozen=True)
class EnergyDensity:
    """A bulk energy density W with its differential DW.

    Parameters
    ----------
    form : str
        One of ``quadratic``, ``scaled-quadratic``, ``p-power``, ``custom``.
    p : float
        Growth exponent, 1 < p < inf. Forced to 2 for the quadratic forms.
    coefficient : float
        Positive multiplier c in c|xi|^p.
    growth_constant : float, optional
        The constant C >= 1 of the two-sided growth bound. Defaults to the
        tightest valid value for the shipped forms. A user may pass a smaller
        (still >= 1) value; `check_growth` will then flag the violations.
    """

    form: str = "quadratic"
    p: float = 2.0
    coefficient: float = 1.0
    growth_constant: Optional[float] = None
    w_fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    dw_fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.form not in _FORMS:
            raise InvalidInputError(f"unknown density form {self.form!r}")
        if self.form in ("quadratic", "scaled-quadratic"):
            object.__setattr__(self, "p", 2.0)
        if not (1.0 < self.p < np.inf):
            raise InvalidInputError("exponent p must lie in (1, inf)")
        if not (self.coefficient > 0.0):
            raise InvalidInputError("coefficient must be positive")
        if self.form == "custom" and (self.w_fn is None or self.dw_fn is None):
            raise InvalidInputError("custom form needs w_fn and dw_fn")
        if self.growth_constant is None:
            object.__setattr__(self, "growth_constant", self._default_growth_constant())
        if self.growth_constant < 1.0:
            raise InvalidInputError("growth constant C must be >= 1")

    def _default_growth_constant(self) -> float:
        c = self.coefficient
        return max(c, 1.0 / c, 1.0)

    @property
    def dw_bound_constant(self) -> float:
        """Constant C' in |DW(xi)| <= C'(1 + |xi|^{p-1}), computed per form."""
        if self.form == "custom":
            # No closed form for user callbacks; fall back to the growth C.
            return self.growth_constant * self.p
        return self.coefficient * self.p

    @property
    def is_quadratic(self) -> bool:
        return self.form in ("quadratic", "scaled-quadratic")

    # -- evaluation --------------------------------------------------------

    def eval_w(self, xi) -> np.ndarray:
        """W(xi) for one sample or a stack of samples; returns scalar or (k,)."""
        arr = _as_samples(xi)
        norms = np.linalg.norm(arr, axis=-1)
        if self.form == "custom":
            out = np.asarray(self.w_fn(arr), dtype=float)
        elif self.is_quadratic:
            out = self.coefficient * norms**2
        else:
            out = self.coefficient * norms**self.p
        return out if out.size > 1 else float(out.reshape(-1)[0])

    def eval_dw(self, xi) -> np.ndarray:
        """DW(xi), same shape as xi (`2*c*xi` exactly for the quadratic forms)."""
        arr = _as_samples(xi)
        single = np.asarray(xi, dtype=float).ndim <= 1
        if self.form == "custom":
            out = np.asarray(self.dw_fn(arr), dtype=float)
        elif self.is_quadratic:
            out = 2.0 * self.coefficient * arr
        else:
            norms = np.linalg.norm(arr, axis=-1, keepdims=True)
            # |xi|^{p-2} xi, continuous at 0 for p > 1
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(norms > 0.0, norms ** (self.p - 2.0), 0.0)
            out = self.coefficient * self.p * scale * arr
        return out.reshape(np.asarray(xi, dtype=float).shape) if single else out


@dataclass(frozen=True)
class GrowthViolation:
    sample: tuple
    kind: str  # "lower", "upper" or "stress"
    value: float
    bound: float


@dataclass(frozen=True)
class GrowthReport:
    violations: tuple
    n_samples: int

    @property
    def passed(self) -> bool:
        return not self.violations


def check_growth(density: EnergyDensity, samples) -> GrowthReport:
    """Check the two-sided growth bound and the DW bound on a sample set.

    An empty violation list means every sample satisfied

        (1/C)|xi|^p - C <= W(xi) <= C|xi|^p + C,
        |DW(xi)| <= C'(1 + |xi|^{p-1})

    with C the stored growth constant and C' the derived stress constant.
    """
    arr = _as_samples(samples)
    if arr.shape[0] == 0:
        raise InvalidInputError("sample set must be nonempty")
    c_growth = density.growth_constant
    c_stress = density.dw_bound_constant
    norms = np.linalg.norm(arr, axis=-1)
    w = np.atleast_1d(density.eval_w(arr))
    dw = np.linalg.norm(np.atleast_2d(density.eval_dw(arr)), axis=-1)
    lower = norms**density.p / c_growth - c_growth
    upper = c_growth * norms**density.p + c_growth
    stress = c_stress * (1.0 + norms ** (density.p - 1.0))

    violations = []
    for i in range(arr.shape[0]):
        sample = tuple(arr[i])
        if w[i] < lower[i] - 1e-12:
            violations.append(GrowthViolation(sample, "lower", float(w[i]), float(lower[i])))
        if w[i] > upper[i] + 1e-12:
            violations.append(GrowthViolation(sample, "upper", float(w[i]), float(upper[i])))
        if dw[i] > stress[i] + 1e-12:
            violations.append(GrowthViolation(sample, "stress", float(dw[i]), float(stress[i])))
    return GrowthReport(tuple(violations), arr.shape[0])


def default_growth_samples(m: int = 1, radius: float = 4.0, n_random: int = 64,
                           seed: int = 7) -> np.ndarray:
    """Deterministic lattice of gradient samples plus seeded random draws."""
    ticks = np.linspace(-radius, radius, 9)
    if m == 1:
        lattice = ticks.reshape(-1, 1)
    else:
        grids = np.meshgrid(*([ticks] * m), indexing="ij")
        lattice = np.stack([g.ravel() for g in grids], axis=-1)
    rng = np.random.RandomState(seed)
    random_part = rng.uniform(-radius, radius, size=(n_random, m))
    return np.vstack([lattice, random_part])

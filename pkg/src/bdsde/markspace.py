"""Finite-atom discretizations of the mark-space measures.

Every mark space used by the drivers (the white-noise space ``E``, the jump
spaces ``U0`` and ``U1`` and the forward jump space ``F``) is represented by a
:class:`DiscreteMeasureSpace`: a list of atoms with nonnegative masses.
Interval supports are cut into equal cells; the atom sits at the cell midpoint
and carries the mass of its cell.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate


class MeasureError(ValueError):
    """Raised for empty supports or densities that do not integrate."""


@dataclass(frozen=True)
class TruncationRecord:
    level: int
    lower: float
    upper: float


@dataclass(frozen=True)
class DiscreteMeasureSpace:
    """A finite measure given by atoms and masses.

    ``coords`` holds a real coordinate per atom (NaN for pure labels) and is
    what the coefficient maps receive as their mark argument.
    """

    labels: tuple
    coords: np.ndarray
    weights: np.ndarray
    truncation_level: Optional[TruncationRecord] = None
    empty_warning: bool = False
    total_mass: float = field(init=False)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.labels) != coords.size or coords.size != weights.size:
            raise MeasureError("labels, coords and weights must have equal length")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise MeasureError("atom weights must be finite and nonnegative")
        if len(set(self.labels)) != len(self.labels):
            raise MeasureError("atoms must be distinct")
        coords.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "total_mass", math.fsum(weights.tolist()))

    @property
    def n_atoms(self) -> int:
        return self.weights.size

    def __len__(self):
        return self.n_atoms

    @classmethod
    def empty(cls, **kwargs) -> "DiscreteMeasureSpace":
        return cls(labels=(), coords=np.zeros(0), weights=np.zeros(0), **kwargs)

    @classmethod
    def from_atoms(cls, atoms: Sequence) -> "DiscreteMeasureSpace":
        """Build from ``(label, weight)`` or ``(label, coord, weight)`` tuples."""
        labels, coords, weights = [], [], []
        for atom in atoms:
            if len(atom) == 2:
                label, w = atom
                coord = _coord_of(label)
            elif len(atom) == 3:
                label, coord, w = atom
            else:
                raise MeasureError(f"cannot read atom {atom!r}")
            labels.append(label)
            coords.append(float(coord))
            weights.append(float(w))
        return cls(labels=tuple(labels), coords=np.array(coords), weights=np.array(weights))

    def integrate(self, values: np.ndarray, axis: int = -1) -> np.ndarray:
        """Sum ``values * weight`` over the atom axis."""
        values = np.asarray(values, dtype=float)
        values = np.moveaxis(values, axis, -1)
        return np.sum(values * self.weights, axis=-1)


def _coord_of(label) -> float:
    try:
        return float(label)
    except (TypeError, ValueError):
        return float("nan")


@dataclass(frozen=True)
class Density:
    """A density on a real interval.

    ``antiderivative`` is used for cell masses when given; otherwise the
    density is integrated numerically cell by cell.
    """

    pdf: Callable[[np.ndarray], np.ndarray]
    antiderivative: Optional[Callable[[float], float]] = None
    name: str = "density"

    def cell_mass(self, lo: float, hi: float) -> float:
        if self.antiderivative is not None:
            mass = self.antiderivative(hi) - self.antiderivative(lo)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("error", integrate.IntegrationWarning)
                try:
                    mass, _ = integrate.quad(lambda x: float(self.pdf(np.asarray(x))), lo, hi, limit=200)
                except (integrate.IntegrationWarning, ZeroDivisionError) as exc:
                    raise MeasureError(f"{self.name} is not integrable on [{lo}, {hi}]: {exc}") from exc
        if not np.isfinite(mass) or mass < 0:
            raise MeasureError(f"{self.name} is not integrable on [{lo}, {hi}]")
        return float(mass)


def uniform_density(scale: float = 1.0) -> Density:
    """Constant density ``scale`` (Lebesgue measure when ``scale == 1``)."""
    return Density(lambda x: np.full_like(np.asarray(x, dtype=float), scale),
                   antiderivative=lambda x: scale * x, name=f"uniform({scale})")


def power_density(exponent: float, scale: float = 1.0) -> Density:
    """Density ``scale * z**exponent`` on a subset of ``(0, inf)``."""
    p = float(exponent)

    def pdf(x):
        return scale * np.power(np.asarray(x, dtype=float), p)

    def anti(x):
        if x <= 0 and p <= -1:
            return -math.inf if p < -1 or x == 0 else math.nan
        if p == -1:
            return scale * math.log(x)
        return scale * x ** (p + 1) / (p + 1)

    return Density(pdf, antiderivative=anti, name=f"power({p})")


def discretize_measure(
    density_spec: Union[Density, Sequence],
    support: Optional[tuple] = None,
    n_atoms: int = 1,
    rule: str = "exact",
) -> DiscreteMeasureSpace:
    """Discretize a density on an interval, or wrap an explicit atom list.

    Atoms sit at cell midpoints. With ``rule="exact"`` each atom carries the
    integrated mass of its cell; ``rule="midpoint"`` uses density at the
    midpoint times the cell width instead.
    """
    if not isinstance(density_spec, Density):
        return DiscreteMeasureSpace.from_atoms(density_spec)
    if n_atoms < 1:
        raise MeasureError("n_atoms must be at least 1")
    if support is None:
        raise MeasureError("an interval support is required for a density")
    lo, hi = (float(v) for v in support)
    if not hi > lo:
        raise MeasureError(f"empty support [{lo}, {hi}]")
    edges = np.linspace(lo, hi, n_atoms + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    if rule == "exact":
        weights = [density_spec.cell_mass(a, b) for a, b in zip(edges[:-1], edges[1:])]
    elif rule == "midpoint":
        weights = np.asarray(density_spec.pdf(mids), dtype=float) * np.diff(edges)
        if not np.all(np.isfinite(weights)):
            raise MeasureError(f"{density_spec.name} is not finite on the support")
        # the midpoint rule never sees an endpoint singularity, so check the cells too
        _ = [density_spec.cell_mass(a, b) for a, b in ((edges[0], edges[1]), (edges[-2], edges[-1]))]
    else:
        raise MeasureError(f"unknown quadrature rule {rule!r}")
    labels = tuple(f"{m:.12g}" for m in mids)
    return DiscreteMeasureSpace(labels=labels, coords=mids, weights=np.asarray(weights, dtype=float))


def reciprocal_exhaustion(level: int) -> tuple:
    """The family ``F_n = [1/n, n]``."""
    return (1.0 / level, float(level))


def truncate_measure(
    density: Density,
    support: tuple,
    level: int,
    n_atoms: int,
    family: Callable[[int], tuple] = reciprocal_exhaustion,
) -> DiscreteMeasureSpace:
    """Restrict a sigma-finite density to ``family(level)`` and discretize it.

    ``family`` must be increasing in ``level`` with union equal to the
    support. An empty or degenerate cell yields an empty space with
    ``empty_warning`` set.
    """
    if level < 1:
        raise MeasureError("truncation level must be at least 1")
    f_lo, f_hi = family(level)
    lo = max(float(support[0]), float(f_lo))
    hi = min(float(support[1]), float(f_hi))
    record = TruncationRecord(level=level, lower=lo, upper=hi)
    if not hi > lo:
        warnings.warn(f"truncation level {level} gives an empty set [{lo}, {hi}]", stacklevel=2)
        return DiscreteMeasureSpace.empty(truncation_level=record, empty_warning=True)
    space = discretize_measure(density, (lo, hi), n_atoms)
    return DiscreteMeasureSpace(labels=space.labels, coords=space.coords, weights=space.weights,
                                truncation_level=record)

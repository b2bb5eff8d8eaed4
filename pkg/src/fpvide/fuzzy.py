"""Fuzzy numbers in parametric (r-cut) form, sampled on a membership grid."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

TOL = 1e-12


class GridMismatchError(ValueError):
    pass


class NoHukuharaDifference(ArithmeticError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("no Hukuhara difference: " + "; ".join(self.violations))


@dataclass(frozen=True)
class MembershipGrid:
    levels: tuple[float, ...]

    def __post_init__(self):
        lv = tuple(float(v) for v in self.levels)
        object.__setattr__(self, "levels", lv)
        if len(lv) < 2:
            raise ValueError("a membership grid needs at least the levels 0 and 1")
        if lv[0] != 0.0 or lv[-1] != 1.0:
            raise ValueError("membership grid must start at 0 and end at 1")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError("membership levels must be strictly increasing")

    @classmethod
    def uniform(cls, n: int = 11) -> "MembershipGrid":
        return cls(tuple(np.linspace(0.0, 1.0, n)))

    @property
    def r(self) -> np.ndarray:
        return np.array(self.levels)

    def __len__(self):
        return len(self.levels)


@dataclass(frozen=True, eq=False)
class FuzzyScalar:
    """Lower and upper r-cut endpoints, one pair per grid level.

    Construction does not enforce the ordering conditions so that
    intermediate candidates can be inspected with :func:`validate`.
    """

    grid: MembershipGrid
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        up = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != (len(self.grid),) or up.shape != (len(self.grid),):
            raise ValueError("endpoint arrays must have one entry per membership level")
        lo.flags.writeable = False
        up.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @classmethod
    def crisp(cls, value: float, grid: MembershipGrid) -> "FuzzyScalar":
        v = np.full(len(grid), float(value))
        return cls(grid, v, v)

    @classmethod
    def from_functions(cls, lower, upper, grid: MembershipGrid) -> "FuzzyScalar":
        r = grid.r
        return cls(grid, np.broadcast_to(lower(r), r.shape), np.broadcast_to(upper(r), r.shape))

    @classmethod
    def triangular(cls, a: float, b: float, c: float, grid: MembershipGrid) -> "FuzzyScalar":
        r = grid.r
        return cls(grid, a + (b - a) * r, c - (c - b) * r)

    def is_crisp(self, tol: float = TOL) -> bool:
        return bool(np.all(np.abs(self.upper - self.lower) <= tol))

    def __add__(self, other):
        if isinstance(other, FuzzyScalar):
            return fuzzy_add(self, other)
        return NotImplemented

    def __rmul__(self, j):
        return fuzzy_scale(j, self)

    def __repr__(self):
        return (f"FuzzyScalar(levels={len(self.grid)}, r=0: [{self.lower[0]:.6g}, {self.upper[0]:.6g}], "
                f"r=1: [{self.lower[-1]:.6g}, {self.upper[-1]:.6g}])")


def _same_grid(u: FuzzyScalar, v: FuzzyScalar):
    if u.grid != v.grid:
        raise GridMismatchError("fuzzy numbers are sampled on different membership grids")


def fuzzy_add(u: FuzzyScalar, v: FuzzyScalar) -> FuzzyScalar:
    _same_grid(u, v)
    return FuzzyScalar(u.grid, u.lower + v.lower, u.upper + v.upper)


def fuzzy_scale(j: float, u: FuzzyScalar) -> FuzzyScalar:
    """Crisp multiple of ``u``; a negative factor swaps the endpoints."""
    j = float(j)
    if j >= 0:
        return FuzzyScalar(u.grid, j * u.lower, j * u.upper)
    return FuzzyScalar(u.grid, j * u.upper, j * u.lower)


def validate(u: FuzzyScalar, tol: float = TOL) -> list[str]:
    """Violated parametric-form conditions; an empty list means valid."""
    r = u.grid.levels
    out = []
    for k in np.flatnonzero(np.diff(u.lower) < -tol):
        out.append(f"condition 1 (lower non-decreasing) fails between r={r[k]:g} and r={r[k + 1]:g}")
    for k in np.flatnonzero(np.diff(u.upper) > tol):
        out.append(f"condition 2 (upper non-increasing) fails between r={r[k]:g} and r={r[k + 1]:g}")
    for k in np.flatnonzero(u.lower - u.upper > tol):
        out.append(f"condition 3 (lower <= upper) fails at r={r[k]:g}")
    if not (np.all(np.isfinite(u.lower)) and np.all(np.isfinite(u.upper))):
        out.append("endpoints are not finite")
    return out


def is_valid(u: FuzzyScalar, tol: float = TOL) -> bool:
    return not validate(u, tol)


def hukuhara_diff(u: FuzzyScalar, v: FuzzyScalar, tol: float = TOL) -> FuzzyScalar:
    """The z with u = v + z, raising NoHukuharaDifference when z is not a fuzzy number."""
    _same_grid(u, v)
    z = FuzzyScalar(u.grid, u.lower - v.lower, u.upper - v.upper)
    problems = validate(z, tol)
    if problems:
        raise NoHukuharaDifference(problems)
    return z


def hausdorff_distance(u: FuzzyScalar, v: FuzzyScalar) -> float:
    _same_grid(u, v)
    return float(max(np.max(np.abs(u.lower - v.lower)), np.max(np.abs(u.upper - v.upper))))


def validate_arrays(lower: np.ndarray, upper: np.ndarray, tol: float, axis: int = -1) -> dict[str, np.ndarray]:
    """Vectorised form of :func:`validate` over stacks of r-slices.

    Returns boolean masks (reduced over ``axis``) flagging slices that break
    each condition.
    """
    lower = np.moveaxis(np.asarray(lower), axis, -1)
    upper = np.moveaxis(np.asarray(upper), axis, -1)
    return {
        "lower_monotone": np.any(np.diff(lower, axis=-1) < -tol, axis=-1),
        "upper_monotone": np.any(np.diff(upper, axis=-1) > tol, axis=-1),
        "ordering": np.any(lower - upper > tol, axis=-1),
    }


class FuzzyField:
    """Fuzzy values on an (x, t) product grid sharing one membership grid.

    ``lower`` and ``upper`` are indexed ``[x, t, r]``.
    """

    def __init__(self, x_grid: Iterable[float], t_grid: Iterable[float], grid: MembershipGrid,
                 lower: np.ndarray, upper: np.ndarray):
        self.x = np.asarray(x_grid, dtype=float)
        self.t = np.asarray(t_grid, dtype=float)
        self.grid = grid
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        shape = (len(self.x), len(self.t), len(grid))
        if self.lower.shape != shape or self.upper.shape != shape:
            raise ValueError(f"expected arrays of shape {shape}, got {self.lower.shape} and {self.upper.shape}")

    @property
    def r(self) -> np.ndarray:
        return self.grid.r

    def at(self, i: int, j: int) -> FuzzyScalar:
        return FuzzyScalar(self.grid, self.lower[i, j], self.upper[i, j])

    def violations(self, tol: float = TOL) -> list[str]:
        """One message per (x, t) point whose r-slice is not a fuzzy number."""
        masks = validate_arrays(self.lower, self.upper, tol)
        bad = masks["lower_monotone"] | masks["upper_monotone"] | masks["ordering"]
        out = []
        for i, j in zip(*np.nonzero(bad)):
            names = [k for k, m in masks.items() if m[i, j]]
            out.append(f"x={self.x[i]:g}, t={self.t[j]:g}: {', '.join(names)}")
        return out

"""Closed-form 1D N-marginal plans from the cyclical quantile map.

For an ordered 1-d marginal, the optimal symmetric plan for a strictly
convex decreasing pair cost is carried by the map

    T(x) = Q(F(x) + 1/N)       while F(x) <= (N-1)/N,
    T(x) = Q(F(x) + 1/N - 1)   otherwise (cyclic wrap-around),

where F is the distribution function and Q its left-continuous inverse.
In quantile coordinates T is the rotation t -> t + 1/N (mod 1), so T is
measure preserving and N-fold iteration returns to the identity. The plan
couples each point with its N - 1 forward images and is then symmetrized.

The wrap-around branch here uses the shift 1/N - 1; the additive constant
+1 - 1/N sometimes quoted for the second branch maps quantile levels outside
[0, 1] and is not measure preserving, so it is not implemented.

The discrete pushforward splits every cell along all quantile levels where
any of the N orbit positions crosses a cell boundary, which keeps the plan's
marginals exact to float precision instead of off by one straddling cell.

Guarantees hold for strictly convex, decreasing pair costs (Coulomb on the
line qualifies); the construction is exposed for every cost family, but for
non-convex choices it is a heuristic reference point, not an optimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import CostFunction, CostTensor
from .coupling import Coupling, cost_C0, symmetrize_masses
from .space import Density

__all__ = [
    "QuantileTable",
    "cdf",
    "quantile",
    "quantile_index",
    "optimal_map",
    "induced_plan",
    "oracle_cost",
]

_LEVEL_TOL = 1e-12


@dataclass(frozen=True)
class QuantileTable:
    """Sorted support points with cumulative masses and quantile lookups."""

    points: np.ndarray
    masses: np.ndarray
    cumulative: np.ndarray

    def __post_init__(self):
        for name in ("points", "masses", "cumulative"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if np.any(np.diff(self.points) <= 0):
            raise ValueError("support points must be strictly increasing")
        if np.any(np.diff(self.cumulative) < 0):
            raise ValueError("cumulative masses must be nondecreasing")
        if abs(self.cumulative[-1] - 1.0) > 1e-12:
            raise ValueError("cumulative masses must end at 1")


def cdf(density: Density) -> QuantileTable:
    """Prefix sums of the cell masses of an ordered 1-d density."""
    if not density.space.is_ordered_1d():
        raise ValueError("quantile tables need an ordered 1-d space")
    masses = density.masses
    cumulative = np.cumsum(masses)
    # pin the final level to exactly 1 so quantile levels always resolve
    cumulative = cumulative / cumulative[-1]
    return QuantileTable(density.space.points, masses, cumulative)


def quantile_index(table: QuantileTable, q) -> np.ndarray | int:
    """Index of the smallest support point whose cumulative mass reaches q."""
    q = np.asarray(q, dtype=float)
    if np.any(q < -1e-12) or np.any(q > 1 + 1e-12):
        raise ValueError("quantile levels must lie in [0, 1]")
    idx = np.searchsorted(table.cumulative, np.clip(q, 0.0, 1.0) - _LEVEL_TOL, side="left")
    idx = np.minimum(idx, len(table.points) - 1)
    return idx if idx.ndim else int(idx)


def quantile(table: QuantileTable, q):
    """Left-continuous inverse distribution function, on points."""
    return table.points[quantile_index(table, q)]


def _levels_at(table: QuantileTable, x) -> np.ndarray:
    # quantile level of a point, taken at the midpoint of its cell's mass:
    # the symmetric choice avoids the upward drift a pure prefix level would
    # accumulate under composition of the map
    x = np.asarray(x, dtype=float)
    idx = np.searchsorted(table.points, x, side="right") - 1
    safe = np.maximum(idx, 0)
    levels = table.cumulative[safe] - table.masses[safe] / 2
    return np.where(idx >= 0, levels, 0.0)


def optimal_map(table: QuantileTable, x, n_marginals: int):
    """Evaluate the cyclical map at x (scalar or array).

    Points in the lower (N-1)/N quantile body move forward by 1/N in
    quantile space; the upper tail wraps around to the bottom.
    """
    if n_marginals < 2:
        raise ValueError("need at least two marginals")
    levels = _levels_at(table, x)
    threshold = (n_marginals - 1) / n_marginals
    shifted = np.where(
        levels <= threshold + _LEVEL_TOL,
        levels + 1.0 / n_marginals,
        levels + 1.0 / n_marginals - 1.0,
    )
    shifted = np.clip(shifted, 0.0, 1.0)
    out = quantile(table, shifted)
    return out if np.asarray(x).ndim else float(out)


def induced_plan(density: Density, n_marginals: int) -> Coupling:
    """Symmetrized N-tuple plan pushed forward from the cyclical map.

    Cells are split exactly at every quantile level where any of the N orbit
    positions t + k/N (mod 1) crosses a cell boundary, so each marginal of
    the result equals the input masses to float precision.
    """
    table = cdf(density)
    m = len(table.points)
    n = n_marginals
    if n < 2:
        raise ValueError("need at least two marginals")
    cuts = [np.array([0.0, 1.0])]
    for k in range(n):
        shifted = np.mod(table.cumulative - k / n, 1.0)
        cuts.append(shifted)
    breaks = np.unique(np.concatenate(cuts))
    breaks = breaks[(breaks >= 0.0) & (breaks <= 1.0)]
    mass = np.zeros((m,) * n)
    lo = breaks[:-1]
    hi = breaks[1:]
    widths = hi - lo
    keep = widths > 1e-15
    lo, widths = lo[keep], widths[keep]
    mids = lo + widths / 2
    index_lists = []
    for k in range(n):
        level = mids + k / n
        level = np.where(level > 1.0, level - 1.0, level)
        index_lists.append(np.searchsorted(table.cumulative, level - _LEVEL_TOL, side="left"))
    for t in range(len(mids)):
        idx = tuple(index_lists[k][t] for k in range(n))
        mass[idx] += widths[t]
    mass = symmetrize_masses(mass)
    mass /= mass.sum()
    return Coupling(density.space, n, mass)


def oracle_cost(density: Density, n_marginals: int, fn: CostFunction) -> float:
    """Transport cost of the induced plan under the assembled pair cost."""
    plan = induced_plan(density, n_marginals)
    ct = CostTensor(density.space, n_marginals, fn)
    return cost_C0(plan, ct)

"""Finite metric measure spaces and discretized marginal densities.

The whole toolkit works on a finite point set carrying an explicit metric
matrix and a positive reference weight per point (cell widths, for grids).
Marginal densities are stored as weights against that reference measure, so
the cell mass at index i is ``weights[i] * ref_weights[i]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DiscreteSpace",
    "Density",
    "grid_from_pdf",
    "parse_pdf_spec",
    "entropy_of_density",
    "check_nonconcentration",
    "NonconcentrationReport",
    "tail_cost_mass",
]

UNIT_MASS_TOL = 1e-12

# Exhaustive triangle-inequality validation is cubic; skip it above this size.
TRIANGLE_CHECK_LIMIT = 200


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DiscreteSpace:
    """A finite metric measure space.

    points      : (M,) or (M, d) coordinates, or arbitrary labels packed in an
                  array; authoritative for 1-d grids, informational otherwise.
    metric      : (M, M) distances; symmetric, zero diagonal, positive off it.
    ref_weights : (M,) strictly positive reference masses.

    Instances are immutable (arrays are frozen) and safe to share between
    threads; every operation in this module is pure.
    """

    points: np.ndarray
    metric: np.ndarray
    ref_weights: np.ndarray

    def __post_init__(self):
        points = _frozen_array(self.points)
        metric = _frozen_array(self.metric)
        ref = _frozen_array(self.ref_weights)
        m = ref.shape[0]
        if points.shape[0] != m or metric.shape != (m, m):
            raise ValueError("points, metric and ref_weights sizes disagree")
        if not np.all(np.isfinite(metric)):
            raise ValueError("metric must be finite")
        if np.any(np.diag(metric) != 0.0):
            raise ValueError("metric diagonal must be zero")
        if not np.array_equal(metric, metric.T):
            raise ValueError("metric must be symmetric")
        off = metric[~np.eye(m, dtype=bool)]
        if off.size and np.min(off) <= 0.0:
            raise ValueError("distinct points must be at positive distance")
        if np.any(ref <= 0.0) or not np.all(np.isfinite(ref)):
            raise ValueError("ref_weights must be positive and finite")
        if m <= TRIANGLE_CHECK_LIMIT:
            # d(i,k) <= d(i,j) + d(j,k) for every triple, up to float dust
            via = metric[:, :, None] + metric[None, :, :]
            if np.min(via - metric[:, None, :]) < -1e-12:
                raise ValueError("metric violates the triangle inequality")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "ref_weights", ref)

    @property
    def size(self) -> int:
        return self.ref_weights.shape[0]

    @property
    def diameter(self) -> float:
        return float(np.max(self.metric))

    def is_ordered_1d(self) -> bool:
        """True when points are scalar coordinates in strictly increasing order."""
        return self.points.ndim == 1 and bool(np.all(np.diff(self.points) > 0))

    def ball(self, center: int, radius: float) -> np.ndarray:
        """Indices within closed distance ``radius`` of point ``center``."""
        return np.flatnonzero(self.metric[center] <= radius)


@dataclass(frozen=True)
class Density:
    """A probability density against the reference weights of a space.

    The weights are nonnegative and satisfy sum(weights * ref_weights) == 1
    up to ``UNIT_MASS_TOL``.
    """

    space: DiscreteSpace
    weights: np.ndarray

    def __post_init__(self):
        w = _frozen_array(self.weights)
        if w.shape != (self.space.size,):
            raise ValueError("weights size does not match the space")
        if not np.all(np.isfinite(w)) or np.any(w < 0.0):
            raise ValueError("weights must be finite and nonnegative")
        total = float(np.sum(w * self.space.ref_weights))
        if abs(total - 1.0) > UNIT_MASS_TOL:
            raise ValueError(f"density mass is {total!r}, expected 1")
        object.__setattr__(self, "weights", w)

    @property
    def masses(self) -> np.ndarray:
        """Per-point masses weights * ref_weights."""
        return self.weights * self.space.ref_weights


def parse_pdf_spec(spec: str) -> Callable[[np.ndarray], np.ndarray]:
    """Turn a CLI-style pdf string into a callable.

    Supported: ``uniform`` and ``gaussian:mu,sigma``.
    """
    if spec == "uniform":
        return lambda x: np.ones_like(np.asarray(x, dtype=float))
    if spec.startswith("gaussian:"):
        try:
            mu_s, sigma_s = spec.split(":", 1)[1].split(",")
            mu, sigma = float(mu_s), float(sigma_s)
        except ValueError as exc:
            raise ValueError(f"bad gaussian spec {spec!r}, want gaussian:mu,sigma") from exc
        if sigma <= 0:
            raise ValueError("gaussian sigma must be positive")
        return lambda x: np.exp(-((np.asarray(x, dtype=float) - mu) ** 2) / (2 * sigma**2))
    raise ValueError(f"unknown pdf spec {spec!r}")


def grid_from_pdf(
    pdf_spec,
    interval: Sequence[float],
    cells: int,
) -> tuple[DiscreteSpace, Density]:
    """Discretize a 1-d pdf on a uniform midpoint grid.

    ``pdf_spec`` is a string (see :func:`parse_pdf_spec`), a callable, or a
    tabulated sequence of ``cells`` nonnegative values. Midpoints are
    ``x_i = a + (i + 1/2) h`` with ``h = (b - a)/cells``; reference weights are
    the constant cell width; the returned density is renormalized so its total
    mass is exactly one against the grid quadrature.
    """
    a, b = float(interval[0]), float(interval[1])
    if not (b > a):
        raise ValueError("interval must satisfy b > a")
    if cells < 2:
        raise ValueError("need at least 2 grid cells")
    h = (b - a) / cells
    x = a + (np.arange(cells) + 0.5) * h
    if isinstance(pdf_spec, str):
        values = parse_pdf_spec(pdf_spec)(x)
    elif callable(pdf_spec):
        values = np.asarray(pdf_spec(x), dtype=float)
    else:
        values = np.asarray(pdf_spec, dtype=float)
        if values.shape != (cells,):
            raise ValueError("tabulated pdf must provide one value per cell")
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise ValueError("pdf values must be finite and nonnegative")
    z = float(np.sum(values) * h)
    if z == 0.0:
        raise ValueError("pdf integrates to zero on the grid")
    weights = values / z
    metric = np.abs(x[:, None] - x[None, :])
    space = DiscreteSpace(points=x, metric=metric, ref_weights=np.full(cells, h))
    return space, Density(space=space, weights=weights)


def entropy_of_density(density: Density) -> float:
    """sum of rho log(rho) against the reference weights, with 0 log 0 = 0."""
    w = density.weights
    m = density.space.ref_weights
    pos = w > 0
    return float(np.sum(w[pos] * np.log(w[pos]) * m[pos]))


@dataclass(frozen=True)
class NonconcentrationReport:
    """Outcome of the marginal non-concentration check.

    ``threshold`` is 1/(N (N-1)^2). ``probes`` lists, per probed radius, the
    worst closed-ball mass over all grid-point centers and whether it stays
    strictly below the threshold. ``largest_admissible`` is the largest probed
    admissible radius, or None when the check fails outright (in particular
    when the largest single-point mass already reaches the threshold: on a
    discrete space that is the r -> 0 limit of the ball masses).
    """

    threshold: float
    max_atom_mass: float
    atoms_ok: bool
    probes: tuple[tuple[float, float, bool], ...]
    largest_admissible: float | None


def check_nonconcentration(
    density: Density, n_marginals: int, radii: Sequence[float]
) -> NonconcentrationReport:
    """Probe the ball-mass bound sup_x rho(B(x, r)) < 1/(N (N-1)^2).

    Ball centers range over the grid points and balls are closed. The check
    is monotone in the radius, so any radius below an admissible one is
    admissible as well.
    """
    if n_marginals < 2:
        raise ValueError("need at least two marginals")
    threshold = 1.0 / (n_marginals * (n_marginals - 1) ** 2)
    masses = density.masses
    max_atom = float(np.max(masses))
    atoms_ok = max_atom < threshold
    probes = []
    for beta in radii:
        beta = float(beta)
        if beta <= 0:
            raise ValueError("probe radii must be positive")
        ball_mass = float(np.max((density.space.metric <= beta) @ masses))
        probes.append((beta, ball_mass, atoms_ok and ball_mass < threshold))
    admissible = [p[0] for p in probes if p[2]]
    largest = max(admissible) if admissible else None
    return NonconcentrationReport(
        threshold=threshold,
        max_atom_mass=max_atom,
        atoms_ok=atoms_ok,
        probes=tuple(probes),
        largest_admissible=largest,
    )


def tail_cost_mass(density: Density, cost_fn, origin: int, inner_radius: float) -> float:
    """Integral of f(2 d(x, o)) over the density outside a closed ball.

    On a finite space the sum is always finite; the value is reported so the
    tail behavior of a cost family can be inspected (the analogue of a moment
    condition for attractive costs). Empty exteriors yield 0.
    """
    if inner_radius <= 0:
        raise ValueError("inner radius must be positive")
    d = density.space.metric[origin]
    outside = d > inner_radius
    if not np.any(outside):
        return 0.0
    values = cost_fn(2.0 * d[outside])
    return float(np.sum(values * density.masses[outside]))

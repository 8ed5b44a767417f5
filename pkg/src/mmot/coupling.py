"""N-way couplings on a discrete space: marginals, symmetry, entropy, costs.

A coupling stores masses (not densities) in a dense N-way tensor with total
mass one. Densities against the product reference measure are derived views,
which keeps the marginal and total-mass identities exact sums. Throughout,
0 * log 0 = 0 and +inf * 0 = 0, matching the usual measure-theoretic
conventions for integrals of extended-real costs.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .space import Density, DiscreteSpace, UNIT_MASS_TOL, entropy_of_density

__all__ = [
    "Coupling",
    "marginal",
    "marginal_masses",
    "symmetrize",
    "symmetrize_masses",
    "product_coupling",
    "cost_C0",
    "entropy",
    "cost_Ceps",
    "kl",
    "log_reference_tensor",
    "reference_change_check",
    "ReferenceChangeResult",
]


@dataclass(frozen=True)
class Coupling:
    """A nonnegative mass tensor over the N-fold product space, total mass 1."""

    space: DiscreteSpace
    n_marginals: int
    mass: np.ndarray

    def __post_init__(self):
        arr = np.array(self.mass, dtype=float)
        expected = (self.space.size,) * self.n_marginals
        if arr.shape != expected:
            raise ValueError(f"mass tensor shape {arr.shape}, expected {expected}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("coupling masses must be finite and nonnegative")
        total = float(arr.sum())
        if abs(total - 1.0) > UNIT_MASS_TOL:
            raise ValueError(f"coupling mass is {total!r}, expected 1")
        arr.flags.writeable = False
        object.__setattr__(self, "mass", arr)


def marginal_masses(mass: np.ndarray, axis: int) -> np.ndarray:
    """Mass vector of one axis of a raw mass tensor."""
    axes = tuple(i for i in range(mass.ndim) if i != axis)
    return mass.sum(axis=axes) if axes else mass


def marginal(coupling: Coupling, axis: int) -> Density:
    """The axis-th marginal as a density against the reference weights."""
    if not 0 <= axis < coupling.n_marginals:
        raise ValueError("marginal axis out of range")
    masses = marginal_masses(coupling.mass, axis)
    return Density(coupling.space, masses / coupling.space.ref_weights)


def symmetrize_masses(mass: np.ndarray) -> np.ndarray:
    """Average of a raw mass tensor over all axis permutations."""
    n = mass.ndim
    if n == 1:
        return mass.copy()
    out = np.zeros_like(mass)
    for perm in itertools.permutations(range(n)):
        out += np.transpose(mass, perm)
    out /= math.factorial(n)
    return out


def symmetrize(coupling: Coupling) -> Coupling:
    """The permutation-symmetric average of a coupling.

    Already-symmetric inputs are fixed points; the operation is idempotent
    and preserves total mass and every marginal average.
    """
    return Coupling(coupling.space, coupling.n_marginals, symmetrize_masses(coupling.mass))


def product_coupling(density: Density, n_marginals: int) -> Coupling:
    """The independent coupling with every marginal equal to the density."""
    masses = density.masses
    out = masses
    for _ in range(n_marginals - 1):
        out = np.multiply.outer(out, masses)
    return Coupling(density.space, n_marginals, out)


def cost_C0(coupling: Coupling, ct) -> float:
    """Transport cost sum c * mass with +inf * 0 = 0; may be +inf.

    With the logarithmic pair cost the sum can include a negative tail; a
    warning is emitted in that case rather than silently proceeding.
    """
    mass = coupling.mass
    pos = mass > 0
    if ct.is_materialized:
        c = ct.dense()
        if np.any(np.isinf(c) & pos):
            return math.inf
        contributions = c[pos] * mass[pos]
        total = float(np.sum(contributions))
        negative = float(np.sum(contributions[contributions < 0]))
    else:
        total = 0.0
        negative = 0.0
        for i in range(coupling.space.size):
            sl_mass = mass[i]
            sl_pos = sl_mass > 0
            if not np.any(sl_pos):
                continue
            c = ct.slice_first(i)
            if np.any(np.isinf(c) & sl_pos):
                return math.inf
            contributions = c[sl_pos] * sl_mass[sl_pos]
            total += float(np.sum(contributions))
            negative += float(np.sum(contributions[contributions < 0]))
    if negative < 0:
        warnings.warn(
            f"transport cost sums a negative tail ({negative:.3e}); "
            "the logarithmic cost is unbounded below at large distances",
            stacklevel=2,
        )
    return total


def log_reference_tensor(space: DiscreteSpace, n_marginals: int) -> np.ndarray:
    """log of the product reference masses, shaped like a coupling tensor."""
    logm = np.log(space.ref_weights)
    out = np.zeros((space.size,) * n_marginals)
    for axis in range(n_marginals):
        sh = [1] * n_marginals
        sh[axis] = space.size
        out = out + logm.reshape(sh)
    return out


def entropy(coupling: Coupling) -> float:
    """Relative entropy of the coupling against the product reference measure.

    Discrete couplings are automatically absolutely continuous, so the +inf
    branch of the definition is unreachable here.
    """
    mass = coupling.mass
    pos = mass > 0
    log_ref = log_reference_tensor(coupling.space, coupling.n_marginals)
    vals = mass[pos] * (np.log(mass[pos]) - log_ref[pos])
    return float(np.sum(vals))


def cost_Ceps(coupling: Coupling, ct, epsilon: float) -> float:
    """Entropy-regularized cost C0 + epsilon * entropy."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    c0 = cost_C0(coupling, ct)
    if math.isinf(c0):
        return math.inf
    if epsilon == 0.0:
        return c0
    return c0 + epsilon * entropy(coupling)


def kl(coupling: Coupling, reference: np.ndarray) -> float:
    """Kullback-Leibler divergence of the coupling from a product-space measure.

    +inf when the coupling charges a reference-null tuple.
    """
    mass = coupling.mass
    reference = np.asarray(reference, dtype=float)
    if reference.shape != mass.shape:
        raise ValueError("reference measure shape does not match the coupling")
    if np.any(reference < 0):
        raise ValueError("reference entries must be nonnegative")
    pos = mass > 0
    if np.any(pos & (reference == 0)):
        return math.inf
    return float(np.sum(mass[pos] * np.log(mass[pos] / reference[pos])))


@dataclass(frozen=True)
class ReferenceChangeResult:
    """Two solves of the same problem under different reference measures."""

    value_plain: float        # optimum with the geometric reference weights
    value_marginal: float     # optimum with the marginal itself as reference
    correction: float         # N * epsilon * integral of rho log rho
    residual: float
    tv_distance: float


def reference_change_check(
    density: Density, ct, epsilon: float, solver=None, **solver_kwargs
) -> ReferenceChangeResult:
    """Verify that switching the reference measure shifts the optimum by
    N * epsilon * sum(rho log rho) and leaves the minimizer unchanged.

    The second problem reuses the same points and metric but takes the
    marginal masses themselves as reference weights (so the marginal density
    is constant one). Requires a strictly positive marginal.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if solver is None:
        from .sinkhorn import SinkhornConfig, solve_symmetric

        def solver(dens, tensor):
            cfg = SinkhornConfig(epsilon=epsilon, **solver_kwargs)
            return solve_symmetric(dens, tensor, cfg)

    if np.any(density.weights <= 0):
        raise ValueError("reference change needs a strictly positive marginal")
    report_plain = solver(density, ct)
    space2 = DiscreteSpace(
        points=density.space.points,
        metric=density.space.metric,
        ref_weights=density.masses,
    )
    density2 = Density(space2, np.ones(space2.size))
    ct2 = type(ct)(space2, ct.n_marginals, ct.fn, materialize=ct.is_materialized)
    report_marginal = solver(density2, ct2)
    if not (report_plain.converged and report_marginal.converged):
        raise RuntimeError("reference change check needs both solves to converge")
    correction = ct.n_marginals * epsilon * entropy_of_density(density)
    residual = abs(report_plain.primal - report_marginal.primal - correction)
    tv = 0.5 * float(np.abs(report_plain.coupling.mass - report_marginal.coupling.mass).sum())
    return ReferenceChangeResult(
        value_plain=report_plain.primal,
        value_marginal=report_marginal.primal,
        correction=correction,
        residual=residual,
        tv_distance=tv,
    )

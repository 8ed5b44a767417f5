"""Repulsive pair-cost families and N-marginal cost tensors.

A cost function f is continuous and decreasing on (0, inf) and blows up at
0+, so the assembled N-point cost

    c(x_1, ..., x_N) = sum over pairs k < l of f(d(x_k, x_l))

is +inf exactly on tuples where two coordinates coincide. Supported families:
Coulomb 1/z, Riesz 1/z**s, and the logarithm -log z.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "CostFunction",
    "coulomb",
    "riesz",
    "log_cost",
    "CostTensor",
    "eval_cost",
    "gibbs_kernel_entry",
    "gibbs_kernel",
    "support_clearance_radius",
    "diagonal_mass",
    "min_pair_distances",
    "DENSE_ENTRY_BUDGET",
]

# Dense cost tensors are only materialized up to this many entries.
DENSE_ENTRY_BUDGET = 2**24


@dataclass(frozen=True)
class CostFunction:
    """A repulsive pair cost f with f(0+) = +inf.

    kind is one of "coulomb", "riesz", "log"; ``exponent`` is the Riesz
    exponent s > 0 and ignored otherwise.
    """

    kind: str
    exponent: float | None = None

    def __post_init__(self):
        if self.kind not in ("coulomb", "riesz", "log"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.kind == "riesz":
            if self.exponent is None or self.exponent <= 0:
                raise ValueError("riesz cost needs a positive exponent")

    def __call__(self, z):
        """Evaluate f elementwise; z = 0 maps to +inf."""
        z = np.asarray(z, dtype=float)
        if np.any(z < 0):
            raise ValueError("distances must be nonnegative")
        with np.errstate(divide="ignore"):
            if self.kind == "coulomb":
                out = np.where(z > 0, 1.0 / np.where(z > 0, z, 1.0), np.inf)
            elif self.kind == "riesz":
                out = np.where(z > 0, np.where(z > 0, z, 1.0) ** (-self.exponent), np.inf)
            else:
                out = np.where(z > 0, -np.log(np.where(z > 0, z, 1.0)), np.inf)
        return float(out) if out.ndim == 0 else out

    def label(self) -> str:
        if self.kind == "riesz":
            return f"riesz:{self.exponent:g}"
        return self.kind


def coulomb() -> CostFunction:
    return CostFunction("coulomb")


def riesz(exponent: float) -> CostFunction:
    return CostFunction("riesz", exponent=exponent)


def log_cost() -> CostFunction:
    return CostFunction("log")


class CostTensor:
    """The N-marginal cost over a discrete space, dense or lazily evaluated.

    Entries are permutation symmetric and +inf exactly when two tuple
    positions hold coinciding points. Dense storage is used only when
    M**N fits in ``DENSE_ENTRY_BUDGET`` (or when forced via ``materialize``);
    otherwise entries and first-axis slices are assembled on demand from the
    pairwise matrix. Instances are immutable and safe for concurrent reads.
    """

    def __init__(self, space, n_marginals: int, fn: CostFunction, materialize: bool | None = None):
        if n_marginals < 2:
            raise ValueError("need at least two marginals")
        self.space = space
        self.n_marginals = int(n_marginals)
        self.fn = fn
        if fn.kind == "riesz":
            dim = 1 if space.points.ndim == 1 else space.points.shape[1]
            if fn.exponent > dim:
                warnings.warn(
                    f"riesz exponent {fn.exponent:g} above the ambient dimension {dim}; "
                    "the solver stays well defined but the modeling window is s <= dim",
                    stacklevel=2,
                )
        pair = fn(space.metric)
        pair.flags.writeable = False
        self.pair_costs = pair
        if materialize is None:
            materialize = space.size**self.n_marginals <= DENSE_ENTRY_BUDGET
        self._materialize = bool(materialize)
        self._dense: np.ndarray | None = None

    @property
    def is_materialized(self) -> bool:
        return self._materialize

    @cached_property
    def _tail(self) -> np.ndarray | None:
        # cost of the last N-1 coordinates among themselves, used by slices
        if self.n_marginals == 2:
            return None
        shape = (self.space.size,) * (self.n_marginals - 1)
        tail = np.zeros(shape)
        for k, l in itertools.combinations(range(self.n_marginals - 1), 2):
            view = np.expand_dims(
                self.pair_costs,
                axis=tuple(i for i in range(self.n_marginals - 1) if i not in (k, l)),
            )
            tail = tail + view
        return tail

    def slice_first(self, index: int) -> np.ndarray:
        """Cost over the remaining N-1 axes with the first coordinate fixed."""
        m = self.space.size
        n = self.n_marginals
        row = self.pair_costs[index]
        if n == 2:
            return row
        out = self._tail.copy()
        for axis in range(n - 1):
            sh = [1] * (n - 1)
            sh[axis] = m
            out = out + row.reshape(sh)
        return out

    def dense(self) -> np.ndarray:
        """The full cost tensor; raises when above the materialization budget."""
        if not self._materialize:
            raise MemoryError(
                f"cost tensor with {self.space.size}**{self.n_marginals} entries "
                "is above the dense budget; use per-tuple or per-slice evaluation"
            )
        if self._dense is None:
            m = self.space.size
            n = self.n_marginals
            total = np.zeros((m,) * n)
            for k, l in itertools.combinations(range(n), 2):
                view = np.expand_dims(
                    self.pair_costs, axis=tuple(i for i in range(n) if i not in (k, l))
                )
                total = total + view
            total.flags.writeable = False
            self._dense = total
        return self._dense

    def eval(self, idx) -> float:
        """Cost of one index tuple; +inf when two positions coincide.

        Pair values are summed in sorted order so the result is exactly
        invariant under permutations of the tuple.
        """
        idx = tuple(int(i) for i in idx)
        if len(idx) != self.n_marginals:
            raise ValueError("index tuple length does not match the marginal count")
        values = []
        for k, l in itertools.combinations(range(self.n_marginals), 2):
            v = float(self.pair_costs[idx[k], idx[l]])
            if math.isinf(v):
                return math.inf
            values.append(v)
        return math.fsum(sorted(values))


def eval_cost(ct: CostTensor, idx) -> float:
    """Pairwise-sum cost of an index tuple (+inf on the diagonal set)."""
    return ct.eval(idx)


def gibbs_kernel_entry(ct: CostTensor, epsilon: float, idx) -> float:
    """exp(-c/epsilon) times the product reference mass at one tuple.

    Exactly zero when the cost is +inf.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    c = ct.eval(idx)
    if math.isinf(c):
        return 0.0
    ref = ct.space.ref_weights
    prod = float(np.prod([ref[int(i)] for i in idx]))
    return math.exp(-c / epsilon) * prod


def gibbs_kernel(ct: CostTensor, epsilon: float) -> np.ndarray:
    """Dense Gibbs kernel exp(-c/epsilon) * (ref x ... x ref)."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    c = ct.dense()
    logm = np.log(ct.space.ref_weights)
    expo = -c / epsilon
    for axis in range(ct.n_marginals):
        sh = [1] * ct.n_marginals
        sh[axis] = ct.space.size
        expo = expo + logm.reshape(sh)
    with np.errstate(over="ignore"):
        return np.exp(expo)


def support_clearance_radius(fn: CostFunction, beta: float, n_marginals: int) -> float:
    """Largest diagonal clearance alpha = f^-1(N^2 (N-1) f(beta) / 2).

    Optimal unregularized plans put no mass on tuples with a pair closer than
    any alpha below this value, provided beta is an admissible
    non-concentration radius for the marginal. Closed forms per family:

      coulomb : 2 beta / (N^2 (N-1))
      riesz s : beta * (2 / (N^2 (N-1)))**(1/s)
      log     : exp(-N^2 (N-1) (-log beta) / 2), needs beta < 1
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if n_marginals < 2:
        raise ValueError("need at least two marginals")
    n = n_marginals
    scale = n**2 * (n - 1) / 2.0
    if fn.kind == "coulomb":
        return beta / scale
    if fn.kind == "riesz":
        return beta * scale ** (-1.0 / fn.exponent)
    if beta >= 1.0:
        raise ValueError(
            "log cost clearance is inapplicable for beta >= 1 (f(beta) <= 0)"
        )
    return math.exp(-scale * (-math.log(beta)))


def min_pair_distances(space, n_marginals: int) -> np.ndarray:
    """Dense tensor of the minimum pairwise distance over each index tuple."""
    m = space.size
    out = np.full((m,) * n_marginals, np.inf)
    for k, l in itertools.combinations(range(n_marginals), 2):
        view = np.expand_dims(
            space.metric, axis=tuple(i for i in range(n_marginals) if i not in (k, l))
        )
        out = np.minimum(out, view)
    return out


def diagonal_mass(coupling, alpha: float) -> float:
    """Coupling mass on tuples with some pair strictly closer than alpha."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if alpha == 0.0:
        return 0.0
    near = min_pair_distances(coupling.space, coupling.n_marginals) < alpha
    return float(np.sum(coupling.mass[near]))

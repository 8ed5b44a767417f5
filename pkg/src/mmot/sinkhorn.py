"""Symmetric multi-marginal Sinkhorn iteration in the log domain.

The primal problem minimizes sum(c * gamma) + epsilon * E[gamma] over
couplings whose every marginal equals the target density. The cost is
permutation symmetric and all marginals coincide, so a single shared
potential u suffices; optimal couplings have the Gibbs form

    gamma(i1..iN) = exp((u[i1] + ... + u[iN] - c) / epsilon) * m[i1]...m[iN].

One sweep evaluates the first-axis marginal of that form with a log-sum-exp
reduction over the other N - 1 axes (permutation symmetry makes one axis
enough) and moves the potential toward matching the target:

    u <- u + damping * epsilon * (log target - log current marginal).

Undamped symmetric updates oscillate for N >= 2; damping 1/N is the default
stabilizer. Cold starts stall for small epsilon, so the solve anneals: it
starts at epsilon 0.1 and halves toward the target, warm starting each stage
with the previous potential. All arithmetic stays in the log domain, which
keeps epsilon as small as 1e-5 free of overflow.

The dual objective for a shared potential is

    D(u) = N <u, target masses>
           - epsilon * sum(exp((u (+) ... (+) u - c) / epsilon) d ref-product)
           + epsilon,

and D(u) <= C_eps[gamma] for every potential u and feasible coupling gamma
(weak duality), so the reported gap certifies solution quality without any
optimality assumption.

Reductions use fixed association order (plain numpy log-sum-exp), so
repeated runs of the same configuration reproduce reports bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coupling import Coupling, cost_Ceps, symmetrize_masses
from .space import Density, DiscreteSpace

__all__ = [
    "Potential",
    "SinkhornConfig",
    "SolveReport",
    "InfeasibleProblemError",
    "solve_symmetric",
    "dual_objective",
    "dual_objective_multi",
    "primal_from_potential",
    "duality_gap",
    "ANNEAL_START",
]

# Annealing entry point: targets below this solve a halving ladder of stages.
ANNEAL_START = 0.1

# Marginal tolerance for intermediate annealing stages. Looser than the final
# tolerance on purpose: two stages converged to this level are enough for the
# epsilon-extrapolated warm start to land the next stage almost exactly.
STAGE_TOL = 3e-5


class InfeasibleProblemError(RuntimeError):
    """Raised when some point has infinite cost against every partner tuple."""


@dataclass(frozen=True)
class Potential:
    """A dual potential: one finite real per point of the space."""

    space: DiscreteSpace
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.space.size,):
            raise ValueError("potential size does not match the space")
        if not np.all(np.isfinite(v)):
            raise ValueError("potential entries must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class SinkhornConfig:
    """Solver knobs.

    epsilon  : regularization strength, > 0.
    max_iter : total sweep budget across annealing stages.
    tol      : L1 marginal-mass tolerance at the target epsilon.
    damping  : step factor in (0, 1]; defaults to 1/N at solve time.
    init     : warm-start potential (array or Potential); disables annealing.
    """

    epsilon: float
    max_iter: int = 100_000
    tol: float = 1e-8
    damping: float | None = None
    init: object = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.damping is not None and not (0 < self.damping <= 1):
            raise ValueError("damping must lie in (0, 1]")


@dataclass(frozen=True)
class SolveReport:
    """Solver output bundle.

    The reported coupling is rounded onto the feasible set (exact marginals,
    diagonal still empty), so its cost is a true upper bound and the gap
    against the dual is nonnegative up to float dust. marginal_error is the
    L1 gap of the unrounded Gibbs coupling's marginal masses to the target,
    i.e. the quantity the stopping rule saw; normalization_defect is
    |total raw mass - 1| before the final rescale. stages lists
    (epsilon, sweeps) pairs of the annealing ladder.
    """

    coupling: Coupling
    potential: Potential
    iterations: int
    marginal_error: float
    primal: float
    dual: float
    gap: float
    converged: bool
    normalization_defect: float
    epsilon: float
    stages: tuple[tuple[float, int], ...] = field(default_factory=tuple)


def _log_weighted_potentials(ws: Sequence[np.ndarray], space: DiscreteSpace):
    """Per-axis vectors w_k + log m, the additive kernel ingredients."""
    logm = np.log(space.ref_weights)
    return [w + logm for w in ws]


def _lse(arr: np.ndarray, axis) -> np.ndarray | float:
    """log-sum-exp with fixed association order; all-(-inf) slices stay -inf."""
    peak = np.max(arr, axis=axis, keepdims=True)
    finite = np.isfinite(peak)
    safe = np.where(finite, peak, 0.0)
    with np.errstate(invalid="ignore"):
        total = np.sum(np.exp(arr - safe), axis=axis)
    peak = np.squeeze(safe, axis=axis)
    out = np.where(
        np.squeeze(finite, axis=axis), peak + np.log(np.maximum(total, 1e-300)), -np.inf
    )
    return float(out) if out.ndim == 0 else out


def _stage_kernel(ct, epsilon: float) -> np.ndarray:
    """Dense -c/epsilon + (+)_axes log m, fixed for a whole annealing stage."""
    n = ct.n_marginals
    arr = -ct.dense() / epsilon
    logm = np.log(ct.space.ref_weights)
    for axis in range(n):
        sh = [1] * n
        sh[axis] = ct.space.size
        arr = arr + logm.reshape(sh)
    return arr


def _stage_log_marginals(base: np.ndarray, w: np.ndarray) -> np.ndarray:
    """First-axis log marginal masses given the cached stage kernel.

    Hot loop: one temporary, in-place broadcast adds, in-place exp. Entries
    are shifted by the row peak before exponentiation, so nothing overflows
    regardless of epsilon; rows whose every entry is -inf stay -inf.
    """
    n = base.ndim
    m = w.shape[0]
    sh = [1] * n
    sh[-1] = m
    tmp = base + w.reshape(sh)
    for axis in range(n - 1):
        sh = [1] * n
        sh[axis] = m
        tmp += w.reshape(sh)
    axes = tuple(range(1, n))
    peak = tmp.max(axis=axes)
    finite = np.isfinite(peak)
    all_finite = bool(finite.all())
    peak_safe = peak if all_finite else np.where(finite, peak, 0.0)
    tmp -= peak_safe.reshape([-1] + [1] * (n - 1))
    np.exp(tmp, out=tmp)
    total = tmp.sum(axis=axes)
    out = peak_safe + np.log(np.maximum(total, 1e-300))
    if not all_finite:
        out[~finite] = -np.inf
    return out


def _dense_exponent(ct, epsilon: float, ws: Sequence[np.ndarray]) -> np.ndarray:
    """Dense tensor of ((+)_k u_k - c)/epsilon + sum_k log m, all axes."""
    n = ct.n_marginals
    arr = -ct.dense() / epsilon
    for axis, vec in enumerate(_log_weighted_potentials(ws, ct.space)):
        sh = [1] * n
        sh[axis] = ct.space.size
        arr = arr + vec.reshape(sh)
    return arr


def _log_axis0_marginals(ct, epsilon: float, u: np.ndarray) -> np.ndarray:
    """log of the first-axis marginal masses of the Gibbs form, per point."""
    n = ct.n_marginals
    ws = [u / epsilon] * n
    if ct.is_materialized:
        arr = _dense_exponent(ct, epsilon, ws)
        return _lse(arr, axis=tuple(range(1, n)))
    vecs = _log_weighted_potentials(ws, ct.space)
    head = vecs[0]
    out = np.empty(ct.space.size)
    for i in range(ct.space.size):
        arr = -ct.slice_first(i) / epsilon
        for axis, vec in enumerate(vecs[1:]):
            sh = [1] * (n - 1)
            sh[axis] = ct.space.size
            arr = arr + vec.reshape(sh)
        out[i] = head[i] + _lse(arr, axis=tuple(range(n - 1)))
    return out


def _log_mass(ct, epsilon: float, u: np.ndarray) -> np.ndarray:
    """Dense log Gibbs masses; assembled per first-axis slice when lazy."""
    n = ct.n_marginals
    ws = [u / epsilon] * n
    if ct.is_materialized:
        return _dense_exponent(ct, epsilon, ws)
    m = ct.space.size
    vecs = _log_weighted_potentials(ws, ct.space)
    out = np.empty((m,) * n)
    for i in range(m):
        arr = -ct.slice_first(i) / epsilon + vecs[0][i]
        for axis, vec in enumerate(vecs[1:]):
            sh = [1] * (n - 1)
            sh[axis] = m
            arr = arr + vec.reshape(sh)
        out[i] = arr
    return out


def _log_kernel_total(ct, epsilon: float, ws: Sequence[np.ndarray]) -> float:
    """log of the full Gibbs-kernel integral for per-axis potentials ws."""
    n = ct.n_marginals
    if ct.is_materialized:
        return _lse(_dense_exponent(ct, epsilon, ws), axis=tuple(range(n)))
    vecs = _log_weighted_potentials(ws, ct.space)
    head = vecs[0]
    partial = np.empty(ct.space.size)
    for i in range(ct.space.size):
        arr = -ct.slice_first(i) / epsilon
        for axis, vec in enumerate(vecs[1:]):
            sh = [1] * (n - 1)
            sh[axis] = ct.space.size
            arr = arr + vec.reshape(sh)
        partial[i] = head[i] + _lse(arr, axis=tuple(range(n - 1)))
    return _lse(partial, axis=0)


def _shifted_defect_coupling(errs: Sequence[np.ndarray]) -> np.ndarray | None:
    """Zero-diagonal coupling with prescribed tiny marginals, or None.

    Couples the per-axis defect vectors by rotating quantile levels by k/N on
    axis k, so the tuple coordinates are generically pairwise distinct. When
    a defect concentrates so hard that some orbit tuple repeats a coordinate,
    None is returned and the caller skips the correction.
    """
    n = len(errs)
    total = float(errs[0].sum())
    cums = []
    for e in errs:
        cum = np.cumsum(e) / total
        cum[-1] = 1.0
        cums.append(cum)
    cuts = [np.array([0.0, 1.0])]
    for k, cum in enumerate(cums):
        cuts.append(np.mod(cum - k / n, 1.0))
    breaks = np.unique(np.concatenate(cuts))
    breaks = breaks[(breaks >= 0.0) & (breaks <= 1.0)]
    widths = np.diff(breaks)
    keep = widths > 1e-16
    lows = breaks[:-1][keep]
    widths = widths[keep]
    mids = lows + widths / 2
    m = len(errs[0])
    out = np.zeros((m,) * n)
    index_lists = []
    for k, cum in enumerate(cums):
        level = mids + k / n
        level = np.where(level > 1.0, level - 1.0, level)
        idx = np.searchsorted(cum, level - 1e-15, side="left")
        index_lists.append(np.minimum(idx, m - 1))
    for t in range(len(mids)):
        idx = tuple(int(index_lists[k][t]) for k in range(n))
        if len(set(idx)) != n:
            return None
        out[idx] += widths[t] * total
    return out


def _round_to_marginals(mass: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, bool]:
    """Project a near-feasible coupling onto exact marginals.

    Scales each axis down to at most the target marginal, then adds a
    zero-diagonal coupling of the per-axis defects. Returns the rounded
    tensor and whether exact rounding succeeded; on the (defect-concentrated)
    fallback the input is returned unchanged.
    """
    from .coupling import marginal_masses

    n = mass.ndim
    work = mass.copy()
    for axis in range(n):
        marg = marginal_masses(work, axis)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(marg > 0, np.minimum(1.0, target / np.where(marg > 0, marg, 1.0)), 1.0)
        sh = [1] * n
        sh[axis] = len(target)
        work *= scale.reshape(sh)
    errs = [target - marginal_masses(work, axis) for axis in range(n)]
    total = float(errs[0].sum())
    if total <= 0:
        return mass, False
    errs = [np.maximum(e, 0.0) for e in errs]
    correction = _shifted_defect_coupling(errs)
    if correction is None:
        return mass, False
    return work + correction, True


def _anneal_schedule(target: float, init_given: bool) -> list[float]:
    if init_given or target >= ANNEAL_START:
        return [target]
    stages = [ANNEAL_START]
    while stages[-1] / 2 > target * (1 + 1e-12):
        stages.append(stages[-1] / 2)
    stages.append(target)
    return stages


def solve_symmetric(density: Density, ct, config: SinkhornConfig) -> SolveReport:
    """Solve the entropic problem for one shared potential.

    Iterates damped log-domain sweeps until the L1 marginal error of the raw
    Gibbs coupling drops below ``config.tol`` or the sweep budget runs out;
    non-convergence is reported through the ``converged`` flag, never
    silently. The recovered primal coupling is rescaled to total mass one and
    the pre-rescale defect is reported.
    """
    if ct.space is not density.space:
        raise ValueError("cost tensor and density live on different spaces")
    target_masses = density.masses
    if np.any(target_masses <= 0):
        raise ValueError(
            "solver requires a strictly positive marginal on every cell; "
            "drop zero-mass cells from the grid first"
        )
    epsilon = config.epsilon
    n = ct.n_marginals
    theta = config.damping if config.damping is not None else 1.0 / n
    if config.init is None:
        u = np.zeros(ct.space.size)
    else:
        init = config.init.values if isinstance(config.init, Potential) else config.init
        u = np.array(init, dtype=float)
        if u.shape != (ct.space.size,):
            raise ValueError("warm-start potential size does not match the space")

    log_target = np.log(target_masses)
    schedule = _anneal_schedule(epsilon, config.init is not None)
    stages: list[tuple[float, int]] = []
    total_sweeps = 0
    marginal_error = math.inf
    prev_converged: list[tuple[float, np.ndarray]] = []
    for stage_index, eps_stage in enumerate(schedule):
        final = stage_index == len(schedule) - 1
        stage_tol = config.tol if final else max(config.tol, STAGE_TOL)
        if len(prev_converged) >= 2:
            # the optimal potential is close to linear in epsilon near zero,
            # so extrapolating the last two stages gives a far better start
            (e1, u1), (e2, u2) = prev_converged[-2], prev_converged[-1]
            u = u2 + (u2 - u1) * ((eps_stage - e2) / (e2 - e1))
        base = _stage_kernel(ct, eps_stage) if ct.is_materialized else None
        sweeps = 0
        while True:
            if base is not None:
                log_marg = _stage_log_marginals(base, u / eps_stage)
            else:
                log_marg = _log_axis0_marginals(ct, eps_stage, u)
            if total_sweeps == 0 and np.any(np.isneginf(log_marg)):
                bad = int(np.flatnonzero(np.isneginf(log_marg))[0])
                raise InfeasibleProblemError(
                    f"point {bad} has infinite cost against every partner tuple"
                )
            marginal_error = float(np.abs(np.exp(log_marg) - target_masses).sum())
            if marginal_error <= stage_tol or total_sweeps >= config.max_iter:
                break
            u = u + theta * eps_stage * (log_target - log_marg)
            sweeps += 1
            total_sweeps += 1
        stages.append((eps_stage, sweeps))
        prev_converged.append((eps_stage, u.copy()))
        if total_sweeps >= config.max_iter:
            break

    # Quantities below are always evaluated at the target epsilon, even if the
    # sweep budget ran out mid-anneal; the coupling is normalized in the log
    # domain so a far-from-converged potential cannot overflow it.
    log_marg = _log_axis0_marginals(ct, epsilon, u)
    with np.errstate(over="ignore"):
        marginal_error = float(np.abs(np.exp(log_marg) - target_masses).sum())
    converged = marginal_error <= config.tol
    log_mass = _log_mass(ct, epsilon, u)
    log_total = _lse(log_mass, axis=tuple(range(n)))
    mass = np.exp(log_mass - log_total)
    mass /= mass.sum()
    with np.errstate(over="ignore"):
        defect = abs(float(np.expm1(log_total)))
    # round onto the feasible set: with exact marginals the reported primal
    # sits above every dual value, so the gap certificate is trustworthy at
    # any stopping tolerance
    mass, _ = _round_to_marginals(mass, target_masses)
    mass = symmetrize_masses(np.maximum(mass, 0.0))
    coupling = Coupling(ct.space, n, mass / mass.sum())
    potential = Potential(ct.space, u)
    primal = cost_Ceps(coupling, ct, epsilon)
    dual = dual_objective(potential, density, ct, epsilon)
    return SolveReport(
        coupling=coupling,
        potential=potential,
        iterations=total_sweeps,
        marginal_error=marginal_error,
        primal=primal,
        dual=dual,
        gap=primal - dual,
        converged=converged,
        normalization_defect=defect,
        epsilon=epsilon,
        stages=tuple(stages),
    )


def _as_values(u, space: DiscreteSpace) -> np.ndarray:
    v = u.values if isinstance(u, Potential) else np.asarray(u, dtype=float)
    if v.shape != (space.size,):
        raise ValueError("potential size does not match the space")
    return v


def dual_objective(u, density: Density, ct, epsilon: float) -> float:
    """Dual value for a single shared potential; lower bounds every C_eps."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    v = _as_values(u, ct.space)
    return dual_objective_multi([v] * ct.n_marginals, density, ct, epsilon)


def dual_objective_multi(potentials, density: Density, ct, epsilon: float) -> float:
    """Dual value for one potential per marginal.

    With all potentials equal this coincides with :func:`dual_objective`; the
    objective is invariant under shifts u_k + s, u_l - s that cancel in the
    direct sum.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    values = [_as_values(u, ct.space) for u in potentials]
    if len(values) != ct.n_marginals:
        raise ValueError("need one potential per marginal")
    masses = density.masses
    linear = float(sum(np.dot(v, masses) for v in values))
    ws = [v / epsilon for v in values]
    log_total = _log_kernel_total(ct, epsilon, ws)
    with np.errstate(over="ignore"):
        kernel_sum = math.exp(log_total) if log_total < 710 else math.inf
    return linear - epsilon * kernel_sum + epsilon


def primal_from_potential(u, ct, epsilon: float) -> np.ndarray:
    """Raw Gibbs masses exp(((+) u - c)/epsilon) * product reference.

    The caller normalizes; diagonal tuples get exactly zero.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    v = _as_values(u, ct.space)
    n = ct.n_marginals
    ws = [v / epsilon] * n
    if ct.is_materialized:
        arr = _dense_exponent(ct, epsilon, ws)
        with np.errstate(over="ignore"):
            return np.exp(arr)
    m = ct.space.size
    vecs = _log_weighted_potentials(ws, ct.space)
    out = np.empty((m,) * n)
    for i in range(m):
        arr = -ct.slice_first(i) / epsilon + vecs[0][i]
        for axis, vec in enumerate(vecs[1:]):
            sh = [1] * (n - 1)
            sh[axis] = m
            arr = arr + vec.reshape(sh)
        with np.errstate(over="ignore"):
            out[i] = np.exp(arr)
    return out


def duality_gap(report: SolveReport) -> float:
    """Primal minus dual for a solve report; nonnegative up to float slack."""
    return report.primal - report.dual

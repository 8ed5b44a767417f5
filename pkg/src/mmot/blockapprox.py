"""Block approximation of a coupling: same marginals, near-identical cost,
product-block structure, and finite entropy by construction.

Given a symmetric coupling gamma with finite cost, the surgery at step n
(radius r = 1/n) produces gamma'_n as a sum of four pieces:

  1. reserve two small symmetric slices of mass eps_n around two anchor
     tuples x, x' in the support whose 2N coordinates are pairwise more than
     r apart; eps_n = min(mass near x, mass near x', r, r/f(2r/5)) / N;
  2. the core: what remains inside a compact K^N and away from the diagonal
     band of width delta_n, re-coupled blockwise as products of the restricted
     marginals over a partition into sets of diameter < lambda_n and mass
     < eps_n (per-block tensor masses are preserved exactly);
  3. the main remainder: mass from the diagonal band or outside K^N is
     re-coupled against normalized slices of the reserve at x, cell by cell
     of a partition of the space around the anchor coordinates; every support
     tuple ends up pairwise separated by more than 2r/5;
  4. closing the books: the marginal still owed is coupled against the
     reserve at x', with support separation above 4r/5; a final scaled
     product of the x'-slices balances what the previous step used unevenly.

The remainder pieces together carry mass below 3 eps_n and cost at most
(N(N-1)/2) f(2r/5) 3 eps_n <= (3N(N-1)/2) r, while blockwise re-coupling
moves the core cost by at most (N(N-1)/2) eps_n; marginals come out exact.

On a finite grid the construction is meaningful only while r stays above the
grid resolution and eps_n above the largest cell mass; infeasible steps raise
``ScheduleInfeasibleError`` instead of degrading silently. The mass
bookkeeping of step 4 balances for every N = 2 input; for N >= 3 it requires
the remainder mass to sit in a narrow window, and steps outside it are
reported as infeasible as well.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .cost import CostFunction, min_pair_distances
from .coupling import Coupling, marginal_masses, symmetrize_masses
from .space import DiscreteSpace

__all__ = [
    "ScheduleInfeasibleError",
    "BlockApproxSchedule",
    "BlockApproxResult",
    "select_anchors",
    "build_schedule",
    "core_approximation",
    "remainder_coupling",
    "block_approximation",
    "slowdown_reindex",
]

_DELTA_PROBES = 64
_MASS_TOL = 1e-12


class ScheduleInfeasibleError(RuntimeError):
    """The construction has no valid schedule at this step index."""


@dataclass(frozen=True)
class BlockApproxSchedule:
    """All choices fixed by one approximation step."""

    space: DiscreteSpace
    n_marginals: int
    n: int
    radius: float                      # r = 1/n
    anchor: tuple[int, ...]            # x
    anchor_prime: tuple[int, ...]      # x'
    epsilon_n: float
    delta_n: float
    lambda_n: float
    compact: np.ndarray                # sorted indices of K
    compact_diameter: float
    blocks: tuple[np.ndarray, ...]     # partition of the core support
    cells: tuple[np.ndarray, ...]      # partition of the space around x
    balls: tuple[np.ndarray, ...]      # indices near each coordinate of x
    balls_prime: tuple[np.ndarray, ...]
    reserved_mass: float               # coupling mass near x
    reserved_mass_prime: float


@dataclass(frozen=True)
class BlockApproxResult:
    """The approximation plus the verification quantities of one step."""

    approximation: Coupling
    schedule: BlockApproxSchedule
    marginal_error: float
    symmetry_error: float
    remainder_mass: float
    min_remainder_separation: float
    core_mass: float
    entropy_value: float
    entropy_bound: float
    cost_original: float | None = None
    cost_approximation: float | None = None
    cost_gap: float | None = None
    cost_gap_bound: float | None = None
    cost_core_removed: float | None = None


def _support_tuples(mass: np.ndarray, tol: float) -> np.ndarray:
    return np.argwhere(mass > tol)


def _internally_separated(tuples: np.ndarray, metric: np.ndarray, r: float) -> np.ndarray:
    """Rows whose coordinates are pairwise more than r apart."""
    if tuples.size == 0:
        return np.zeros(0, dtype=bool)
    n = tuples.shape[1]
    ok = np.ones(len(tuples), dtype=bool)
    for k, l in itertools.combinations(range(n), 2):
        ok &= metric[tuples[:, k], tuples[:, l]] > r
    return ok


def select_anchors(coupling: Coupling, radius: float, support_tol: float = 0.0):
    """Lexicographically smallest pair of support tuples with all 2N
    coordinates pairwise more than ``radius`` apart.

    Raises ``ScheduleInfeasibleError`` when no such pair exists (for example
    a two-point space cannot host four separated coordinates).
    """
    metric = coupling.space.metric
    tuples = _support_tuples(coupling.mass, support_tol)
    tuples = tuples[_internally_separated(tuples, metric, radius)]
    if len(tuples) == 0:
        raise ScheduleInfeasibleError(
            f"no support tuple is internally separated by more than {radius:g}"
        )
    n = coupling.n_marginals
    for x in tuples:
        # cross separation of every coordinate of x against each candidate
        cross = np.ones(len(tuples), dtype=bool)
        for k in range(n):
            cross &= np.all(metric[x[k]][tuples] > radius, axis=1)
        hits = np.flatnonzero(cross)
        if hits.size:
            return tuple(int(i) for i in x), tuple(int(i) for i in tuples[hits[0]])
    raise ScheduleInfeasibleError(
        f"no two support tuples have 2N coordinates pairwise separated by more than {radius:g}"
    )


def _symmetric_ball_mask(balls, m: int, n: int) -> np.ndarray:
    mask = np.zeros((m,) * n, dtype=bool)
    for perm in itertools.permutations(range(n)):
        mask[np.ix_(*[balls[perm[k]] for k in range(n)])] = True
    return mask


def _compact_outside_mass(mass: np.ndarray, indices: np.ndarray, total: float) -> float:
    inside = mass[np.ix_(*[indices] * mass.ndim)].sum()
    return float(total - inside)


def _modulus(fn: CostFunction, lo: float, hi: float, width: float) -> float:
    """Worst |f(r) - f(s)| over [lo, hi] with |r - s| <= width (f decreasing convex)."""
    if lo >= hi:
        return 0.0
    upper = min(lo + width, hi)
    return float(fn(lo) - fn(upper))


def build_schedule(
    coupling: Coupling, n: int, fn: CostFunction, support_tol: float = 0.0
) -> BlockApproxSchedule:
    """Fix anchors, reserve size, compact, diagonal margin, block partition.

    Choices are deterministic: anchors are the lexicographically smallest
    valid pair, the compact is a mass-greedy prefix of the points, the
    diagonal margin is the largest of 64 evenly spaced probes below r, and
    blocks come from a greedy sweep of the core support in index order.
    """
    if n < 1:
        raise ValueError("step index must be at least 1")
    space = coupling.space
    nm = coupling.n_marginals
    m = space.size
    r = 1.0 / n
    anchor, anchor_prime = select_anchors(coupling, r, support_tol)

    balls = tuple(space.ball(i, r / 10) for i in anchor)
    balls_prime = tuple(space.ball(i, r / 10) for i in anchor_prime)
    support = coupling.mass > support_tol
    near = _symmetric_ball_mask(balls, m, nm) & support
    near_prime = _symmetric_ball_mask(balls_prime, m, nm) & support
    g_near = float(coupling.mass[near].sum())
    g_near_prime = float(coupling.mass[near_prime].sum())

    f_val = float(fn(2 * r / 5))
    cost_term = r / f_val if f_val > 0 else math.inf
    epsilon_n = min(g_near, g_near_prime, r, cost_term) / nm
    if epsilon_n <= 0:
        raise ScheduleInfeasibleError("reserve mass vanished; no admissible step")

    gamma0 = coupling.mass.copy()
    gamma0[near] *= 1.0 - epsilon_n / g_near
    gamma0[near_prime] *= 1.0 - epsilon_n / g_near_prime
    total0 = float(gamma0.sum())

    # compact: smallest mass-greedy prefix with outside mass below eps/2
    mu = marginal_masses(gamma0, 0)
    order = np.argsort(-mu, kind="stable")
    lo_p, hi_p = 1, m
    while lo_p < hi_p:
        mid = (lo_p + hi_p) // 2
        if _compact_outside_mass(gamma0, np.sort(order[:mid]), total0) < epsilon_n / 2:
            hi_p = mid
        else:
            lo_p = mid + 1
    compact = np.sort(order[:lo_p])
    if _compact_outside_mass(gamma0, compact, total0) >= epsilon_n / 2:
        raise ScheduleInfeasibleError("no compact prefix confines the mass")
    sub = space.metric[np.ix_(compact, compact)]
    compact_diameter = float(sub.max()) if compact.size else 0.0

    # diagonal margin: largest probe below r whose band mass stays small
    min_dist = min_pair_distances(space, nm)
    probes = r * np.arange(1, _DELTA_PROBES) / _DELTA_PROBES
    bucket = np.searchsorted(probes, min_dist.ravel(), side="right")
    band = np.bincount(bucket, weights=gamma0.ravel(), minlength=len(probes) + 1)
    below = np.cumsum(band)[:-1]  # mass with min distance < probes[j]
    admissible = np.flatnonzero(below < epsilon_n / 2)
    if admissible.size == 0:
        raise ScheduleInfeasibleError(
            "diagonal band keeps too much mass at every probed margin"
        )
    delta_n = float(probes[admissible[-1]])

    gamma1 = gamma0.copy()
    outside = np.ones(m, dtype=bool)
    outside[compact] = False
    for axis in range(nm):
        sh = [1] * nm
        sh[axis] = m
        gamma1 = np.where(outside.reshape(sh), 0.0, gamma1)
    gamma1 = np.where(min_dist < delta_n, 0.0, gamma1)

    # block partition of the core support: diameter < lambda, mass < eps
    lo_band = delta_n / 2
    hi_band = 2 * compact_diameter
    lam_cap = delta_n / n * (1 - 1e-9)
    if _modulus(fn, lo_band, hi_band, 2 * lam_cap) < epsilon_n:
        lambda_n = lam_cap
    else:
        lo_l, hi_l = 0.0, lam_cap
        for _ in range(60):
            mid = (lo_l + hi_l) / 2
            if _modulus(fn, lo_band, hi_band, 2 * mid) < epsilon_n:
                lo_l = mid
            else:
                hi_l = mid
        lambda_n = lo_l * (1 - 1e-9)
    if lambda_n <= 0:
        raise ScheduleInfeasibleError("no positive block diameter satisfies the modulus bound")

    rho1 = marginal_masses(gamma1, 0)
    support_cells = np.flatnonzero(rho1 > 0)
    blocks: list[np.ndarray] = []
    current: list[int] = []
    current_mass = 0.0
    for cell in support_cells:
        cell = int(cell)
        if rho1[cell] >= epsilon_n:
            raise ScheduleInfeasibleError(
                f"cell {cell} carries mass {rho1[cell]:.3e} >= eps_n {epsilon_n:.3e}; "
                "refine the grid or decrease n"
            )
        if current:
            diam = max(space.metric[cell, j] for j in current)
            if diam < lambda_n and current_mass + rho1[cell] < epsilon_n:
                current.append(cell)
                current_mass += rho1[cell]
                continue
            blocks.append(np.array(current, dtype=int))
        current = [cell]
        current_mass = float(rho1[cell])
    if current:
        blocks.append(np.array(current, dtype=int))

    # partition of the space around the anchor coordinates
    cells = []
    claimed = np.zeros(m, dtype=bool)
    for k in range(nm - 1):
        cell_k = space.ball(anchor[k], r / 2)
        cells.append(cell_k)
        claimed[cell_k] = True
    cells.append(np.flatnonzero(~claimed))

    return BlockApproxSchedule(
        space=space,
        n_marginals=nm,
        n=n,
        radius=r,
        anchor=anchor,
        anchor_prime=anchor_prime,
        epsilon_n=epsilon_n,
        delta_n=delta_n,
        lambda_n=lambda_n,
        compact=compact,
        compact_diameter=compact_diameter,
        blocks=tuple(blocks),
        cells=tuple(cells),
        balls=balls,
        balls_prime=balls_prime,
        reserved_mass=g_near,
        reserved_mass_prime=g_near_prime,
    )


def core_approximation(core: np.ndarray, blocks) -> np.ndarray:
    """Blockwise product re-coupling of the core tensor.

    Each block tuple keeps exactly its original mass but redistributes it as
    the product of the restricted marginals. Block-constant products are
    fixed points; a single block yields the rescaled product of marginals.
    """
    n = core.ndim
    if not blocks:
        if core.sum() > 0:
            raise ValueError("core carries mass but no blocks were supplied")
        return np.zeros_like(core)
    rho = marginal_masses(core, 0)
    order = np.concatenate(blocks)
    sizes = np.array([len(b) for b in blocks])
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    sub = core[np.ix_(*[order] * n)]
    block_sums = sub
    for axis in range(n):
        block_sums = np.add.reduceat(block_sums, offsets, axis=axis)
    block_marg = np.array([rho[b].sum() for b in blocks])
    if np.any(block_marg <= 0):
        raise ValueError("every block needs positive marginal mass")
    weights = block_sums.copy()
    for axis in range(n):
        sh = [1] * n
        sh[axis] = len(blocks)
        weights = weights / block_marg.reshape(sh)
    expanded = weights
    for axis in range(n):
        expanded = np.repeat(expanded, sizes, axis=axis)
    rho_ordered = rho[order]
    for axis in range(n):
        sh = [1] * n
        sh[axis] = len(order)
        expanded = expanded * rho_ordered.reshape(sh)
    out = np.zeros_like(core)
    out[np.ix_(*[order] * n)] = expanded
    return out


def _normalized_ball_slices(space, reserved_marginal: np.ndarray, balls) -> list[np.ndarray]:
    slices = []
    for ball in balls:
        vec = np.zeros(space.size)
        vec[ball] = reserved_marginal[ball]
        total = vec.sum()
        if total <= 0:
            raise ScheduleInfeasibleError("a reserve slice has no marginal mass")
        slices.append(vec / total)
    return slices


def _product(vectors) -> np.ndarray:
    out = vectors[0]
    for vec in vectors[1:]:
        out = np.multiply.outer(out, vec)
    return out


def remainder_coupling(
    schedule: BlockApproxSchedule,
    gamma2: np.ndarray,
    reserved: np.ndarray,
    reserved_prime: np.ndarray,
):
    """Assemble the three remainder pieces from the reserved slices.

    ``gamma2`` is the symmetric mass evicted from the core (diagonal band
    plus the complement of the compact); ``reserved`` and ``reserved_prime``
    are the slices of mass eps_n cut out around the two anchors. Returns the
    triple of raw mass tensors; their marginals plus the core marginal
    reproduce the original marginal exactly. A negative residual would mean
    the books cannot balance at this step and raises.
    """
    space = schedule.space
    n = schedule.n_marginals
    eps = schedule.epsilon_n
    rho_reserve = marginal_masses(reserved, 0)
    rho_reserve_prime = marginal_masses(reserved_prime, 0)
    nu = _normalized_ball_slices(space, rho_reserve, schedule.balls)
    nu_prime = _normalized_ball_slices(space, rho_reserve_prime, schedule.balls_prime)
    rho2 = marginal_masses(gamma2, 0)

    pieces2 = np.zeros((space.size,) * n)
    for i in range(n):
        part = np.zeros(space.size)
        part[schedule.cells[i]] = rho2[schedule.cells[i]]
        factors = [nu[k] for k in range(n)]
        factors[i] = part
        pieces2 += _product(factors)
    gamma2a = n * symmetrize_masses(pieces2)

    rho3 = rho_reserve + rho2 - marginal_masses(gamma2a, 0)
    if float(rho3.min()) < -_MASS_TOL:
        raise ScheduleInfeasibleError(
            f"negative residual marginal ({float(rho3.min()):.3e}); the reserve around the "
            "first anchor cannot cover the remainder at this step"
        )
    rho3 = np.maximum(rho3, 0.0)
    m3 = float(rho3.sum())

    pieces3 = np.zeros((space.size,) * n)
    for i in range(n):
        factors = [nu_prime[k] for k in range(n)]
        factors[i] = rho3
        pieces3 += _product(factors)
    gamma3a = symmetrize_masses(pieces3)

    b = eps - (n - 1) * m3
    if b < -_MASS_TOL:
        raise ScheduleInfeasibleError(
            f"closing scale {b:.3e} is negative; the reserve around the second anchor "
            "cannot absorb the leftover (mass bookkeeping balances for N = 2, and for "
            "N >= 3 only in a narrow remainder-mass window)"
        )
    gamma4a = max(b, 0.0) * symmetrize_masses(_product(nu_prime))
    return gamma2a, gamma3a, gamma4a


def block_approximation(
    coupling: Coupling,
    n: int,
    fn: CostFunction,
    ct=None,
    support_tol: float = 0.0,
) -> BlockApproxResult:
    """Run one full approximation step and verify its guarantees.

    The input must be permutation symmetric with finite cost. When a cost
    tensor is supplied the result also carries the measured cost gap and its
    analytic bound. Raises ``ScheduleInfeasibleError`` when no valid schedule
    exists at this step index.
    """
    mass = coupling.mass
    sym_err = float(np.abs(mass - symmetrize_masses(mass)).max())
    if sym_err > 1e-12:
        raise ValueError(f"input coupling is not permutation symmetric ({sym_err:.3e})")
    schedule = build_schedule(coupling, n, fn, support_tol)
    space = coupling.space
    nm = coupling.n_marginals
    m = space.size
    eps = schedule.epsilon_n

    support = mass > support_tol
    near = _symmetric_ball_mask(schedule.balls, m, nm) & support
    near_prime = _symmetric_ball_mask(schedule.balls_prime, m, nm) & support
    reserved = np.where(near, mass * (eps / schedule.reserved_mass), 0.0)
    reserved_prime = np.where(near_prime, mass * (eps / schedule.reserved_mass_prime), 0.0)
    gamma0 = mass - reserved - reserved_prime

    min_dist = min_pair_distances(space, nm)
    inside = np.zeros(m, dtype=bool)
    inside[schedule.compact] = True
    core_mask = min_dist >= schedule.delta_n
    for axis in range(nm):
        sh = [1] * nm
        sh[axis] = m
        core_mask &= inside.reshape(sh)
    gamma1 = np.where(core_mask, gamma0, 0.0)
    gamma2 = gamma0 - gamma1

    gamma1a = core_approximation(gamma1, schedule.blocks)
    gamma2a, gamma3a, gamma4a = remainder_coupling(schedule, gamma2, reserved, reserved_prime)
    remainder = gamma2a + gamma3a + gamma4a
    approx = gamma1a + remainder

    target = marginal_masses(mass, 0)
    marg_err = max(
        float(np.abs(marginal_masses(approx, axis) - target).sum()) for axis in range(nm)
    )
    out_sym_err = float(np.abs(approx - symmetrize_masses(approx)).max())
    remainder_mass = float(remainder.sum())
    positive = remainder > 0
    min_sep = float(min_dist[positive].min()) if np.any(positive) else math.inf

    log_ref = _log_reference(space, nm)
    entropy_value = _rel_entropy(approx, log_ref)
    pieces_entropy = sum(_rel_entropy(piece, log_ref) for piece in (gamma1a, gamma2a, gamma3a, gamma4a))
    entropy_bound = math.log(len(schedule.blocks) ** nm + 3) + pieces_entropy

    cost_original = cost_approx = cost_gap = bound = removed = None
    if ct is not None:
        from .coupling import cost_C0

        cost_original = cost_C0(coupling, ct)
        approx_coupling = Coupling(space, nm, approx / approx.sum())
        cost_approx = cost_C0(approx_coupling, ct)
        cost_core = _masked_cost(gamma1, ct)
        removed = abs(cost_original - cost_core)
        cost_gap = abs(cost_approx - cost_original)
        bound = nm * (nm - 1) / 2 * eps + 3 * nm * (nm - 1) / 2 * schedule.radius + removed
    else:
        approx_coupling = Coupling(space, nm, approx / approx.sum())

    return BlockApproxResult(
        approximation=approx_coupling,
        schedule=schedule,
        marginal_error=marg_err,
        symmetry_error=out_sym_err,
        remainder_mass=remainder_mass,
        min_remainder_separation=min_sep,
        core_mass=float(gamma1.sum()),
        entropy_value=entropy_value,
        entropy_bound=entropy_bound,
        cost_original=cost_original,
        cost_approximation=cost_approx,
        cost_gap=cost_gap,
        cost_gap_bound=bound,
        cost_core_removed=removed,
    )


def _log_reference(space, n: int) -> np.ndarray:
    logm = np.log(space.ref_weights)
    out = np.zeros((space.size,) * n)
    for axis in range(n):
        sh = [1] * n
        sh[axis] = space.size
        out = out + logm.reshape(sh)
    return out


def _rel_entropy(mass: np.ndarray, log_ref: np.ndarray) -> float:
    pos = mass > 0
    return float(np.sum(mass[pos] * (np.log(mass[pos]) - log_ref[pos])))


def _masked_cost(mass: np.ndarray, ct) -> float:
    pos = mass > 0
    c = ct.dense()
    if np.any(np.isinf(c) & pos):
        return math.inf
    return float(np.sum(c[pos] * mass[pos]))


def slowdown_reindex(entropies, taus) -> np.ndarray:
    """Index map that repeats approximants until the entropy term dies out.

    For each n (1-based), k(n) is the largest prefix length k such that
    sqrt(tau_n) * entropies[j] < 1 for every j <= k, clamped into [1, n].
    The map is nondecreasing and reaches the full sequence once tau is small
    enough; then tau_n * entropies[k(n)] < sqrt(tau_n).
    """
    entropies = np.asarray(entropies, dtype=float)
    taus = np.asarray(taus, dtype=float)
    if np.any(taus <= 0) or np.any(np.diff(taus) >= 0):
        raise ValueError("tau sequence must be positive and strictly decreasing")
    if np.any(~np.isfinite(entropies)):
        raise ValueError("entropies must be finite")
    out = np.empty(len(taus), dtype=int)
    for pos, tau in enumerate(taus):
        root = math.sqrt(tau)
        raw = 0
        for value in entropies:
            if root * value < 1.0:
                raw += 1
            else:
                break
        out[pos] = min(pos + 1, max(1, raw))
    return out

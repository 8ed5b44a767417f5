"""Discrete multi-marginal entropic optimal transport with repulsive costs.

Solve min over symmetric couplings of  sum(c * gamma) + epsilon * E[gamma]
on finite metric measure spaces, certify the result through the entropic
dual, compare against the closed-form 1D cyclical plan, and run the
block-approximation and epsilon-sweep experiments that connect the
regularized problems to their unregularized limit.
"""

from .space import (
    DiscreteSpace,
    Density,
    grid_from_pdf,
    entropy_of_density,
    check_nonconcentration,
    NonconcentrationReport,
    tail_cost_mass,
)
from .cost import (
    CostFunction,
    CostTensor,
    coulomb,
    riesz,
    log_cost,
    eval_cost,
    gibbs_kernel,
    gibbs_kernel_entry,
    support_clearance_radius,
    diagonal_mass,
)
from .coupling import (
    Coupling,
    marginal,
    symmetrize,
    product_coupling,
    cost_C0,
    entropy,
    cost_Ceps,
    kl,
    reference_change_check,
)
from .sinkhorn import (
    Potential,
    SinkhornConfig,
    SolveReport,
    InfeasibleProblemError,
    solve_symmetric,
    dual_objective,
    dual_objective_multi,
    primal_from_potential,
    duality_gap,
)
from .oracle1d import QuantileTable, cdf, quantile, optimal_map, induced_plan, oracle_cost
from .blockapprox import (
    BlockApproxSchedule,
    BlockApproxResult,
    ScheduleInfeasibleError,
    select_anchors,
    build_schedule,
    core_approximation,
    remainder_coupling,
    block_approximation,
    slowdown_reindex,
)

__version__ = "0.1.0"

__all__ = [
    "DiscreteSpace", "Density", "grid_from_pdf", "entropy_of_density",
    "check_nonconcentration", "NonconcentrationReport", "tail_cost_mass",
    "CostFunction", "CostTensor", "coulomb", "riesz", "log_cost",
    "eval_cost", "gibbs_kernel", "gibbs_kernel_entry",
    "support_clearance_radius", "diagonal_mass",
    "Coupling", "marginal", "symmetrize", "product_coupling",
    "cost_C0", "entropy", "cost_Ceps", "kl", "reference_change_check",
    "Potential", "SinkhornConfig", "SolveReport", "InfeasibleProblemError",
    "solve_symmetric", "dual_objective", "dual_objective_multi",
    "primal_from_potential", "duality_gap",
    "QuantileTable", "cdf", "quantile", "optimal_map", "induced_plan", "oracle_cost",
    "BlockApproxSchedule", "BlockApproxResult", "ScheduleInfeasibleError",
    "select_anchors", "build_schedule", "core_approximation",
    "remainder_coupling", "block_approximation", "slowdown_reindex",
    "__version__",
]

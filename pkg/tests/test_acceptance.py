"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The suite is self-contained
but shares the expensive Gaussian epsilon ladder across criteria through a
module-scoped fixture.
"""

import math
import time

import numpy as np
import pytest

import mmot
from mmot import (
    Coupling,
    CostTensor,
    SinkhornConfig,
    cost_C0,
    cost_Ceps,
    coulomb,
    diagonal_mass,
    dual_objective,
    entropy,
    entropy_of_density,
    gibbs_kernel,
    grid_from_pdf,
    induced_plan,
    kl,
    product_coupling,
    reference_change_check,
    slowdown_reindex,
    solve_symmetric,
    support_clearance_radius,
)

from conftest import random_coupling

FIGURE_EPS = [1e4, 1e-2, 1e-3, 1e-4, 1e-5]


@pytest.fixture(scope="module")
def gaussian_problem():
    space, density = grid_from_pdf("gaussian:0,5", (-25, 25), 400)
    ct = CostTensor(space, 2, coulomb())
    return space, density, ct


@pytest.fixture(scope="module")
def figure_ladder(gaussian_problem):
    """Chained solves over the demonstration epsilon ladder."""
    _, density, ct = gaussian_problem
    reports = {}
    history = []
    for eps in FIGURE_EPS:
        if len(history) >= 2:
            (e1, u1), (e2, u2) = history[-2], history[-1]
            init = u2 + (u2 - u1) * ((eps - e2) / (e2 - e1))
        elif history:
            init = history[-1][1]
        else:
            init = None
        tol = 1e-12 if eps > 1 else 1e-6
        rep = solve_symmetric(
            density, ct, SinkhornConfig(epsilon=eps, tol=tol, max_iter=30_000, init=init)
        )
        history.append((eps, rep.potential.values))
        reports[eps] = rep
    return reports


def test_criterion_01_two_point_closed_form(two_point, two_point_ct):
    _, density = two_point
    for eps in (1.0, 1e-1, 1e-3):
        start = time.perf_counter()
        rep = solve_symmetric(density, two_point_ct, SinkhornConfig(epsilon=eps))
        elapsed = time.perf_counter() - start
        expected = 1 + eps * math.log(2)
        assert abs(rep.primal - expected) <= 1e-9
        assert rep.gap <= 1e-10 and rep.gap >= -1e-10
        assert elapsed < 1.0
    print("criterion 01 PASS: two-point C_eps = 1 + eps log 2 within 1e-9, gap <= 1e-10, < 1 s")


def test_criterion_02_oracle_agreement():
    space, density = grid_from_pdf("uniform", (0, 1), 200)
    ct = CostTensor(space, 2, coulomb())
    start = time.perf_counter()
    rep = solve_symmetric(density, ct, SinkhornConfig(epsilon=1e-4, tol=1e-6, max_iter=60_000))
    elapsed_2 = time.perf_counter() - start
    c0 = cost_C0(rep.coupling, ct)
    assert abs(c0 - 2.0) / 2.0 <= 0.05
    assert elapsed_2 < 60.0

    space3, density3 = grid_from_pdf("uniform", (0, 1), 60)
    ct3 = CostTensor(space3, 3, coulomb())
    start = time.perf_counter()
    rep3 = solve_symmetric(density3, ct3, SinkhornConfig(epsilon=1e-4, tol=1e-6, max_iter=20_000))
    elapsed_3 = time.perf_counter() - start
    c03 = cost_C0(rep3.coupling, ct3)
    assert abs(c03 - 7.5) / 7.5 <= 0.08
    assert elapsed_3 < 60.0
    print(
        f"criterion 02 PASS: C0 vs oracle, N=2: {c0:.4f} ~ 2 ({elapsed_2:.0f}s), "
        f"N=3: {c03:.4f} ~ 7.5 ({elapsed_3:.0f}s)"
    )


def test_criterion_03_figure_reproduction(gaussian_problem, figure_ladder):
    _, density, ct = gaussian_problem
    sizes = {
        eps: int(np.count_nonzero(figure_ladder[eps].coupling.mass > 1e-6))
        for eps in FIGURE_EPS
    }
    small = FIGURE_EPS[1:]
    assert all(sizes[a] > sizes[b] for a, b in zip(small, small[1:])), sizes

    # the eps = 1e4 coupling against the entropy minimizer of the feasible
    # class: the product reference conditioned off the diagonal, projected
    # back onto the marginals (iterative proportional fitting)
    a = density.masses
    t = np.outer(a, a) * (~np.eye(400, dtype=bool))
    for _ in range(500):
        t *= (a / t.sum(1))[:, None]
        t *= (a / t.sum(0))[None, :]
    l1 = float(np.abs(figure_ladder[1e4].coupling.mass - t).sum())
    assert l1 <= 1e-3
    print(
        f"criterion 03 PASS: support sizes {[sizes[e] for e in small]} strictly decreasing; "
        f"eps=1e4 within {l1:.1e} (L1) of the feasible entropy minimizer"
    )


@pytest.mark.xfail(
    strict=True,
    reason=(
        "unattainable as stated: the regularized coupling carries zero diagonal "
        "mass for every eps while the product coupling keeps ~7.05e-3 there "
        "(sum of squared cell masses), so the L1 distance cannot drop below "
        "that plateau, let alone 1e-3"
    ),
)
def test_criterion_03_product_limit_literal(gaussian_problem, figure_ladder):
    _, density, _ = gaussian_problem
    prod = product_coupling(density, 2)
    l1 = float(np.abs(figure_ladder[1e4].coupling.mass - prod.mass).sum())
    assert l1 <= 1e-3


def test_criterion_04_entropy_lower_bound():
    rng = np.random.default_rng(2024)
    checked = 0
    for n, m, count in ((2, 7, 700), (3, 5, 300)):
        _, density = grid_from_pdf("gaussian:0,1", (-3, 3), m)
        floor = n * entropy_of_density(density)
        for _ in range(count):
            gamma = random_coupling(density, n, rng, zero_diagonal=False, symmetric=True)
            assert entropy(gamma) >= floor - 1e-9
            checked += 1
        prod = product_coupling(density, n)
        assert abs(entropy(prod) - floor) <= 1e-9
    assert checked == 1000
    print("criterion 04 PASS: entropy >= N * marginal entropy on 1000 random couplings, "
          "equality at the product")


def test_criterion_05_weak_duality_fuzz():
    rng = np.random.default_rng(77)
    _, density = grid_from_pdf("gaussian:0,1", (-3, 3), 6)
    ct = CostTensor(density.space, 2, coulomb())
    eps_choices = (1.0, 0.3, 0.05)
    couplings = [random_coupling(density, 2, rng) for _ in range(100)]
    checked = 0
    for gamma in couplings:
        for _ in range(10):
            u = rng.normal(scale=rng.uniform(0.1, 3.0), size=6)
            eps = eps_choices[checked % 3]
            assert dual_objective(u, density, ct, eps) <= cost_Ceps(gamma, ct, eps) + 1e-9
            checked += 1
    assert checked == 1000
    print("criterion 05 PASS: dual <= primal + 1e-9 on 1000 random (u, gamma) pairs")


def test_criterion_06_kl_identity():
    rng = np.random.default_rng(404)
    _, density = grid_from_pdf("gaussian:0,1", (-3, 3), 6)
    ct = CostTensor(density.space, 2, coulomb())
    checked = 0
    for eps in (0.5, 1.0):
        kernel = gibbs_kernel(ct, eps)
        for _ in range(50):
            gamma = random_coupling(density, 2, rng)
            lhs = eps * kl(gamma, kernel)
            rhs = cost_Ceps(gamma, ct, eps)
            assert abs(lhs - rhs) <= 1e-9
            checked += 1
    assert checked == 100
    print("criterion 06 PASS: eps * KL(gamma | kernel) = C_eps(gamma) within 1e-9 "
          "on 100 couplings")


def test_criterion_07_reference_change(gaussian_problem):
    _, density, ct = gaussian_problem
    result = reference_change_check(density, ct, 0.1, tol=1e-10)
    assert result.residual <= 1e-6
    assert result.tv_distance <= 1e-6
    print(
        f"criterion 07 PASS: reference-change residual {result.residual:.1e} <= 1e-6, "
        f"TV {result.tv_distance:.1e} <= 1e-6"
    )


def test_criterion_08_block_approximation():
    _, density = grid_from_pdf("uniform", (0, 1), 2500)
    plan = induced_plan(density, 2)
    ct = CostTensor(plan.space, 2, coulomb())
    gaps = []
    for n in (5, 10, 20):
        result = mmot.block_approximation(plan, n, coulomb(), ct=ct)
        sched = result.schedule
        assert result.marginal_error <= 1e-10
        assert result.symmetry_error <= 1e-12
        assert result.remainder_mass < 3 * sched.epsilon_n
        assert result.min_remainder_separation >= 2 * sched.radius / 5
        assert result.cost_gap <= result.cost_gap_bound
        gaps.append(result.cost_gap)
    assert gaps[0] > gaps[1] > gaps[2]
    print(
        f"criterion 08 PASS: block approximation n=5,10,20 with exact marginals, "
        f"remainder < 3 eps_n, separation >= 2r/5, cost gaps {gaps[0]:.4f} > "
        f"{gaps[1]:.4f} > {gaps[2]:.4f} <= bounds"
    )


def test_criterion_09_diagonal_avoidance(gaussian_problem, figure_ladder):
    _, density, _ = gaussian_problem
    report = mmot.check_nonconcentration(density, 2, [2.0, 1.0, 0.5, 0.25])
    beta = report.largest_admissible
    assert beta is not None
    alpha = support_clearance_radius(coulomb(), beta, 2)
    mass_near = diagonal_mass(figure_ladder[1e-5].coupling, alpha)
    assert mass_near <= 1e-3
    print(
        f"criterion 09 PASS: diagonal mass {mass_near:.1e} <= 1e-3 below clearance "
        f"radius {alpha:g} (beta = {beta:g}) at eps = 1e-5"
    )


def test_criterion_10_slowdown_reindex():
    # all entropies small: the index map is the identity
    assert slowdown_reindex([0.5, 0.9, 0.2], [1.0, 0.5, 0.25]).tolist() == [1, 2, 3]
    # the table from the operation's contract
    assert slowdown_reindex(
        [10.0, 100.0, 1000.0], [1.0, 1e-2, 1e-4, 1e-6, 1e-8]
    ).tolist() == [1, 1, 1, 2, 3]
    # gate opens one entry at a time as tau decreases
    assert slowdown_reindex([2.0, 50.0], [0.5, 0.2, 1e-3, 1e-5]).tolist() == [1, 1, 1, 2]
    with pytest.raises(ValueError):
        slowdown_reindex([1.0], [0.5, 0.5])
    print("criterion 10 PASS: slowdown reindexing matches the displayed formula exactly")

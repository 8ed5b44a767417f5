import math

import numpy as np
import pytest
from scipy.optimize import linprog

from mmot import (
    Coupling,
    CostTensor,
    coulomb,
    cost_C0,
    cost_Ceps,
    entropy,
    entropy_of_density,
    gibbs_kernel,
    grid_from_pdf,
    kl,
    log_cost,
    marginal,
    product_coupling,
    reference_change_check,
    symmetrize,
)
from mmot.coupling import log_reference_tensor, marginal_masses, symmetrize_masses

from conftest import random_coupling


def antidiagonal(space):
    return Coupling(space, 2, np.array([[0.0, 0.5], [0.5, 0.0]]))


def test_marginal_of_product(uniform_grid):
    _, density = uniform_grid
    prod = product_coupling(density, 2)
    for axis in range(2):
        marg = marginal(prod, axis)
        assert np.allclose(marg.weights, density.weights, atol=1e-13)


def test_marginal_of_antidiagonal(two_point):
    space, _ = two_point
    anti = antidiagonal(space)
    for axis in range(2):
        assert np.allclose(marginal(anti, axis).masses, [0.5, 0.5])


def test_symmetrize_properties(two_point):
    space, _ = two_point
    rng = np.random.default_rng(3)
    raw = rng.random((2, 2, 2))
    raw /= raw.sum()
    gamma = Coupling(space, 3, raw)
    sym = symmetrize(gamma)
    # marginals coincide on every axis after symmetrization
    margs = [marginal_masses(sym.mass, k) for k in range(3)]
    for m in margs[1:]:
        assert np.allclose(m, margs[0], atol=1e-15)
    # idempotent, and a fixed point on symmetric input
    again = symmetrize(sym)
    assert np.allclose(again.mass, sym.mass, atol=1e-16)
    # point mass splits evenly
    point = np.zeros((2, 2))
    point[0, 1] = 1.0
    split = symmetrize(Coupling(space, 2, point))
    assert np.allclose(split.mass, [[0.0, 0.5], [0.5, 0.0]])


def test_cost_c0_examples(two_point, two_point_ct):
    space, _ = two_point
    anti = antidiagonal(space)
    assert cost_C0(anti, two_point_ct) == pytest.approx(1.0)
    diag = Coupling(space, 2, np.array([[0.5, 0.0], [0.0, 0.5]]))
    assert cost_C0(diag, two_point_ct) == math.inf


def test_cost_c0_oracle_plan_near_continuum():
    from mmot import induced_plan

    space, density = grid_from_pdf("uniform", (0, 1), 200)
    ct = CostTensor(space, 2, coulomb())
    plan = induced_plan(density, 2)
    assert cost_C0(plan, ct) == pytest.approx(2.0, rel=0.02)


def test_cost_c0_lazy_matches_dense():
    space, density = grid_from_pdf("gaussian:0,1", (-4, 4), 12)
    rng = np.random.default_rng(11)
    gamma = random_coupling(density, 3, rng)
    dense_ct = CostTensor(space, 3, coulomb())
    lazy_ct = CostTensor(space, 3, coulomb(), materialize=False)
    assert cost_C0(gamma, lazy_ct) == pytest.approx(cost_C0(gamma, dense_ct), rel=1e-12)


def test_log_cost_negative_tail_warns():
    space, density = grid_from_pdf("uniform", (0, 10), 20)
    prod_off = product_coupling(density, 2).mass * (~np.eye(20, dtype=bool))
    gamma = Coupling(space, 2, prod_off / prod_off.sum())
    ct = CostTensor(space, 2, log_cost())
    with pytest.warns(UserWarning):
        value = cost_C0(gamma, ct)
    assert value < 0


def test_entropy_examples(two_point):
    space, _ = two_point
    _, uniform = grid_from_pdf("uniform", (0, 1), 50)
    assert entropy(product_coupling(uniform, 2)) == pytest.approx(0.0, abs=1e-12)
    assert entropy(antidiagonal(space)) == pytest.approx(math.log(2), rel=1e-14)


def test_entropy_jensen_lower_bound():
    rng = np.random.default_rng(5)
    _, density = grid_from_pdf("gaussian:0,1", (-3, 3), 8)
    floor = 2 * entropy_of_density(density)
    for _ in range(25):
        gamma = random_coupling(density, 2, rng, zero_diagonal=False)
        assert entropy(gamma) >= floor - 1e-9
    prod = product_coupling(density, 2)
    assert entropy(prod) == pytest.approx(floor, abs=1e-10)


def test_product_entropy_identity_n3():
    _, density = grid_from_pdf("gaussian:0,2", (-8, 8), 12)
    prod = product_coupling(density, 3)
    assert entropy(prod) == pytest.approx(3 * entropy_of_density(density), abs=1e-10)


def test_cost_ceps(two_point, two_point_ct):
    space, _ = two_point
    anti = antidiagonal(space)
    assert cost_Ceps(anti, two_point_ct, 0.0) == cost_C0(anti, two_point_ct)
    eps = 0.37
    assert cost_Ceps(anti, two_point_ct, eps) == pytest.approx(1 + eps * math.log(2), rel=1e-14)
    _, uniform = grid_from_pdf("uniform", (0, 1), 30)
    ct = CostTensor(uniform.space, 2, coulomb())
    prod = product_coupling(uniform, 2)
    assert cost_Ceps(prod, ct, 5.0) == math.inf  # product charges the diagonal
    with pytest.raises(ValueError):
        cost_Ceps(anti, two_point_ct, -1.0)


def test_kl_identities(two_point, two_point_ct):
    space, _ = two_point
    anti = antidiagonal(space)
    assert kl(anti, anti.mass) == 0.0
    ref = np.exp(log_reference_tensor(space, 2))
    assert kl(anti, ref) == pytest.approx(entropy(anti), rel=1e-14)
    # charging a reference-null tuple gives +inf
    ref0 = ref.copy()
    ref0[0, 1] = 0.0
    assert kl(anti, ref0) == math.inf


def test_kl_nonnegative_on_probability_references():
    rng = np.random.default_rng(9)
    _, density = grid_from_pdf("uniform", (0, 1), 6)
    for _ in range(20):
        gamma = random_coupling(density, 2, rng, zero_diagonal=False)
        other = random_coupling(density, 2, rng, zero_diagonal=False)
        value = kl(gamma, other.mass)
        assert value >= -1e-12
    same = random_coupling(density, 2, rng, zero_diagonal=False)
    assert kl(same, same.mass) == 0.0


def test_kl_against_gibbs_kernel_is_entropic_cost():
    rng = np.random.default_rng(13)
    space, density = grid_from_pdf("gaussian:0,1", (-3, 3), 7)
    ct = CostTensor(space, 2, coulomb())
    for eps in (0.5, 1.0, 2.0):
        kernel = gibbs_kernel(ct, eps)
        for _ in range(10):
            gamma = random_coupling(density, 2, rng)
            lhs = eps * kl(gamma, kernel)
            rhs = cost_Ceps(gamma, ct, eps)
            assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_symmetric_minimum_equals_unconstrained_lp():
    # exhaustive LP check on a small grid: restricting to symmetric couplings
    # does not change the optimal transport cost
    space, density = grid_from_pdf("gaussian:0,1", (-2, 2), 5)
    ct = CostTensor(space, 2, coulomb())
    m = 5
    cost = ct.dense().copy()
    big = 1e6  # stand-in for the forbidden diagonal
    cost[~np.isfinite(cost)] = big
    a = density.masses
    # unconstrained: variables gamma_ij
    a_eq = []
    b_eq = []
    for i in range(m):
        row = np.zeros((m, m))
        row[i, :] = 1
        a_eq.append(row.ravel())
        b_eq.append(a[i])
    for j in range(m):
        col = np.zeros((m, m))
        col[:, j] = 1
        a_eq.append(col.ravel())
        b_eq.append(a[j])
    res = linprog(cost.ravel(), A_eq=np.array(a_eq), b_eq=np.array(b_eq),
                  bounds=[(0, None)] * (m * m), method="highs")
    assert res.status == 0
    # symmetric: substitute gamma = (s + s^T)/2 via symmetrized objective on
    # the upper triangle
    tri = [(i, j) for i in range(m) for j in range(i, m)]
    nvar = len(tri)
    c_sym = np.array([cost[i, j] if i == j else cost[i, j] + cost[j, i] for i, j in tri])
    a_eq2 = np.zeros((m, nvar))
    for k, (i, j) in enumerate(tri):
        a_eq2[i, k] += 1
        a_eq2[j, k] += 1
    b_eq2 = 2 * a
    res_sym = linprog(c_sym, A_eq=a_eq2, b_eq=b_eq2, bounds=[(0, None)] * nvar,
                      method="highs")
    assert res_sym.status == 0
    # objective of the symmetric program counts each off-diagonal pair twice
    assert res_sym.fun / 2 == pytest.approx(res.fun, rel=1e-9)


def test_symmetrization_preserves_cost_of_symmetric_tensors():
    rng = np.random.default_rng(21)
    space, density = grid_from_pdf("uniform", (0, 1), 6)
    ct = CostTensor(space, 2, coulomb())
    gamma = random_coupling(density, 2, rng, symmetric=False)
    sym = symmetrize(gamma)
    assert cost_C0(sym, ct) == pytest.approx(cost_C0(gamma, ct), rel=1e-12)


def test_reference_change_uniform_two_point(two_point, two_point_ct):
    _, density = two_point
    result = reference_change_check(density, two_point_ct, 0.5)
    assert result.correction == 0.0
    assert result.residual <= 1e-8
    assert result.tv_distance <= 1e-8


def test_reference_change_small_gaussian():
    space, density = grid_from_pdf("gaussian:0,1", (-4, 4), 40)
    ct = CostTensor(space, 2, coulomb())
    result = reference_change_check(density, ct, 0.1, tol=1e-10)
    assert result.residual <= 1e-6
    assert result.tv_distance <= 1e-6
    assert result.correction != 0.0


def test_coupling_validation(two_point):
    space, _ = two_point
    with pytest.raises(ValueError):
        Coupling(space, 2, np.array([[0.5, 0.5], [0.5, 0.5]]))
    with pytest.raises(ValueError):
        Coupling(space, 2, np.array([[-0.5, 1.0], [0.25, 0.25]]))


def test_total_mass_preserved_by_operations(uniform_grid):
    _, density = uniform_grid
    rng = np.random.default_rng(17)
    small_space, small_density = grid_from_pdf("uniform", (0, 1), 8)
    gamma = random_coupling(small_density, 2, rng, symmetric=False)
    assert abs(gamma.mass.sum() - 1) <= 1e-12
    assert abs(symmetrize(gamma).mass.sum() - 1) <= 1e-12
    assert abs(product_coupling(small_density, 3).mass.sum() - 1) <= 1e-12

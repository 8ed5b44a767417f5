import itertools
import math

import numpy as np
import pytest

from mmot import (
    Coupling,
    CostFunction,
    CostTensor,
    coulomb,
    diagonal_mass,
    eval_cost,
    gibbs_kernel,
    gibbs_kernel_entry,
    grid_from_pdf,
    log_cost,
    product_coupling,
    riesz,
    support_clearance_radius,
)
from mmot.cost import min_pair_distances


def test_cost_function_values():
    f = coulomb()
    assert f(0.5) == 2.0
    assert f(0.0) == math.inf
    r = riesz(2.0)
    assert r(0.5) == 4.0
    g = log_cost()
    assert g(1.0) == 0.0
    assert g(0.5) == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        CostFunction("riesz")
    with pytest.raises(ValueError):
        CostFunction("nope")


def test_cost_function_decreasing_and_blowup():
    zs = np.geomspace(1e-6, 10, 200)
    for fn in (coulomb(), riesz(0.5), riesz(3.0), log_cost()):
        values = fn(zs)
        assert np.all(np.diff(values) < 0)
        assert fn(0.0) == math.inf


def test_eval_cost_examples(two_point):
    space, _ = two_point
    # distance 1/2 between the pair
    grid, _ = grid_from_pdf("uniform", (0, 1), 2)
    ct = CostTensor(grid, 2, coulomb())
    assert eval_cost(ct, (0, 1)) == pytest.approx(2.0)
    assert eval_cost(ct, (0, 0)) == math.inf

    grid3, _ = grid_from_pdf("uniform", (0, 1), 3)
    ct3 = CostTensor(grid3, 3, coulomb())
    # mutual distances 1/3, 1/3, 2/3
    assert eval_cost(ct3, (0, 1, 2)) == pytest.approx(7.5)
    assert eval_cost(ct3, (0, 1, 1)) == math.inf


def test_cost_permutation_invariance():
    grid, _ = grid_from_pdf("gaussian:0,1", (-3, 3), 7)
    ct = CostTensor(grid, 3, riesz(1.5))
    for idx in itertools.product(range(7), repeat=3):
        base = ct.eval(idx)
        for perm in itertools.permutations(idx):
            assert ct.eval(perm) == base


def test_dense_matches_eval():
    grid, _ = grid_from_pdf("uniform", (0, 1), 5)
    ct = CostTensor(grid, 3, coulomb())
    dense = ct.dense()
    for idx in itertools.product(range(5), repeat=3):
        expected = ct.eval(idx)
        if math.isinf(expected):
            assert math.isinf(dense[idx])
        else:
            assert dense[idx] == pytest.approx(expected, rel=1e-12)


def test_lazy_slices_match_dense():
    grid, _ = grid_from_pdf("uniform", (0, 1), 6)
    dense_ct = CostTensor(grid, 3, coulomb())
    lazy_ct = CostTensor(grid, 3, coulomb(), materialize=False)
    assert not lazy_ct.is_materialized
    with pytest.raises(MemoryError):
        lazy_ct.dense()
    full = dense_ct.dense()
    for i in range(6):
        got = lazy_ct.slice_first(i)
        want = full[i]
        assert np.array_equal(np.isinf(got), np.isinf(want))
        finite = np.isfinite(want)
        assert np.allclose(got[finite], want[finite], rtol=1e-12)


def test_gibbs_entries(two_point_ct):
    assert gibbs_kernel_entry(two_point_ct, 1.0, (0, 0)) == 0.0
    assert gibbs_kernel_entry(two_point_ct, 1.0, (0, 1)) == pytest.approx(math.exp(-1) * 0.25)
    # unit reference masses, cost 1, eps 1
    import mmot

    space = mmot.DiscreteSpace(
        points=np.array([0.0, 1.0]),
        metric=np.array([[0.0, 1.0], [1.0, 0.0]]),
        ref_weights=np.array([1.0, 1.0]),
    )
    ct = CostTensor(space, 2, coulomb())
    assert gibbs_kernel_entry(ct, 1.0, (0, 1)) == pytest.approx(math.exp(-1))
    with pytest.raises(ValueError):
        gibbs_kernel_entry(ct, 0.0, (0, 1))


def test_gibbs_kernel_monotone_in_cost_and_epsilon():
    grid, _ = grid_from_pdf("uniform", (0, 1), 10)
    ct = CostTensor(grid, 2, coulomb())
    kernel = gibbs_kernel(ct, 0.7)
    # farther pairs have smaller cost, hence larger kernel entries
    assert kernel[0, 9] > kernel[0, 1]
    # continuity in epsilon at a finite-cost tuple
    eps_grid = np.linspace(0.5, 1.5, 20)
    vals = [gibbs_kernel_entry(ct, e, (0, 5)) for e in eps_grid]
    assert np.all(np.diff(vals) > 0)  # increasing eps raises e^{-c/eps}


def test_clearance_radius_closed_forms():
    assert support_clearance_radius(coulomb(), 0.5, 2) == pytest.approx(0.25)
    assert support_clearance_radius(riesz(1.0), 0.5, 2) == pytest.approx(0.25)
    assert support_clearance_radius(coulomb(), 0.3, 3) == pytest.approx(0.3 / 9)
    # riesz general form
    s = 2.0
    val = support_clearance_radius(riesz(s), 0.4, 3)
    assert val == pytest.approx(0.4 * (2 / (9 * 2)) ** (1 / s))
    # log form solves -log(alpha) = N^2 (N-1) (-log beta) / 2
    alpha = support_clearance_radius(log_cost(), 0.5, 2)
    assert -math.log(alpha) == pytest.approx(2 * math.log(2))
    with pytest.raises(ValueError):
        support_clearance_radius(log_cost(), 1.0, 2)
    with pytest.raises(ValueError):
        support_clearance_radius(coulomb(), -1.0, 2)


def test_clearance_radius_is_left_inverse_bound():
    # f(alpha) == N^2 (N-1) f(beta) / 2 at the returned radius
    for fn in (coulomb(), riesz(1.7)):
        for n in (2, 3):
            beta = 0.37
            alpha = support_clearance_radius(fn, beta, n)
            assert fn(alpha) == pytest.approx(n**2 * (n - 1) / 2 * fn(beta), rel=1e-12)


def test_diagonal_mass_product_uniform():
    _, density = grid_from_pdf("uniform", (0, 1), 100)
    prod = product_coupling(density, 2)
    value = diagonal_mass(prod, 0.1)
    # direct double loop oracle
    masses = density.masses
    pts = density.space.points
    direct = 0.0
    for i in range(100):
        for j in range(100):
            if abs(pts[i] - pts[j]) < 0.1:
                direct += masses[i] * masses[j]
    assert value == pytest.approx(direct, rel=1e-12)
    assert value == pytest.approx(0.19, abs=0.01)  # 2a - a^2 in the continuum


def test_diagonal_mass_edge_cases(two_point):
    space, density = two_point
    anti = Coupling(space, 2, np.array([[0.0, 0.5], [0.5, 0.0]]))
    assert diagonal_mass(anti, 0.5) == 0.0
    assert diagonal_mass(anti, 0.0) == 0.0
    assert diagonal_mass(anti, 1.5) == 1.0


def test_min_pair_distances_n3():
    grid, _ = grid_from_pdf("uniform", (0, 1), 4)
    tensor = min_pair_distances(grid, 3)
    d = grid.metric
    for idx in itertools.product(range(4), repeat=3):
        expected = min(d[idx[0], idx[1]], d[idx[0], idx[2]], d[idx[1], idx[2]])
        assert tensor[idx] == expected


def test_riesz_window_warning():
    grid, _ = grid_from_pdf("uniform", (0, 1), 5)
    with pytest.warns(UserWarning):
        CostTensor(grid, 2, riesz(2.5))

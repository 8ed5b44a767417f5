import numpy as np
import pytest

from mmot import Coupling, CostTensor, Density, DiscreteSpace, coulomb, grid_from_pdf
from mmot.coupling import symmetrize_masses


@pytest.fixture
def two_point():
    space = DiscreteSpace(
        points=np.array([0.0, 1.0]),
        metric=np.array([[0.0, 1.0], [1.0, 0.0]]),
        ref_weights=np.array([0.5, 0.5]),
    )
    density = Density(space, np.array([1.0, 1.0]))
    return space, density


@pytest.fixture
def two_point_ct(two_point):
    space, density = two_point
    return CostTensor(space, 2, coulomb())


@pytest.fixture
def uniform_grid():
    return grid_from_pdf("uniform", (0, 1), 100)


def ipf_repair(tensor, target, rounds=4000, tol=1e-13):
    """Scale a positive tensor axis by axis until every marginal matches."""
    t = np.array(tensor, dtype=float)
    n = t.ndim
    for _ in range(rounds):
        worst = 0.0
        for axis in range(n):
            axes = tuple(i for i in range(n) if i != axis)
            marg = t.sum(axis=axes)
            worst = max(worst, float(np.abs(marg - target).sum()))
            ratio = np.where(marg > 0, target / np.where(marg > 0, marg, 1.0), 0.0)
            sh = [1] * n
            sh[axis] = len(target)
            t *= ratio.reshape(sh)
        if worst < tol:
            break
    return t


def random_coupling(density, n_marginals, rng, zero_diagonal=True, symmetric=True):
    """Random coupling with every marginal equal to the density's masses."""
    m = density.space.size
    target = density.masses
    t = rng.random((m,) * n_marginals) + 0.1
    if zero_diagonal:
        idx = np.indices(t.shape)
        same = np.zeros(t.shape, dtype=bool)
        for a in range(n_marginals):
            for b in range(a + 1, n_marginals):
                same |= idx[a] == idx[b]
        t[same] = 0.0
    t = ipf_repair(t, target)
    if symmetric:
        t = symmetrize_masses(t)
    t /= t.sum()
    return Coupling(density.space, n_marginals, t)

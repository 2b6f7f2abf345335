import itertools
from math import factorial

import numpy as np
import pytest

from dipole_eddy.quadrature import TET_DEGREE2, TET_DEGREE5, TRI_DEGREE4, map_points


def simplex_moment(a):
    """Average of prod(lambda_i^a_i) over a simplex, normalized to measure one."""
    d = len(a) - 1
    return factorial(d) * np.prod([factorial(k) for k in a]) / factorial(d + sum(a))


@pytest.mark.parametrize("rule,nbary", [(TET_DEGREE5, 4), (TET_DEGREE2, 4), (TRI_DEGREE4, 3)])
def test_monomial_exactness(rule, nbary):
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(rule.bary.sum(axis=1), 1.0)
    for a in itertools.product(range(rule.degree + 1), repeat=nbary):
        if sum(a) > rule.degree:
            continue
        got = np.sum(rule.weights * np.prod(rule.bary ** np.array(a), axis=1))
        assert got == pytest.approx(simplex_moment(a), abs=1e-15)


def test_degree5_not_exact_at_degree6():
    a = (6, 0, 0, 0)
    got = np.sum(TET_DEGREE5.weights * TET_DEGREE5.bary[:, 0] ** 6)
    assert abs(got - simplex_moment(a)) > 1e-8


def test_point_counts():
    assert (TET_DEGREE5.n_points, TET_DEGREE2.n_points, TRI_DEGREE4.n_points) == (14, 4, 6)


def test_map_points_centroid():
    v = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]])
    pts = map_points(v, TET_DEGREE5)
    assert np.allclose(np.einsum("q,nqd->nd", TET_DEGREE5.weights, pts), 0.25)

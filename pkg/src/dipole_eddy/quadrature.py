"""Symmetric quadrature rules on the reference tetrahedron and triangle.

Points are given in barycentric coordinates and weights sum to one, so an
integral over a simplex is ``measure * sum(w * f(x_q))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np


@dataclass(frozen=True)
class Rule:
    bary: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def n_points(self) -> int:
        return len(self.weights)


def _orbit(*coords) -> np.ndarray:
    return np.array(sorted(set(permutations(coords))), dtype=float)


def _build(orbits, degree) -> Rule:
    pts, wts = [], []
    for coords, w in orbits:
        o = _orbit(*coords)
        pts.append(o)
        wts.append(np.full(len(o), w))
    bary = np.vstack(pts)
    weights = np.concatenate(wts)
    return Rule(bary, weights / weights.sum(), degree)


_a1, _a2 = 0.31088591926330060980, 0.09273525031089122640
_b3, _c3 = 0.45449629587435035050, 0.04550370412564964950
TET_DEGREE5 = _build([
    ((_a1, _a1, _a1, 1 - 3 * _a1), 0.11268792571801585080),
    ((_a2, _a2, _a2, 1 - 3 * _a2), 0.07349304311636194955),
    ((_b3, _b3, _c3, _c3), 0.04254602077708146644),
], 5)

_t2 = 0.1381966011250105
TET_DEGREE2 = _build([((_t2, _t2, _t2, 1 - 3 * _t2), 0.25)], 2)

_d1, _d2 = 0.445948490915965, 0.091576213509771
TRI_DEGREE4 = _build([
    ((_d1, _d1, 1 - 2 * _d1), 0.223381589678011),
    ((_d2, _d2, 1 - 2 * _d2), 0.109951743655322),
], 4)


def map_points(vertices: np.ndarray, rule: Rule) -> np.ndarray:
    """Physical points for simplices ``vertices`` (n, k, 3); returns (n, nq, 3)."""
    return np.einsum("qk,nkd->nqd", rule.bary, vertices)

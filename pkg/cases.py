#!/usr/bin/env python3
"""
Named manufactured cases

    bump      u = prod_i (x_i (1 - x_i))^{2m}, boundary-flat on the unit box
    poly:<d>  u = (1 + c.x)^d, interpolation checks only
    trig      u = prod_i cos(pi x_i), m = 1 only

Each case evaluates u, any partial derivative of u, and the load
f = (-Delta)^m u + u of the model problem.
"""

import math
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from tensoralg import MultiIndex, multi_indices, multiplicity

logger = logging.getLogger(__name__)

CASE_NAMES = ("bump", "poly:<degree>", "trig")

# Error quadrature is capped here; high bump degrees stay integrable to round-off
MAX_ERROR_QUAD_DEGREE = 40


class CaseError(ValueError):
    """Raised for unknown case names or cases that do not fit (n, m)"""


@dataclass
class ManufacturedCase:
    name: str
    dim: int
    m: int
    derivative: Callable[[np.ndarray, MultiIndex], np.ndarray]
    load: Callable[[np.ndarray], np.ndarray]
    degree: Optional[int] = None
    solvable: bool = True

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.derivative(points, MultiIndex((0,) * self.dim))

    def error_quadrature_degree(self, k: int, extra: int = 4) -> int:
        """Degree of the rule used to integrate |u - p|^2 against degree-k polynomials"""
        if self.degree is None:
            return min(2 * k + 2 * extra, MAX_ERROR_QUAD_DEGREE)
        return min(2 * max(k, self.degree), MAX_ERROR_QUAD_DEGREE)


def _points(points: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(points, dtype=float).reshape(-1, dim)


def _polyharmonic_load(dim: int, m: int, derivative) -> Callable[[np.ndarray], np.ndarray]:
    """(-1)^m sum_{|gamma|=m} m!/gamma! d^{2 gamma} u + u"""
    terms = [(multiplicity(gamma), MultiIndex(2 * g for g in gamma)) for gamma in multi_indices(dim, m)]

    def load(points):
        total = derivative(points, MultiIndex((0,) * dim))
        sign = (-1) ** m
        for weight, doubled in terms:
            total = total + sign * weight * derivative(points, doubled)
        return total

    return load


def bump_case(dim: int, m: int) -> ManufacturedCase:
    factor = Polynomial([0.0, 1.0, -1.0]) ** (2 * m)
    max_order = 4 * m
    derivatives = [factor.deriv(j) if j > 0 else factor for j in range(max_order + 1)]

    def derivative(points, alpha):
        points = _points(points, dim)
        out = np.ones(points.shape[0])
        for i, a in enumerate(alpha):
            if a > max_order:
                return np.zeros(points.shape[0])
            out = out * derivatives[a](points[:, i])
        return out

    return ManufacturedCase("bump", dim, m, derivative, _polyharmonic_load(dim, m, derivative),
                            degree=4 * m * dim)


def poly_case(dim: int, m: int, degree: int) -> ManufacturedCase:
    if degree < 0:
        raise CaseError(f"Polynomial degree must be nonnegative, got {degree}")
    c = np.array([1.0, 1.0 / 2.0, 1.0 / 3.0])[:dim]

    def derivative(points, alpha):
        points = _points(points, dim)
        order = sum(alpha)
        if order > degree:
            return np.zeros(points.shape[0])
        scale = math.factorial(degree) / math.factorial(degree - order) * np.prod(c ** np.array(alpha))
        return scale * (1.0 + points @ c) ** (degree - order)

    return ManufacturedCase(f"poly:{degree}", dim, m, derivative, _polyharmonic_load(dim, m, derivative),
                            degree=degree, solvable=False)


def trig_case(dim: int, m: int) -> ManufacturedCase:
    if m != 1:
        raise CaseError(f"The trig case satisfies the natural boundary conditions only for m=1, got m={m}")

    def derivative(points, alpha):
        points = _points(points, dim)
        out = np.ones(points.shape[0])
        for i, a in enumerate(alpha):
            out = out * math.pi ** a * np.cos(math.pi * points[:, i] + 0.5 * math.pi * a)
        return out

    def load(points):
        return (dim * math.pi ** 2 + 1.0) * derivative(points, MultiIndex((0,) * dim))

    return ManufacturedCase("trig", dim, m, derivative, load)


def make_case(name: str, dim: int, m: int) -> ManufacturedCase:
    """Build a named case for space dimension `dim` and order `m`"""
    if name == "bump":
        return bump_case(dim, m)
    if name == "trig":
        return trig_case(dim, m)
    if name.startswith("poly:"):
        try:
            degree = int(name.split(":", 1)[1])
        except ValueError:
            raise CaseError(f"Bad polynomial case {name!r}; expected poly:<degree>") from None
        return poly_case(dim, m, degree)
    raise CaseError(f"Unknown case {name!r}; choose from {', '.join(CASE_NAMES)}")


def gradient_values(case: ManufacturedCase, points: np.ndarray, order: int) -> Sequence[np.ndarray]:
    """Components d^gamma u, |gamma| = order, at the points"""
    return [case.derivative(points, gamma) for gamma in multi_indices(case.dim, order)]

#!/usr/bin/env python3
"""
Scaled monomial spaces, moment-based Gram matrices, L2 projections and
simplex quadrature
"""

import math
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Tuple

import numpy as np
from scipy import linalg
from scipy.special import roots_legendre

from tensoralg import (
    MultiIndex,
    graded_multi_indices,
    index_positions,
)

logger = logging.getLogger(__name__)

# Gram matrices beyond this condition number are treated as degenerate
GRAM_CONDITION_LIMIT = 1e14


class PolySpaceError(ValueError):
    """Raised on inconsistent bases, moment tables or coefficient vectors"""


class DegenerateGeometryError(PolySpaceError):
    """Raised when a Gram matrix is singular or numerically degenerate"""


# =============================================================================
# QUADRATURE
# =============================================================================

@dataclass(frozen=True, eq=False)
class Quadrature:
    """Points (npts x dim) and weights (npts)"""
    points: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate values sampled at the points; extra axes are kept"""
        return np.tensordot(self.weights, values, axes=(0, 0))

    def transformed(self, origin: np.ndarray, axes: np.ndarray) -> "Quadrature":
        """Same rule in the coordinates axes @ (x - origin)"""
        return Quadrature((self.points - origin) @ axes.T, self.weights)

    @staticmethod
    def concatenate(rules) -> "Quadrature":
        rules = list(rules)
        return Quadrature(
            np.vstack([r.points for r in rules]),
            np.concatenate([r.weights for r in rules]),
        )


@lru_cache(maxsize=None)
def _gauss_legendre_unit(npts: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_legendre(degree: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1] exact for polynomials of the given degree"""
    return _gauss_legendre_unit(max(1, math.ceil((degree + 1) / 2)))


@lru_cache(maxsize=None)
def _reference_simplex_rule(dim: int, degree: int) -> Tuple[np.ndarray, np.ndarray]:
    """Collapsed tensor Gauss rule on the unit simplex, barycentric offsets"""
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    if dim == 1:
        x, w = gauss_legendre(degree)
        return x[:, None], w
    if dim == 2:
        xu, wu = gauss_legendre(degree + 1)
        xv, wv = gauss_legendre(degree)
        u, v = np.meshgrid(xu, xv, indexing="ij")
        wts = np.outer(wu, wv) * (1.0 - u)
        pts = np.stack([u, (1.0 - u) * v], axis=-1)
        return pts.reshape(-1, 2), wts.reshape(-1)
    if dim == 3:
        xu, wu = gauss_legendre(degree + 2)
        xv, wv = gauss_legendre(degree + 1)
        xw, ww = gauss_legendre(degree)
        u, v, s = np.meshgrid(xu, xv, xw, indexing="ij")
        wts = (
            wu[:, None, None] * wv[None, :, None] * ww[None, None, :]
            * (1.0 - u) ** 2 * (1.0 - v)
        )
        pts = np.stack([u, (1.0 - u) * v, (1.0 - u) * (1.0 - v) * s], axis=-1)
        return pts.reshape(-1, 3), wts.reshape(-1)
    raise PolySpaceError(f"No simplex rule for dimension {dim}")


def simplex_quadrature(vertices: np.ndarray, degree: int) -> Quadrature:
    """
    Quadrature on a simplex embedded in any ambient dimension

    Args:
        vertices: (d+1) x n array of simplex corners
        degree: polynomial degree integrated exactly

    Returns:
        Quadrature with ambient points
    """
    vertices = np.asarray(vertices, dtype=float)
    dim = vertices.shape[0] - 1
    ref_pts, ref_wts = _reference_simplex_rule(dim, max(degree, 0))
    if dim == 0:
        return Quadrature(vertices.copy(), ref_wts.copy())
    jac = (vertices[1:] - vertices[0]).T
    scale = math.sqrt(abs(np.linalg.det(jac.T @ jac)))
    return Quadrature(vertices[0] + ref_pts @ jac.T, ref_wts * scale)


# =============================================================================
# SCALED MONOMIALS
# =============================================================================

@dataclass(frozen=True, eq=False)
class MonomialBasis:
    """Scaled monomials m_beta(x) = ((x - center) / scale)^beta, |beta| <= degree"""
    dim: int
    degree: int
    center: np.ndarray
    scale: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(self.dim)
        object.__setattr__(self, "center", center)
        if self.scale <= 0.0:
            raise PolySpaceError(f"Monomial scale must be positive, got {self.scale}")

    @property
    def indices(self) -> Tuple[MultiIndex, ...]:
        return graded_multi_indices(self.dim, self.degree)

    @property
    def size(self) -> int:
        return len(self.indices)

    def with_degree(self, degree: int) -> "MonomialBasis":
        return MonomialBasis(self.dim, degree, self.center, self.scale)

    def same_frame(self, other: "MonomialBasis") -> bool:
        return (
            self.dim == other.dim
            and np.allclose(self.center, other.center)
            and math.isclose(self.scale, other.scale)
        )

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Vandermonde matrix (npts x size)"""
        points = np.asarray(points, dtype=float)
        if self.dim == 0:
            return np.ones((points.shape[0] if points.ndim else 1, self.size))
        points = points.reshape(-1, self.dim)
        if self.size == 0:
            return np.zeros((points.shape[0], 0))
        y = (points - self.center) / self.scale
        exponents = np.array(self.indices, dtype=int).reshape(self.size, self.dim)
        return np.prod(y[:, None, :] ** exponents[None, :, :], axis=2)

    def derivative(self, alpha) -> np.ndarray:
        """Coefficient matrix of d^alpha acting on this basis (size x size)"""
        alpha = MultiIndex(alpha)
        return _derivative_pattern(self.dim, self.degree, alpha) / self.scale ** alpha.order

    def laplacian_power(self, power: int) -> np.ndarray:
        """Coefficient matrix of (-Delta)^power"""
        lap = np.zeros((self.size, self.size))
        for i in range(self.dim):
            lap += self.derivative(MultiIndex.unit(self.dim, i, 2))
        return np.linalg.matrix_power(-lap, power) if power > 0 else np.eye(self.size)


@lru_cache(maxsize=None)
def _derivative_pattern(dim: int, degree: int, alpha: MultiIndex) -> np.ndarray:
    indices = graded_multi_indices(dim, degree)
    positions = index_positions(dim, degree)
    pattern = np.zeros((len(indices), len(indices)))
    for col, beta in enumerate(indices):
        if beta.dominates(alpha):
            reduced = beta.minus(alpha)
            coeff = math.prod(
                math.factorial(b) // math.factorial(r) for b, r in zip(beta, reduced)
            )
            pattern[positions[reduced], col] = coeff
    pattern.flags.writeable = False
    return pattern


@dataclass(eq=False)
class PolyCoeffs:
    """Polynomial expressed in a MonomialBasis"""
    basis: MonomialBasis
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if self.coeffs.size != self.basis.size:
            raise PolySpaceError(
                f"Basis of size {self.basis.size} got {self.coeffs.size} coefficients"
            )

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.basis.evaluate(points) @ self.coeffs

    @property
    def degree(self) -> int:
        return self.basis.degree

    def differentiate(self, alpha) -> "PolyCoeffs":
        return PolyCoeffs(self.basis, self.basis.derivative(alpha) @ self.coeffs)

    def laplacian_power(self, power: int) -> "PolyCoeffs":
        return PolyCoeffs(self.basis, self.basis.laplacian_power(power) @ self.coeffs)

    def to_degree(self, degree: int) -> "PolyCoeffs":
        """Embed into a larger basis, or truncate to a smaller one"""
        target = self.basis.with_degree(degree)
        out = np.zeros(target.size)
        n = min(target.size, self.basis.size)
        out[:n] = self.coeffs[:n]
        return PolyCoeffs(target, out)

    @staticmethod
    def zero(basis: MonomialBasis) -> "PolyCoeffs":
        return PolyCoeffs(basis, np.zeros(basis.size))


# =============================================================================
# MOMENTS, GRAM MATRICES AND PROJECTIONS
# =============================================================================

@dataclass(eq=False)
class MomentTable:
    """Integrals of the scaled monomials of `basis` over one entity"""
    basis: MonomialBasis
    values: np.ndarray
    positions: Dict[MultiIndex, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size != self.basis.size:
            raise PolySpaceError("Moment table does not match its basis")
        self.positions = index_positions(self.basis.dim, self.basis.degree)

    @property
    def degree(self) -> int:
        return self.basis.degree

    @property
    def measure(self) -> float:
        return float(self.values[0])

    def moment(self, beta) -> float:
        return float(self.values[self.positions[MultiIndex(beta)]])


def gram_matrix(left: MonomialBasis, right: MonomialBasis, moments: MomentTable) -> np.ndarray:
    """G[a, b] = integral of m_a m_b, read off the moment table"""
    if not (left.same_frame(moments.basis) and right.same_frame(moments.basis)):
        raise PolySpaceError("Bases and moment table use different centers or scales")
    if left.degree + right.degree > moments.degree:
        raise PolySpaceError(
            f"Moment table of degree {moments.degree} is insufficient for "
            f"degrees {left.degree} + {right.degree}"
        )
    gram = np.empty((left.size, right.size))
    for a, alpha in enumerate(left.indices):
        for b, beta in enumerate(right.indices):
            gram[a, b] = moments.values[moments.positions[alpha.plus(beta)]]
    return gram


def _checked_cholesky(gram: np.ndarray) -> np.ndarray:
    if gram.size == 0:
        return gram
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > GRAM_CONDITION_LIMIT:
        raise DegenerateGeometryError(f"Gram matrix is degenerate (condition {cond:.3e})")
    try:
        return linalg.cholesky(gram, lower=True)
    except linalg.LinAlgError as e:
        raise DegenerateGeometryError(f"Gram matrix is not positive definite: {e}") from e


def l2_project(f: Callable[[np.ndarray], np.ndarray],
               degree: int,
               basis: MonomialBasis,
               moments: MomentTable,
               quadrature: Quadrature) -> PolyCoeffs:
    """
    L2 projection onto P_degree over an entity

    Args:
        f: function evaluated at quadrature points (npts x dim)
        degree: target degree; a negative degree yields the zero polynomial
        basis: any basis carrying the entity's center and scale
        moments: moment table of the entity, degree >= 2 * degree
        quadrature: rule on the entity in the same coordinates as the basis

    Returns:
        Coefficients in the degree-`degree` scaled monomial basis
    """
    target = basis.with_degree(degree)
    if target.size == 0:
        return PolyCoeffs.zero(target)
    gram = gram_matrix(target, target, moments)
    lower = _checked_cholesky(gram)
    values = np.asarray(f(quadrature.points), dtype=float).reshape(-1)
    rhs = target.evaluate(quadrature.points).T @ (quadrature.weights * values)
    return PolyCoeffs(target, linalg.cho_solve((lower, True), rhs))


@dataclass(eq=False)
class OrthonormalBasis:
    """q_i = sum_a change[a, i] m_a, orthonormal for (1/|F|)(., .)_F"""
    basis: MonomialBasis
    change: np.ndarray

    @property
    def size(self) -> int:
        return self.change.shape[1]

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return self.basis.evaluate(points) @ self.change


def orthonormalize(basis: MonomialBasis, moments: MomentTable) -> OrthonormalBasis:
    """Gram-Schmidt in graded order against the normalized L2 product"""
    if basis.size == 0:
        return OrthonormalBasis(basis, np.zeros((0, 0)))
    gram = gram_matrix(basis, basis, moments) / moments.measure
    lower = _checked_cholesky(gram)
    change = linalg.solve_triangular(lower, np.eye(basis.size), lower=True).T
    return OrthonormalBasis(basis, change)

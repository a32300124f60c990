#!/usr/bin/env python3
"""
Multi-index and symmetric tensor algebra

Multi-indices are ordered graded colexicographically everywhere in the
engine, e.g. for two variables and order 2: (2,0), (1,1), (0,2).
Symmetric j-tensors over R^n store one component per multi-index of order j;
the multiplicity j!/alpha! of each component is kept alongside so that
contractions never expand to n^j entries.
"""

import math
import logging
import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

FRAME_TOL = 1e-10


class TensorError(ValueError):
    """Raised on malformed indices, mismatched tensors or frames"""


# =============================================================================
# MULTI-INDICES
# =============================================================================

class MultiIndex(tuple):
    """n-dimensional multi-index (alpha_1, ..., alpha_n) of nonnegative integers"""

    def __new__(cls, entries: Iterable[int]):
        entries = tuple(int(a) for a in entries)
        if any(a < 0 for a in entries):
            raise TensorError(f"Multi-index entries must be nonnegative: {entries}")
        return super().__new__(cls, entries)

    @property
    def dim(self) -> int:
        return len(self)

    @property
    def order(self) -> int:
        return sum(self)

    @property
    def factorial(self) -> int:
        return math.prod(math.factorial(a) for a in self)

    def plus(self, other: Sequence[int]) -> "MultiIndex":
        return MultiIndex(a + b for a, b in zip(self, other))

    def minus(self, other: Sequence[int]) -> "MultiIndex":
        return MultiIndex(a - b for a, b in zip(self, other))

    def dominates(self, other: Sequence[int]) -> bool:
        """True when alpha >= other componentwise"""
        return all(a >= b for a, b in zip(self, other))

    @staticmethod
    def unit(dim: int, i: int, order: int = 1) -> "MultiIndex":
        return MultiIndex(order if l == i else 0 for l in range(dim))


@lru_cache(maxsize=None)
def multi_indices(dim: int, order: int) -> Tuple[MultiIndex, ...]:
    """All multi-indices of exactly `order` in `dim` variables, colex ordered"""
    if order < 0:
        return ()
    if dim == 0:
        return (MultiIndex(()),) if order == 0 else ()
    found = [
        MultiIndex(c)
        for c in itertools.product(range(order + 1), repeat=dim)
        if sum(c) == order
    ]
    return tuple(sorted(found, key=lambda a: tuple(reversed(a))))


@lru_cache(maxsize=None)
def graded_multi_indices(dim: int, max_order: int) -> Tuple[MultiIndex, ...]:
    """Multi-indices of order 0..max_order; empty for max_order < 0"""
    if dim == 0:
        return (MultiIndex(()),) if max_order >= 0 else ()
    out: List[MultiIndex] = []
    for j in range(max_order + 1):
        out.extend(multi_indices(dim, j))
    return tuple(out)


@lru_cache(maxsize=None)
def index_positions(dim: int, max_order: int) -> Dict[MultiIndex, int]:
    return {alpha: i for i, alpha in enumerate(graded_multi_indices(dim, max_order))}


def multiplicity(alpha: Sequence[int]) -> int:
    """j!/alpha!, the number of index tuples with the counts of alpha"""
    alpha = MultiIndex(alpha)
    return math.factorial(alpha.order) // alpha.factorial


def symmetric_dimension(dim: int, order: int) -> int:
    """C(n+j-1, j)"""
    if order < 0:
        return 0
    return math.comb(dim + order - 1, order) if dim > 0 else int(order == 0)


def polynomial_dimension(dim: int, degree: int) -> int:
    """dim P_k in `dim` variables, with P_k = {0} for k < 0"""
    if degree < 0:
        return 0
    return math.comb(dim + degree, degree)


# =============================================================================
# SYMMETRIC TENSORS
# =============================================================================

@dataclass(frozen=True, eq=False)
class SymTensor:
    """Symmetric tensor of a given order over R^dim"""
    dim: int
    order: int
    components: np.ndarray

    def __post_init__(self):
        expected = symmetric_dimension(self.dim, self.order)
        comps = np.asarray(self.components, dtype=float).reshape(-1)
        if comps.size != expected:
            raise TensorError(
                f"SymTensor of order {self.order} in {self.dim} variables needs "
                f"{expected} components, got {comps.size}"
            )
        object.__setattr__(self, "components", comps)

    @property
    def indices(self) -> Tuple[MultiIndex, ...]:
        return multi_indices(self.dim, self.order)

    @property
    def weights(self) -> np.ndarray:
        return multiplicity_weights(self.dim, self.order)

    def component(self, alpha: Sequence[int]) -> float:
        return float(self.components[self.indices.index(MultiIndex(alpha))])

    def __add__(self, other: "SymTensor") -> "SymTensor":
        _check_compatible(self, other)
        return SymTensor(self.dim, self.order, self.components + other.components)

    def __mul__(self, scalar: float) -> "SymTensor":
        return SymTensor(self.dim, self.order, self.components * scalar)

    __rmul__ = __mul__

    def allclose(self, other: "SymTensor", atol: float = 1e-12) -> bool:
        return (
            self.dim == other.dim
            and self.order == other.order
            and np.allclose(self.components, other.components, atol=atol)
        )

    @staticmethod
    def scalar(value: float, dim: int) -> "SymTensor":
        return SymTensor(dim, 0, np.array([value]))


@lru_cache(maxsize=None)
def _multiplicity_weights(dim: int, order: int) -> Tuple[float, ...]:
    return tuple(float(multiplicity(a)) for a in multi_indices(dim, order))


def multiplicity_weights(dim: int, order: int) -> np.ndarray:
    return np.array(_multiplicity_weights(dim, order))


def _check_compatible(a: SymTensor, b: SymTensor):
    if a.dim != b.dim or a.order != b.order:
        raise TensorError(
            f"Tensor mismatch: (dim {a.dim}, order {a.order}) vs (dim {b.dim}, order {b.order})"
        )


def sym(entries: Iterable[Tuple[Sequence[int], float]], dim: int, order: int) -> SymTensor:
    """
    Symmetric part of a full tensor

    Args:
        entries: (index tuple, value) pairs of the full tensor, 0-based indices
        dim: ambient dimension n
        order: tensor order j

    Returns:
        The permutation average as a SymTensor
    """
    positions = {alpha: i for i, alpha in enumerate(multi_indices(dim, order))}
    sums = np.zeros(len(positions))
    for index, value in entries:
        index = tuple(index)
        if len(index) != order:
            raise TensorError(f"Index {index} does not have length {order}")
        if any(i < 0 or i >= dim for i in index):
            raise TensorError(f"Index {index} out of range for dimension {dim}")
        counts = [0] * dim
        for i in index:
            counts[i] += 1
        sums[positions[MultiIndex(counts)]] += value
    return SymTensor(dim, order, sums / multiplicity_weights(dim, order))


def contract(a: SymTensor, b: SymTensor) -> float:
    """Full contraction a : b summed over all index tuples"""
    _check_compatible(a, b)
    return float(np.sum(a.weights * a.components * b.components))


def linear_form_coefficients(vectors: Sequence[np.ndarray], dim: int) -> np.ndarray:
    """
    Coefficients c_gamma of prod_p (u_p . x) = sum_gamma c_gamma x^gamma

    The same numbers express a mixed directional derivative through partial
    derivatives: d_{u_1}...d_{u_j} v = sum_gamma c_gamma d^gamma v.
    """
    order = len(vectors)
    current: Dict[MultiIndex, float] = {MultiIndex((0,) * dim): 1.0}
    for u in vectors:
        u = np.asarray(u, dtype=float)
        if u.shape != (dim,):
            raise TensorError(f"Vector of shape {u.shape} does not live in R^{dim}")
        nxt: Dict[MultiIndex, float] = {}
        for alpha, c in current.items():
            for i in range(dim):
                if u[i] != 0.0:
                    beta = alpha.plus(MultiIndex.unit(dim, i))
                    nxt[beta] = nxt.get(beta, 0.0) + c * u[i]
        current = nxt
    return np.array([current.get(alpha, 0.0) for alpha in multi_indices(dim, order)])


def sym_outer(vectors: Sequence[np.ndarray], dim: int) -> SymTensor:
    """sym(u_1 (x) ... (x) u_j)"""
    order = len(vectors)
    coeffs = linear_form_coefficients(vectors, dim)
    return SymTensor(dim, order, coeffs / multiplicity_weights(dim, order))


# =============================================================================
# FRAMES
# =============================================================================

@dataclass(frozen=True, eq=False)
class Frame:
    """Orthonormal normals nu_{F,1..r} and tangents t_{F,1..n-r} of a face"""
    normals: np.ndarray
    tangents: np.ndarray

    def __post_init__(self):
        normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        tangents = np.atleast_2d(np.asarray(self.tangents, dtype=float))
        dim = max(normals.shape[1], tangents.shape[1])
        normals = normals.reshape(-1, dim) if normals.size else np.zeros((0, dim))
        tangents = tangents.reshape(-1, dim) if tangents.size else np.zeros((0, dim))
        basis = np.vstack([normals, tangents])
        if basis.shape[0] != dim:
            raise TensorError(
                f"Frame needs {dim} vectors in R^{dim}, got {basis.shape[0]}"
            )
        if not np.allclose(basis @ basis.T, np.eye(dim), atol=FRAME_TOL):
            raise TensorError("Frame vectors are not orthonormal")
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "tangents", tangents)

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @property
    def rank(self) -> int:
        """Number of normals, the co-dimension r of the face"""
        return self.normals.shape[0]

    def directions(self, alpha: Sequence[int], beta: Sequence[int]) -> List[np.ndarray]:
        """nu^alpha followed by t^beta, as a list of repeated vectors"""
        alpha, beta = tuple(alpha), tuple(beta)
        if len(alpha) != self.rank or len(beta) != self.dim - self.rank:
            raise TensorError(
                f"Multi-indices {alpha}, {beta} do not match a frame of rank "
                f"{self.rank} in R^{self.dim}"
            )
        out: List[np.ndarray] = []
        for i, a in enumerate(alpha):
            out.extend([self.normals[i]] * a)
        for i, b in enumerate(beta):
            out.extend([self.tangents[i]] * b)
        return out


def normal_tangent_product(frame: Frame, alpha: Sequence[int], beta: Sequence[int]) -> SymTensor:
    """sym(nu_F^alpha (x) t_F^beta)"""
    return sym_outer(frame.directions(alpha, beta), frame.dim)


def frame_decomposition(frame: Frame, order: int) -> List[Tuple[MultiIndex, MultiIndex, float, SymTensor]]:
    """
    Terms of the face decomposition of the order-j gradient

        grad^j v = sum_{|alpha|+|beta|=j} j!/(alpha! beta!) sym(nu^alpha (x) t^beta)
                   d^j v / dt^beta dnu^alpha

    Returns:
        List of (alpha, beta, j!/(alpha! beta!), sym(nu^alpha (x) t^beta))
    """
    r, d = frame.rank, frame.dim - frame.rank
    terms = []
    for a_order in range(order + 1):
        for alpha in multi_indices(r, a_order):
            for beta in multi_indices(d, order - a_order):
                coeff = math.factorial(order) / (alpha.factorial * beta.factorial)
                terms.append((alpha, beta, coeff, normal_tangent_product(frame, alpha, beta)))
    return terms


def _check_same_span(old: np.ndarray, new: np.ndarray) -> np.ndarray:
    old = np.atleast_2d(np.asarray(old, dtype=float))
    new = np.atleast_2d(np.asarray(new, dtype=float))
    if old.shape != new.shape:
        raise TensorError(f"Normal sets of shapes {old.shape} and {new.shape} differ")
    s = old.shape[0]
    for name, vecs in (("old", old), ("new", new)):
        if not np.allclose(vecs @ vecs.T, np.eye(s), atol=FRAME_TOL):
            raise TensorError(f"The {name} normals are not orthonormal")
    rotation = new @ old.T
    if not np.allclose(rotation @ old, new, atol=FRAME_TOL):
        raise TensorError("Normal sets do not span the same subspace")
    return rotation


def rotation_matrix(old: np.ndarray, new: np.ndarray, order: int) -> np.ndarray:
    """
    Matrix R with d^beta v / d(new nu)^beta = sum_gamma R[beta, gamma] d^gamma v / d(old nu)^gamma

    Rows and columns run over multi_indices(s, order), s the number of normals.
    """
    rotation = _check_same_span(old, new)
    s = rotation.shape[0]
    rows = []
    for beta in multi_indices(s, order):
        vectors = []
        for i, b in enumerate(beta):
            vectors.extend([rotation[i]] * b)
        rows.append(linear_form_coefficients(vectors, s))
    return np.array(rows).reshape(len(rows), symmetric_dimension(s, order))


def rotate_normal_bundle(values: Mapping[Sequence[int], object],
                         old: np.ndarray,
                         new: np.ndarray) -> Dict[MultiIndex, object]:
    """
    Re-express normal-derivative components in a rotated normal basis

    Args:
        values: map from multi-index beta (over the s normals) to the value of
            d^|beta| v / d(old nu)^beta; every order present must be complete.
            Values may be scalars or numpy arrays.
        old: s x n array of orthonormal normals the values refer to
        new: s x n array of orthonormal normals spanning the same subspace

    Returns:
        Map from beta to d^|beta| v / d(new nu)^beta
    """
    values = {MultiIndex(k): v for k, v in values.items()}
    s = np.atleast_2d(old).shape[0]
    out: Dict[MultiIndex, object] = {}
    for order in sorted({beta.order for beta in values}):
        indices = multi_indices(s, order)
        missing = [gamma for gamma in indices if gamma not in values]
        if missing:
            raise TensorError(f"Normal bundle of order {order} lacks components {missing}")
        matrix = rotation_matrix(old, new, order)
        for row, beta in zip(matrix, indices):
            total = 0.0
            for coeff, gamma in zip(row, indices):
                if coeff != 0.0:
                    total = total + coeff * values[gamma]
            out[beta] = total
    return out

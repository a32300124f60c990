#!/usr/bin/env python3
"""
Local H^m-conforming virtual elements on polytopes

A LocalElement turns the degrees of freedom of one mesh entity into
polynomials: the energy projector Pi, the L2 projector Q, the projections
of the gradients, boundary traces, the diagonal stabilization and the local
bilinear form. All of them are matrices acting on the local dof vector.

Dof functionals are unscaled (raw derivatives at vertices, normalized
moments against face-orthonormal test polynomials), so two elements sharing
a face read identical values. Element-dependent h_K factors only enter the
stabilization and the diagnostics.

In three dimensions the traces on a face F are reconstructed from the
two-dimensional elements (F, m - a, k - a), one per normal derivative order
a, memoized in the ElementBuilder and shared by both incident elements.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from config import CONFIG
from meshgeom import PolytopalMesh
from models import ElementConfig
from polyspace import (
    MonomialBasis,
    OrthonormalBasis,
    PolyCoeffs,
    Quadrature,
    gram_matrix,
    l2_project,
    orthonormalize,
)
from tensoralg import (
    Frame,
    MultiIndex,
    frame_decomposition,
    graded_multi_indices,
    linear_form_coefficients,
    multi_indices,
    multiplicity,
    polynomial_dimension,
    rotation_matrix,
    symmetric_dimension,
)

logger = logging.getLogger(__name__)

# Local systems beyond this condition number are reported as singular
SYSTEM_CONDITION_LIMIT = 1e14


class UnsupportedElementError(ValueError):
    """Raised for (n, m, k) combinations the engine does not ship"""


class ElementGeometryError(RuntimeError):
    """Raised when a local system is singular"""


def check_supported(config: ElementConfig):
    n, m, k = config.n, config.m, config.k
    if n == 1:
        ok = m <= 4
    elif n == 2:
        ok = m <= 3 and k <= m + 3
    elif n == 3:
        ok = m <= 2 and k <= 3
    else:
        ok = False
    if not ok:
        raise UnsupportedElementError(
            f"Unsupported element {config.label}; supported: n=1 with m<=4, "
            f"n=2 with m<=3 and k<=m+3, n=3 with m<=2 and k<=3"
        )


# =============================================================================
# DOF LAYOUT
# =============================================================================

@dataclass(frozen=True)
class VertexDeriv:
    """d^alpha v at a vertex, alpha of order j <= m-1 in element coordinates"""
    vertex: int
    alpha: MultiIndex

    def describe(self) -> str:
        return f"vertex {self.vertex} d^{tuple(self.alpha)}"


@dataclass(frozen=True)
class FaceMoment:
    """(1/|F|)(d^|alpha| v / dnu_F^alpha, q_i)_F on a face of relative co-dimension `codim`"""
    entity: Tuple[int, int]
    codim: int
    alpha: MultiIndex
    index: int

    def describe(self) -> str:
        return f"face {self.entity} dnu^{tuple(self.alpha)} moment {self.index}"


@dataclass(frozen=True)
class InteriorMoment:
    """(1/|K|)(v, q_i)_K"""
    entity: Tuple[int, int]
    index: int

    def describe(self) -> str:
        return f"interior {self.entity} moment {self.index}"


Descriptor = Union[VertexDeriv, FaceMoment, InteriorMoment]


@dataclass
class DofLayout:
    """Ordered dof descriptors of one element"""
    dim: int
    m: int
    k: int
    descriptors: Tuple[Descriptor, ...]
    entity_ranges: Dict[Tuple[int, int], Tuple[int, int]]
    positions: Dict[Descriptor, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.positions = {d: i for i, d in enumerate(self.descriptors)}

    @property
    def size(self) -> int:
        return len(self.descriptors)

    def index(self, descriptor: Descriptor) -> int:
        return self.positions[descriptor]

    def count(self, kind) -> int:
        return sum(1 for d in self.descriptors if isinstance(d, kind))


def entity_dof_count(n: int, m: int, k: int, codim: int) -> int:
    """Number of dofs attached to one entity of relative co-dimension `codim`"""
    if codim == n:
        return sum(symmetric_dimension(n, j) for j in range(m))
    if codim == 0:
        return polynomial_dimension(n, k - 2 * m)
    return sum(
        polynomial_dimension(n - codim, k - 2 * m + alpha.order)
        for alpha in graded_multi_indices(codim, m - 1)
    )


@dataclass
class DofVector:
    """Values of the dof functionals, aligned with a layout"""
    layout: DofLayout
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size != self.layout.size:
            raise ValueError(f"Layout has {self.layout.size} dofs, got {self.values.size} values")


def _values(dofs) -> np.ndarray:
    return np.asarray(getattr(dofs, "values", dofs), dtype=float).reshape(-1)


# =============================================================================
# LOCAL GEOMETRY
# =============================================================================

@dataclass(eq=False)
class LocalFace:
    """A sub-entity of an element expressed in the element's local coordinates"""
    key: Tuple[int, int]
    codim: int
    measure: float
    diameter: float
    center: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    vertices: Tuple[int, ...]
    outward: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.tangents.shape[0]

    def coordinates(self, points: np.ndarray) -> np.ndarray:
        """Face-local coordinates, matching the mesh entity's own frame"""
        return (np.atleast_2d(points) - self.center) @ self.tangents.T


class LocalGeometry:
    """Face lattice of one mesh entity seen from its own local coordinates"""

    def __init__(self, mesh: PolytopalMesh, codim: int, index: int):
        self.mesh = mesh
        self.key = (codim, index)
        self.entity = mesh.entity(codim, index)
        self.dim = self.entity.dim
        self.measure = self.entity.measure
        self.diameter = self.entity.diameter
        self.vertices = mesh.closure(codim, index, mesh.dim)
        self.vertex_points = {
            v: self.to_local(mesh.vertices[v])[0] for v in self.vertices
        }
        in_plane = self._in_plane_normals() if self.dim == 2 else {}
        self.faces: Dict[int, List[LocalFace]] = {}
        for r in range(1, self.dim + 1):
            faces = []
            for F in mesh.closure(codim, index, codim + r):
                sub = mesh.entity(codim + r, F)
                if sub.dim == 0:
                    normals = np.eye(self.dim)
                elif codim == 0:
                    normals = sub.frame.normals
                else:
                    normals = in_plane[F][None, :]
                outward = None
                if r == 1:
                    outward = in_plane[F] if self.dim == 2 else mesh.outward_normal(index, F)
                faces.append(LocalFace(
                    key=(codim + r, F),
                    codim=r,
                    measure=sub.measure,
                    diameter=sub.diameter,
                    center=self.to_local(sub.barycenter)[0],
                    normals=np.atleast_2d(normals),
                    tangents=sub.axes @ self.entity.axes.T,
                    vertices=sub.vertices,
                    outward=outward,
                ))
            self.faces[r] = faces
        self._tests: Dict[Tuple[Tuple[int, int], int], OrthonormalBasis] = {}

    def _in_plane_normals(self) -> Dict[int, np.ndarray]:
        """Outward in-plane unit normals of the edges of a two-dimensional entity"""
        codim, index = self.key
        loop = list(self.entity.loop)
        local = self.to_local(self.mesh.vertices[loop])
        x, y = local[:, 0], local[:, 1]
        if np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) < 0.0:
            loop = loop[::-1]
            local = local[::-1]
        edge_of = {
            frozenset(self.mesh.entity(codim + 1, e).vertices): e
            for e in self.mesh.closure(codim, index, codim + 1)
        }
        out = {}
        for i, (a, b) in enumerate(zip(loop, loop[1:] + loop[:1])):
            d = local[(i + 1) % len(loop)] - local[i]
            out[edge_of[frozenset((a, b))]] = np.array([d[1], -d[0]]) / np.linalg.norm(d)
        return out

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return self.entity.local_coordinates(points)

    def to_ambient(self, local: np.ndarray) -> np.ndarray:
        return self.entity.ambient_coordinates(local)

    def basis(self, degree: int) -> MonomialBasis:
        return self.entity.basis(degree)

    def moments(self, degree: int):
        return self.mesh.monomial_moments(*self.key, degree)

    def volume_quadrature(self, degree: int) -> Quadrature:
        return self.mesh.local_quadrature(*self.key, degree)

    def ambient_volume_quadrature(self, degree: int) -> Quadrature:
        return self.mesh.quadrature(*self.key, degree)

    def face_quadrature(self, face: LocalFace, degree: int) -> Quadrature:
        return self.mesh.quadrature(*face.key, degree).transformed(
            self.entity.barycenter, self.entity.axes)

    def face_by_key(self, key: Tuple[int, int]) -> LocalFace:
        for faces in self.faces.values():
            for face in faces:
                if face.key == key:
                    return face
        raise KeyError(f"{key} is not a face of {self.key}")

    def test_basis(self, face_key: Tuple[int, int], degree: int) -> Optional[OrthonormalBasis]:
        """Orthonormal test polynomials of the given degree on a face or on the entity"""
        if degree < 0:
            return None
        cache_key = (face_key, degree)
        cached = self._tests.get(cache_key)
        if cached is None:
            entity = self.mesh.entity(*face_key)
            cached = orthonormalize(entity.basis(degree),
                                    self.mesh.monomial_moments(*face_key, 2 * degree))
            self._tests[cache_key] = cached
        return cached


def build_layout(geometry: LocalGeometry, m: int, k: int) -> DofLayout:
    """Deterministic dof ordering: vertices, faces by decreasing co-dimension, interior"""
    d = geometry.dim
    descriptors: List[Descriptor] = []
    ranges: Dict[Tuple[int, int], Tuple[int, int]] = {}
    n_mesh = geometry.mesh.dim
    for v in sorted(geometry.vertices):
        start = len(descriptors)
        for j in range(m):
            descriptors.extend(VertexDeriv(v, alpha) for alpha in multi_indices(d, j))
        ranges[(n_mesh, v)] = (start, len(descriptors))
    for r in range(d - 1, 0, -1):
        for face in sorted(geometry.faces[r], key=lambda f: f.key[1]):
            start = len(descriptors)
            for alpha in graded_multi_indices(r, m - 1):
                count = polynomial_dimension(d - r, k - 2 * m + alpha.order)
                descriptors.extend(FaceMoment(face.key, r, alpha, i) for i in range(count))
            ranges[face.key] = (start, len(descriptors))
    start = len(descriptors)
    descriptors.extend(
        InteriorMoment(geometry.key, i) for i in range(polynomial_dimension(d, k - 2 * m))
    )
    ranges[geometry.key] = (start, len(descriptors))
    return DofLayout(d, m, k, tuple(descriptors), ranges)


def _solve_checked(matrix: np.ndarray, rhs: np.ndarray, what: str) -> Tuple[np.ndarray, float]:
    if matrix.shape[0] != matrix.shape[1]:
        raise ElementGeometryError(f"{what}: system of shape {matrix.shape} is not square")
    cond = float(np.linalg.cond(matrix))
    if not np.isfinite(cond) or cond > SYSTEM_CONDITION_LIMIT:
        raise ElementGeometryError(f"{what}: singular local system (condition {cond:.3e})")
    try:
        return linalg.solve(matrix, rhs), cond
    except linalg.LinAlgError as e:
        raise ElementGeometryError(f"{what}: {e}") from e


# =============================================================================
# LOCAL ELEMENT
# =============================================================================

class LocalElement:
    """Projectors and local matrices of one element"""

    def __init__(self, geometry: LocalGeometry, m: int, k: int,
                 builder: Optional["ElementBuilder"] = None):
        self.geometry = geometry
        self.m, self.k = m, k
        self.dim = geometry.dim
        self.h = geometry.diameter
        self.builder = builder
        self.layout = build_layout(geometry, m, k)
        self.basis = geometry.basis(k)
        self.low_degree = k - 2 * m
        self.face_dof_maps: Dict[Tuple[Tuple[int, int], int], Tuple["LocalElement", np.ndarray]] = {}
        self._edge_traces: Dict[Tuple[Tuple[int, int], int], Tuple[MonomialBasis, np.ndarray]] = {}

        self.M = gram_matrix(self.basis, self.basis, geometry.moments(2 * k))
        self._setup_interior()
        self.traces = self._boundary_traces()
        self.PiStar, self.condition = self._energy_projector()
        self.D = self.dof_matrix(self.basis)
        self.Q = self._l2_projector()
        self.grad_projections = self._gradient_projections()
        self.S = self._stabilization()
        self.B = self.D @ self.PiStar
        self.A = self._local_form()
        if self.condition > 1e10:
            logger.warning(f"Projector system of {geometry.key} is ill-conditioned ({self.condition:.3e})")

    @property
    def size(self) -> int:
        return self.layout.size

    # -------------------------------------------------------------------------
    # Interior moments
    # -------------------------------------------------------------------------

    def _setup_interior(self):
        P = self.basis.size
        N = self.layout.size
        self.interior_test = self.geometry.test_basis(self.geometry.key, self.low_degree)
        self.Cint = np.zeros((P, N))
        self.ProjLow = np.zeros((P, P))
        if self.interior_test is None:
            return
        U = self.interior_test.change
        p_low = U.shape[0]
        start, stop = self.layout.entity_ranges[self.geometry.key]
        self.Cint[:p_low, start:stop] = U
        self.ProjLow[:p_low, :] = U @ U.T @ self.M[:p_low, :] / self.geometry.measure

    # -------------------------------------------------------------------------
    # Dof functionals
    # -------------------------------------------------------------------------

    def dof_matrix(self, basis: MonomialBasis) -> np.ndarray:
        """Matrix (N x size) applying every dof functional to every basis polynomial"""
        geometry = self.geometry
        out = np.zeros((self.layout.size, basis.size))
        face_cache: Dict[Tuple[Tuple[int, int], MultiIndex], np.ndarray] = {}
        interior = None
        if self.interior_test is not None:
            moments = geometry.moments(self.low_degree + basis.degree)
            cross = gram_matrix(basis.with_degree(self.low_degree), basis, moments)
            interior = self.interior_test.change.T @ cross / geometry.measure
        for row, desc in enumerate(self.layout.descriptors):
            if isinstance(desc, VertexDeriv):
                point = geometry.vertex_points[desc.vertex]
                out[row] = basis.evaluate(point)[0] @ basis.derivative(desc.alpha)
            elif isinstance(desc, FaceMoment):
                cache_key = (desc.entity, desc.alpha)
                if cache_key not in face_cache:
                    face_cache[cache_key] = self._face_moment_rows(basis, desc)
                out[row] = face_cache[cache_key][desc.index]
            else:
                out[row] = interior[desc.index]
        return out

    def _face_moment_rows(self, basis: MonomialBasis, desc: FaceMoment) -> np.ndarray:
        face = self.geometry.face_by_key(desc.entity)
        directions = []
        for i, a in enumerate(desc.alpha):
            directions.extend([face.normals[i]] * a)
        op = self._directional_operator(basis, directions)
        test = self.geometry.test_basis(face.key, self.k - 2 * self.m + desc.alpha.order)
        rule = self.geometry.face_quadrature(face, basis.degree + test.basis.degree)
        values = basis.evaluate(rule.points) @ op
        tests = test.evaluate(face.coordinates(rule.points))
        return (tests.T * rule.weights) @ values / face.measure

    def _directional_operator(self, basis: MonomialBasis, directions: Sequence[np.ndarray]) -> np.ndarray:
        """Coefficient matrix of d_{u_1} ... d_{u_j} on a basis"""
        order = len(directions)
        coeffs = linear_form_coefficients(directions, self.dim)
        op = np.zeros((basis.size, basis.size))
        for c, gamma in zip(coeffs, multi_indices(self.dim, order)):
            if c != 0.0:
                op += c * basis.derivative(gamma)
        return op

    def _vertex_row(self, vertex: int, directions: Sequence[np.ndarray]) -> np.ndarray:
        """Dof combination giving a mixed directional derivative at a vertex"""
        row = np.zeros(self.layout.size)
        coeffs = linear_form_coefficients(directions, self.dim)
        for c, gamma in zip(coeffs, multi_indices(self.dim, len(directions))):
            if c != 0.0:
                row[self.layout.index(VertexDeriv(vertex, gamma))] += c
        return row

    def dof_map(self, p: PolyCoeffs) -> DofVector:
        """Exact dof values of a polynomial given in this element's coordinates"""
        if not p.basis.same_frame(self.basis):
            raise ValueError("Polynomial is not expressed in the element's scaled monomials")
        return DofVector(self.layout, self.dof_matrix(p.basis) @ p.coeffs)

    # -------------------------------------------------------------------------
    # Boundary traces
    # -------------------------------------------------------------------------

    def _trace_degree(self) -> int:
        if self.dim == 1:
            return 0
        if self.dim == 2:
            return max(self.k, 2 * self.m - 1)
        return self.k

    def _boundary_traces(self) -> Dict[Tuple[int, int], List[Dict[MultiIndex, np.ndarray]]]:
        """
        For each codim-1 face and i < m: map alpha -> matrix (face basis x N)
        giving the face polynomial of d^alpha v
        """
        traces = {}
        for face in self.geometry.faces[1]:
            if self.dim == 1:
                traces[face.key] = [
                    {MultiIndex((i,)): self._point_trace(face, i)} for i in range(self.m)
                ]
            elif self.dim == 2:
                traces[face.key] = self._edge_component_traces(face)
            else:
                traces[face.key] = self._face_component_traces(face)
        return traces

    def _point_trace(self, face: LocalFace, order: int) -> np.ndarray:
        vertex = face.vertices[0]
        row = np.zeros((1, self.layout.size))
        row[0, self.layout.index(VertexDeriv(vertex, MultiIndex((order,))))] = 1.0
        return row

    def _hermite_trace(self, face_key: Tuple[int, int], order: int) -> Tuple[MonomialBasis, np.ndarray]:
        """
        Solve the Hermite-with-moments system for w_j = d^j v / dnu^j on an edge

        For a one-dimensional element the edge is the element itself and
        only j = 0 applies.
        """
        cache_key = (face_key, order)
        if cache_key in self._edge_traces:
            return self._edge_traces[cache_key]
        m, k = self.m, self.k
        degree = max(k - order, 2 * (m - order) - 1)
        if self.dim == 1:
            center = np.zeros(1)
            tangent, normal = np.ones(1), None
            endpoints = sorted(self.geometry.vertices)
            scale = self.geometry.diameter
            rule = self.geometry.volume_quadrature(2 * degree)
            coords = rule.points[:, 0]
            measure = self.geometry.measure
            moment_dofs = [self.layout.index(InteriorMoment(self.geometry.key, i))
                           for i in range(polynomial_dimension(1, k - 2 * m))]
        else:
            face = self.geometry.face_by_key(face_key)
            center = face.center
            tangent, normal = face.tangents[0], face.normals[0]
            endpoints = list(face.vertices)
            scale = face.diameter
            rule = self.geometry.face_quadrature(face, 2 * degree)
            coords = face.coordinates(rule.points)[:, 0]
            measure = face.measure
            moment_dofs = [
                self.layout.index(FaceMoment(face_key, 1, MultiIndex((order,)), i))
                for i in range(polynomial_dimension(1, k - 2 * m + order))
            ]

        basis = MonomialBasis(1, degree, np.zeros(1), scale)
        rows_h, rows_r = [], []
        for vertex in endpoints:
            xi = np.array([tangent @ (self.geometry.vertex_points[vertex] - center)])
            for i in range(m - order):
                directions = ([normal] * order if normal is not None else []) + [tangent] * i
                rows_h.append(scale ** i * (basis.evaluate(xi)[0] @ basis.derivative((i,))))
                rows_r.append(scale ** i * self._vertex_row(vertex, directions))
        test = self.geometry.test_basis(face_key, k - 2 * m + order)
        if test is not None:
            tests = test.evaluate(coords[:, None])
            values = basis.evaluate(coords[:, None])
            moment_rows = (tests.T * rule.weights) @ values / measure
            for i, dof in enumerate(moment_dofs):
                rows_h.append(moment_rows[i])
                unit = np.zeros(self.layout.size)
                unit[dof] = 1.0
                rows_r.append(unit)
        W, _ = _solve_checked(np.array(rows_h), np.array(rows_r),
                              f"edge trace {face_key} order {order}")
        self._edge_traces[cache_key] = (basis, W)
        return basis, W

    def _edge_component_traces(self, face: LocalFace) -> List[Dict[MultiIndex, np.ndarray]]:
        top = self._trace_degree()
        frame = Frame(face.normals, face.tangents)
        out = []
        for i in range(self.m):
            components = {alpha: np.zeros((top + 1, self.layout.size))
                          for alpha in multi_indices(2, i)}
            for a_index, b_index, coeff, tensor in frame_decomposition(frame, i):
                a, l = a_index[0], b_index[0]
                basis, W = self._hermite_trace(face.key, a)
                block = basis.derivative((l,)) @ W
                for alpha, comp in zip(tensor.indices, tensor.components):
                    if comp != 0.0:
                        components[alpha][:basis.size] += coeff * comp * block
            out.append(components)
        return out

    def _face_component_traces(self, face: LocalFace) -> List[Dict[MultiIndex, np.ndarray]]:
        if self.builder is None:
            raise ElementGeometryError("Three-dimensional elements need an ElementBuilder for face traces")
        top = self._trace_degree()
        size = polynomial_dimension(2, top)
        frame = Frame(face.normals, face.tangents)
        out = []
        for i in range(self.m):
            components = {alpha: np.zeros((size, self.layout.size))
                          for alpha in multi_indices(3, i)}
            for a_index, beta, coeff, tensor in frame_decomposition(frame, i):
                a = a_index[0]
                sub, S_a = self._face_subelement(face, a)
                if beta.order == 0:
                    proj = sub.Q
                else:
                    proj = sub.grad_projections[beta.order][beta][1]
                block = proj @ S_a
                for alpha, comp in zip(tensor.indices, tensor.components):
                    if comp != 0.0:
                        components[alpha][:block.shape[0]] += coeff * comp * block
            out.append(components)
        return out

    # -------------------------------------------------------------------------
    # Face sub-elements (three dimensions)
    # -------------------------------------------------------------------------

    def _face_subelement(self, face: LocalFace, order: int) -> Tuple["LocalElement", np.ndarray]:
        """Face element of g = d^a v / dnu_F^a and the matrix taking our dofs to its dofs"""
        cache_key = (face.key, order)
        if cache_key in self.face_dof_maps:
            return self.face_dof_maps[cache_key]
        sub = self.builder.face_element(face.key[1], self.m - order, self.k - order)
        nu = face.normals[0]
        tangents = face.tangents
        sub_axes = sub.geometry.entity.axes
        S_a = np.zeros((sub.layout.size, self.layout.size))
        for row, desc in enumerate(sub.layout.descriptors):
            if isinstance(desc, VertexDeriv):
                directions = [nu] * order
                for i, b in enumerate(desc.alpha):
                    directions.extend([tangents[i]] * b)
                S_a[row] = self._vertex_row(desc.vertex, directions)
            elif isinstance(desc, FaceMoment):
                edge = self.geometry.face_by_key(desc.entity)
                in_face = sub.geometry.face_by_key(desc.entity).normals[0] @ sub_axes
                new = np.array([nu, in_face])
                total = order + desc.alpha[0]
                rotation = rotation_matrix(edge.normals, new, total)
                gammas = multi_indices(2, total)
                target = gammas.index(MultiIndex((order, desc.alpha[0])))
                for c, gamma in zip(rotation[target], gammas):
                    if c != 0.0:
                        S_a[row, self.layout.index(FaceMoment(edge.key, 2, gamma, desc.index))] += c
            else:
                S_a[row, self.layout.index(FaceMoment(face.key, 1, MultiIndex((order,)), desc.index))] = 1.0
        self.face_dof_maps[cache_key] = (sub, S_a)
        return sub, S_a

    def face_subelement_dofs(self, dofs, face: int, alpha: Sequence[int]) -> DofVector:
        """Dofs of d^|alpha| v / dnu_F^alpha in the layout of the face element (F, m-|alpha|, k-|alpha|)"""
        if self.dim != 3:
            raise ValueError("Face sub-elements exist only for three-dimensional elements")
        order = MultiIndex(alpha).order
        if order > self.m - 1:
            raise ValueError(f"Normal derivative order {order} exceeds m-1 = {self.m - 1}")
        local_face = self.geometry.face_by_key((self.geometry.key[0] + 1, face))
        sub, S_a = self._face_subelement(local_face, order)
        return DofVector(sub.layout, S_a @ _values(dofs))

    # -------------------------------------------------------------------------
    # Projectors
    # -------------------------------------------------------------------------

    def _energy_projector(self) -> Tuple[np.ndarray, float]:
        """
        Pi solves (grad^m Pi v, grad^m q) = (v, (-Delta)^m q) + boundary terms
        for q in P_k, plus the vertex-sum constraints for orders below m
        """
        m, basis, d = self.m, self.basis, self.dim
        P, N = basis.size, self.layout.size

        G = np.zeros((P, P))
        for gamma in multi_indices(d, m):
            Dg = basis.derivative(gamma)
            G += multiplicity(gamma) * Dg.T @ self.M @ Dg

        rhs = basis.laplacian_power(m).T @ self.M @ self.Cint
        qdeg = self._trace_degree() + self.k
        for face in self.geometry.faces[1]:
            rule = self.geometry.face_quadrature(face, qdeg)
            V = basis.evaluate(rule.points)
            face_basis = self.geometry.mesh.entity(*face.key).basis(self._trace_degree())
            Vf = face_basis.evaluate(face.coordinates(rule.points))
            d_nu = self._directional_operator(basis, [face.outward])
            for i in range(m):
                op = basis.laplacian_power(m - i - 1) @ d_nu
                for alpha, T in self.traces[face.key][i].items():
                    Vg = V @ basis.derivative(alpha) @ op
                    Vv = Vf[:, :T.shape[0]] @ T
                    rhs += multiplicity(alpha) * (Vg.T * rule.weights) @ Vv

        constraint_indices = graded_multi_indices(d, m - 1)
        C = np.zeros((len(constraint_indices), P))
        Cv = np.zeros((len(constraint_indices), N))
        for row, gamma in enumerate(constraint_indices):
            Dg = basis.derivative(gamma)
            for v in self.geometry.vertices:
                C[row] += basis.evaluate(self.geometry.vertex_points[v])[0] @ Dg
                Cv[row, self.layout.index(VertexDeriv(v, gamma))] += 1.0

        system = np.block([[G, C.T], [C, np.zeros((C.shape[0], C.shape[0]))]])
        solution, cond = _solve_checked(system, np.vstack([rhs, Cv]),
                                        f"energy projector of {self.geometry.key}")
        return solution[:P], cond

    def _l2_projector(self) -> np.ndarray:
        """Q v = Pi v + Q_{k-2m} v - Q_{k-2m} Pi v"""
        return self.PiStar + self.Cint - self.ProjLow @ self.PiStar

    def _gradient_projection_degree(self, order: int) -> int:
        return self.k if self.dim <= 2 else self.k - order + 1

    def _gradient_projections(self) -> Dict[int, Dict[MultiIndex, Tuple[MonomialBasis, np.ndarray]]]:
        """
        Q(d^alpha v) by integration by parts against the previous order:
        (d^{alpha'+e_l} v, m_b) = -(d^{alpha'} v, d_l m_b) + (d^{alpha'} v, m_b nu_l)_{boundary}
        """
        d = self.dim
        previous = {MultiIndex((0,) * d): (self.basis, self.Q)}
        out = {}
        for order in range(1, self.m + 1):
            degree = self._gradient_projection_degree(order)
            target = self.basis.with_degree(degree)
            moments = self.geometry.moments(2 * self.k)
            gram = gram_matrix(target, target, moments)
            lower = linalg.cho_factor(gram)
            current = {}
            for alpha in multi_indices(d, order):
                l = next(i for i, a in enumerate(alpha) if a > 0)
                reduced = alpha.minus(MultiIndex.unit(d, l))
                prev_basis, prev = previous[reduced]
                cross = gram_matrix(target, prev_basis, moments)
                rhs = -target.derivative(MultiIndex.unit(d, l)).T @ cross @ prev
                for face in self.geometry.faces[1]:
                    T = self.traces[face.key][order - 1][reduced]
                    rule = self.geometry.face_quadrature(face, self._trace_degree() + degree)
                    face_basis = self.geometry.mesh.entity(*face.key).basis(self._trace_degree())
                    Vf = face_basis.evaluate(face.coordinates(rule.points))[:, :T.shape[0]]
                    V = target.evaluate(rule.points)
                    rhs += face.outward[l] * (V.T * rule.weights) @ (Vf @ T)
                current[alpha] = (target, linalg.cho_solve(lower, rhs))
            out[order] = current
            previous = current
        return out

    # -------------------------------------------------------------------------
    # Stabilization and local form
    # -------------------------------------------------------------------------

    def _stabilization(self) -> np.ndarray:
        """Diagonal S: vertex terms h^{n+2j-2m} weighted by multiplicity, face moments h^{r+2|alpha|-2m}|F|"""
        h, m, d = self.h, self.m, self.dim
        diag = np.zeros(self.layout.size)
        for i, desc in enumerate(self.layout.descriptors):
            if isinstance(desc, VertexDeriv):
                j = desc.alpha.order
                diag[i] = multiplicity(desc.alpha) * h ** (d + 2 * j - 2 * m)
            elif isinstance(desc, FaceMoment):
                measure = self.geometry.mesh.entity(*desc.entity).measure
                diag[i] = h ** (desc.codim + 2 * desc.alpha.order - 2 * m) * measure
        return np.diag(diag)

    def _local_form(self) -> np.ndarray:
        m, d = self.m, self.dim
        G = np.zeros_like(self.M)
        for gamma in multi_indices(d, m):
            Dg = self.basis.derivative(gamma)
            G += multiplicity(gamma) * Dg.T @ self.M @ Dg
        eye = np.eye(self.layout.size)
        R_pi = eye - self.D @ self.PiStar
        R_q = eye - self.D @ self.Q
        A = (
            self.PiStar.T @ G @ self.PiStar
            + R_pi.T @ self.S @ R_pi
            + self.Q.T @ self.M @ self.Q
            + self.h ** (2 * m) * R_q.T @ self.S @ R_q
        )
        return 0.5 * (A + A.T)

    # -------------------------------------------------------------------------
    # Public operations
    # -------------------------------------------------------------------------

    def pi_projector(self, dofs) -> PolyCoeffs:
        return PolyCoeffs(self.basis, self.PiStar @ _values(dofs))

    def l2_projector(self, dofs) -> PolyCoeffs:
        return PolyCoeffs(self.basis, self.Q @ _values(dofs))

    def grad_moment_projection(self, dofs, order: int) -> Dict[MultiIndex, PolyCoeffs]:
        """Components of the projected order-j gradient, j = 1..m"""
        if not 1 <= order <= self.m:
            raise ValueError(f"Gradient order must lie in 1..{self.m}, got {order}")
        values = _values(dofs)
        return {
            alpha: PolyCoeffs(basis, matrix @ values)
            for alpha, (basis, matrix) in self.grad_projections[order].items()
        }

    def edge_trace_1d(self, dofs, edge: Optional[int] = None, order: int = 0) -> PolyCoeffs:
        """
        w_j = d^j v / dnu_e^j on an edge in edge coordinates; for a
        one-dimensional element the whole function (j-th derivative)
        """
        if not 0 <= order <= self.m - 1:
            raise ValueError(f"Trace order must lie in 0..{self.m - 1}, got {order}")
        if self.dim == 1:
            basis, W = self._hermite_trace(self.geometry.key, 0)
            return PolyCoeffs(basis, W @ _values(dofs)).differentiate((order,))
        if self.dim != 2:
            raise ValueError("Edge traces are defined for two-dimensional elements")
        basis, W = self._hermite_trace((self.geometry.key[0] + 1, edge), order)
        return PolyCoeffs(basis, W @ _values(dofs))

    def boundary_grad_projection(self, dofs, face: int, order: int) -> Dict[MultiIndex, PolyCoeffs]:
        """Components of the face trace of grad^j v as polynomials in face coordinates"""
        if not 0 <= order <= self.m - 1:
            raise ValueError(f"Trace order must lie in 0..{self.m - 1}, got {order}")
        key = (self.geometry.key[0] + 1, face)
        face_basis = self.geometry.mesh.entity(*key).basis(self._trace_degree())
        values = _values(dofs)
        return {
            alpha: PolyCoeffs(face_basis, self._pad(T, face_basis.size) @ values)
            for alpha, T in self.traces[key][order].items()
        }

    @staticmethod
    def _pad(matrix: np.ndarray, rows: int) -> np.ndarray:
        if matrix.shape[0] == rows:
            return matrix
        out = np.zeros((rows, matrix.shape[1]))
        out[:matrix.shape[0]] = matrix
        return out

    @property
    def stabilization(self) -> np.ndarray:
        return self.S

    def project_function(self, f: Callable[[np.ndarray], np.ndarray], degree: int,
                         quad_degree: Optional[int] = None) -> PolyCoeffs:
        """L2 projection of an ambient function onto P_degree over the element"""
        quad_degree = quad_degree or 2 * max(degree, self.k) + CONFIG["VEM_QUAD_EXTRA"]
        rule = self.geometry.volume_quadrature(quad_degree)
        ambient = self.geometry.ambient_volume_quadrature(quad_degree).points
        return l2_project(
            lambda _: f(ambient), degree, self.basis,
            self.geometry.moments(2 * max(degree, 0)), rule,
        )

    def load_vector(self, f: Callable[[np.ndarray], np.ndarray], quad_degree: Optional[int] = None) -> np.ndarray:
        """(f, Q v)_K for every local basis dof"""
        quad_degree = quad_degree or 2 * self.k + CONFIG["VEM_QUAD_EXTRA"]
        rule = self.geometry.volume_quadrature(quad_degree)
        ambient = self.geometry.ambient_volume_quadrature(quad_degree).points
        moments = self.basis.evaluate(rule.points).T @ (rule.weights * f(ambient))
        return self.Q.T @ moments

    def to_dict(self) -> dict:
        """Debug dump of the local matrices with their layout"""
        return {
            "entity": list(self.geometry.key),
            "m": self.m,
            "k": self.k,
            "dim": self.dim,
            "h": self.h,
            "condition": self.condition,
            "monomials": [list(a) for a in self.basis.indices],
            "dofs": [d.describe() for d in self.layout.descriptors],
            "PiStar": self.PiStar.tolist(),
            "Q": self.Q.tolist(),
            "B": self.B.tolist(),
            "S": np.diag(self.S).tolist(),
            "A_loc": self.A.tolist(),
        }


# =============================================================================
# BUILDER
# =============================================================================

class ElementBuilder:
    """Builds elements of one mesh and memoizes the face elements they share"""

    def __init__(self, mesh: PolytopalMesh, config: ElementConfig):
        check_supported(config)
        if config.n != mesh.dim:
            raise UnsupportedElementError(f"Element dimension {config.n} does not match a {mesh.dim}D mesh")
        self.mesh = mesh
        self.config = config
        self._faces: Dict[Tuple[int, int, int], LocalElement] = {}
        self._lock = threading.Lock()

    def element(self, index: int) -> LocalElement:
        element = LocalElement(LocalGeometry(self.mesh, 0, index), self.config.m, self.config.k, self)
        logger.debug(f"Built element {index}: {element.size} dofs, condition {element.condition:.3e}")
        return element

    def face_element(self, face: int, m: int, k: int) -> LocalElement:
        key = (face, m, k)
        cached = self._faces.get(key)
        if cached is not None:
            return cached
        built = LocalElement(LocalGeometry(self.mesh, 1, face), m, k)
        with self._lock:
            return self._faces.setdefault(key, built)

    @property
    def num_face_elements(self) -> int:
        return len(self._faces)

#!/usr/bin/env python3
"""
Polytopal meshes with full face lattices

Every entity of codimension r = 0..n carries its measure, diameter,
barycenter and one global Frame shared by all incident elements. Entity
local coordinates are xi = axes @ (x - barycenter) with axes = frame
tangents, so element coordinates are a pure translation of ambient ones.
Moment tables and quadrature rules are built lazily per entity.
"""

import math
import logging
import threading
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from models import ElementDiagnostics, MeshReport
from polyspace import MomentTable, MonomialBasis, Quadrature, simplex_quadrature
from tensoralg import Frame

logger = logging.getLogger(__name__)

PLANARITY_TOL = 1e-8
DUPLICATE_TOL = 1e-12
KERNEL_TOL = 1e-10
CHUNKINESS_LIMIT = 50.0


class MeshError(ValueError):
    """Raised on malformed incidence or degenerate geometry"""


class StarShapeError(MeshError):
    """Raised when an entity has an empty kernel"""


# =============================================================================
# ENTITIES
# =============================================================================

@dataclass(eq=False)
class Entity:
    """One face of the lattice"""
    codim: int
    index: int
    vertices: Tuple[int, ...]
    boundary: Tuple[int, ...]
    measure: float
    diameter: float
    barycenter: np.ndarray
    frame: Frame
    loop: Tuple[int, ...] = ()

    @property
    def dim(self) -> int:
        return self.frame.dim - self.frame.rank

    @property
    def axes(self) -> np.ndarray:
        return self.frame.tangents

    @property
    def scale(self) -> float:
        return self.diameter if self.dim > 0 else 1.0

    def local_coordinates(self, points: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(points) - self.barycenter) @ self.axes.T

    def ambient_coordinates(self, local: np.ndarray) -> np.ndarray:
        return self.barycenter + np.atleast_2d(local) @ self.axes

    def basis(self, degree: int) -> MonomialBasis:
        return MonomialBasis(self.dim, degree, np.zeros(self.dim), self.scale)


def _lexicographic_sign(vector: np.ndarray) -> np.ndarray:
    """Flip so the first nonzero component is positive"""
    for c in vector:
        if abs(c) > 1e-12:
            return vector if c > 0 else -vector
    return vector


def _edge_frame(start: np.ndarray, end: np.ndarray) -> Frame:
    tangent = end - start
    tangent = tangent / np.linalg.norm(tangent)
    n = tangent.size
    if n == 2:
        normals = [_lexicographic_sign(np.array([-tangent[1], tangent[0]]))]
    else:
        axis = int(np.argmin(np.abs(tangent)))
        first = np.eye(3)[axis] - tangent[axis] * tangent
        first = first / np.linalg.norm(first)
        second = np.cross(tangent, first)
        second = second / np.linalg.norm(second)
        normals = [_lexicographic_sign(first), _lexicographic_sign(second)]
    return Frame(np.array(normals), tangent[None, :])


def _polygon_frame(coords: np.ndarray, edges: Sequence[Tuple[int, int]]) -> Frame:
    """Plane frame of a polygon in R^3 from its edges sorted by vertex index"""
    first_tangent = None
    for a, b in sorted(edges):
        direction = coords[b] - coords[a]
        direction = direction / np.linalg.norm(direction)
        if first_tangent is None:
            first_tangent = direction
            continue
        residual = direction - (direction @ first_tangent) * first_tangent
        if np.linalg.norm(residual) > 1e-8:
            second_tangent = residual / np.linalg.norm(residual)
            normal = _lexicographic_sign(np.cross(first_tangent, second_tangent))
            return Frame(normal[None, :], np.array([first_tangent, second_tangent]))
    raise MeshError("Polygonal face has collinear edges only")


def _chain_loop(edge_vertices: Sequence[Tuple[int, int]], location: str) -> Tuple[int, ...]:
    """Cyclic vertex order of a polygon from its unordered edges"""
    adjacency: Dict[int, List[int]] = {}
    for a, b in edge_vertices:
        adjacency.setdefault(a, []).append(b)
        adjacency.setdefault(b, []).append(a)
    if any(len(nbrs) != 2 for nbrs in adjacency.values()):
        raise MeshError(f"{location}: edges do not form a closed simple loop")
    start = min(adjacency)
    loop = [start]
    prev, current = None, start
    while True:
        nbrs = adjacency[current]
        nxt = nbrs[0] if nbrs[0] != prev else nbrs[1]
        if nxt == start:
            break
        loop.append(nxt)
        prev, current = current, nxt
        if len(loop) > len(adjacency):
            raise MeshError(f"{location}: edges do not form a closed simple loop")
    if len(loop) != len(adjacency):
        raise MeshError(f"{location}: edges form more than one loop")
    return tuple(loop)


def _signed_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _ccw_outward_normals(points: np.ndarray) -> np.ndarray:
    """Outward unit normals of the edges (i, i+1) of a counter-clockwise loop"""
    d = np.roll(points, -1, axis=0) - points
    normals = np.stack([d[:, 1], -d[:, 0]], axis=1)
    return normals / np.linalg.norm(normals, axis=1)[:, None]


def chebyshev_center(normals: np.ndarray, offsets: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Largest ball inside {x : normals @ x <= offsets}

    Returns:
        (center, radius); radius 0 when the region is empty or flat
    """
    normals = np.asarray(normals, dtype=float)
    dim = normals.shape[1]
    norms = np.linalg.norm(normals, axis=1)
    cost = np.zeros(dim + 1)
    cost[-1] = -1.0
    result = linprog(
        cost,
        A_ub=np.hstack([normals, norms[:, None]]),
        b_ub=np.asarray(offsets, dtype=float),
        bounds=[(None, None)] * dim + [(0.0, None)],
        method="highs",
    )
    if result.status != 0:
        return np.zeros(dim), 0.0
    return result.x[:dim], float(result.x[-1])


# =============================================================================
# MESH
# =============================================================================

class PolytopalMesh:
    """Immutable face lattice with lazily memoized moments and quadrature"""

    ENTITY_NAMES = {
        1: ("element", "vertex"),
        2: ("element", "edge", "vertex"),
        3: ("element", "face", "edge", "vertex"),
    }

    def __init__(self, dim: int, vertices: np.ndarray, entities: List[List[Entity]],
                 outward: Dict[Tuple[int, int], np.ndarray],
                 oriented_loops: Dict[Tuple[int, int], Tuple[int, ...]]):
        self.dim = dim
        self.vertices = vertices
        self.entities = entities
        self._outward = outward
        self._oriented_loops = oriented_loops
        self._closure: Dict[Tuple[int, int, int], Tuple[int, ...]] = {}
        self._cofaces: Dict[int, Dict[int, List[int]]] = {}
        self._moments: Dict[Tuple[int, int], MomentTable] = {}
        self._quadrature: Dict[Tuple[int, int, int], Quadrature] = {}
        self._kernels: Dict[Tuple[int, int], Tuple[np.ndarray, float]] = {}
        self._lock = threading.Lock()

    # -------------------------------------------------------------------------
    # Lattice queries
    # -------------------------------------------------------------------------

    def num(self, codim: int) -> int:
        return len(self.entities[codim])

    @property
    def num_elements(self) -> int:
        return self.num(0)

    def entity(self, codim: int, index: int) -> Entity:
        return self.entities[codim][index]

    def entity_name(self, codim: int) -> str:
        return self.ENTITY_NAMES[self.dim][codim]

    def entity_key(self, codim: int, index: int) -> str:
        return f"{self.entity_name(codim)}:{index}"

    @property
    def h(self) -> float:
        return max(e.diameter for e in self.entities[0])

    @property
    def total_measure(self) -> float:
        return float(sum(e.measure for e in self.entities[0]))

    def closure(self, codim: int, index: int, target: int) -> Tuple[int, ...]:
        """Sorted indices of the codim-`target` entities in the closure of an entity"""
        if target < codim:
            return ()
        if target == codim:
            return (index,)
        key = (codim, index, target)
        cached = self._closure.get(key)
        if cached is None:
            found = set()
            for sub in self.entities[codim][index].boundary:
                found.update(self.closure(codim + 1, sub, target))
            with self._lock:
                cached = self._closure.setdefault(key, tuple(sorted(found)))
        return cached

    def cofaces(self, codim: int, index: int) -> List[int]:
        """Elements whose closure contains the entity"""
        table = self._cofaces.get(codim)
        if table is None:
            table = {}
            for K in range(self.num_elements):
                for sub in self.closure(0, K, codim):
                    table.setdefault(sub, []).append(K)
            with self._lock:
                table = self._cofaces.setdefault(codim, table)
        return table.get(index, [])

    def outward_normal(self, element: int, face: int) -> np.ndarray:
        """Outward unit normal of a codim-1 face of an element"""
        return self._outward[(element, face)]

    def oriented_loop(self, element: int, face: int) -> Tuple[int, ...]:
        """Vertex loop of a polyhedron face, counter-clockwise seen from outside"""
        return self._oriented_loops[(element, face)]

    # -------------------------------------------------------------------------
    # Kernels, quadrature and moments
    # -------------------------------------------------------------------------

    def kernel(self, codim: int, index: int) -> Tuple[np.ndarray, float]:
        """Chebyshev center (ambient) and radius of the entity's kernel"""
        key = (codim, index)
        cached = self._kernels.get(key)
        if cached is not None:
            return cached
        entity = self.entity(codim, index)
        if entity.dim == 0:
            result = (entity.barycenter.copy(), 0.0)
        elif entity.dim == 1:
            result = (entity.barycenter.copy(), 0.5 * entity.measure)
        elif entity.dim == 2:
            local = entity.local_coordinates(self.vertices[list(entity.loop)])
            if _signed_area(local) < 0.0:
                local = local[::-1]
            normals = _ccw_outward_normals(local)
            offsets = np.sum(normals * local, axis=1)
            center, radius = chebyshev_center(normals, offsets)
            result = (entity.ambient_coordinates(center)[0], radius)
        else:
            normals, offsets = [], []
            for F in entity.boundary:
                nu = self.outward_normal(index, F)
                normals.append(nu)
                offsets.append(nu @ self.entity(codim + 1, F).barycenter)
            result = chebyshev_center(np.array(normals), np.array(offsets))
        with self._lock:
            self._kernels.setdefault(key, result)
        return result

    def _star_center(self, codim: int, index: int) -> np.ndarray:
        entity = self.entity(codim, index)
        center, radius = self.kernel(codim, index)
        if radius <= KERNEL_TOL * entity.diameter:
            raise StarShapeError(
                f"{self.entity_key(codim, index)} is not star-shaped with respect to a ball"
            )
        return center

    def quadrature(self, codim: int, index: int, degree: int) -> Quadrature:
        """Rule on the entity, ambient points, exact up to `degree`"""
        key = (codim, index, degree)
        cached = self._quadrature.get(key)
        if cached is not None:
            return cached
        entity = self.entity(codim, index)
        coords = self.vertices
        if entity.dim == 0:
            rule = Quadrature(coords[list(entity.vertices)].copy(), np.ones(1))
        elif entity.dim == 1:
            rule = simplex_quadrature(coords[list(entity.vertices)], degree)
        elif entity.dim == 2:
            apex = self._star_center(codim, index)
            loop = list(entity.loop)
            rule = Quadrature.concatenate(
                simplex_quadrature(np.array([apex, coords[a], coords[b]]), degree)
                for a, b in zip(loop, loop[1:] + loop[:1])
            )
        else:
            apex = self._star_center(codim, index)
            pieces = []
            for F in entity.boundary:
                face_apex = self._star_center(codim + 1, F)
                loop = list(self.entity(codim + 1, F).loop)
                for a, b in zip(loop, loop[1:] + loop[:1]):
                    pieces.append(simplex_quadrature(
                        np.array([apex, face_apex, coords[a], coords[b]]), degree))
            rule = Quadrature.concatenate(pieces)
        with self._lock:
            self._quadrature.setdefault(key, rule)
        return rule

    def local_quadrature(self, codim: int, index: int, degree: int) -> Quadrature:
        """Rule in the entity's own local coordinates"""
        entity = self.entity(codim, index)
        return self.quadrature(codim, index, degree).transformed(entity.barycenter, entity.axes)

    def monomial_moments(self, codim: int, index: int, degree: int) -> MomentTable:
        """Integrals of the entity's scaled local monomials up to `degree`"""
        key = (codim, index)
        cached = self._moments.get(key)
        if cached is not None and cached.degree >= degree:
            return cached
        entity = self.entity(codim, index)
        basis = entity.basis(degree)
        if entity.dim == 0:
            values = np.ones(basis.size)
        elif entity.dim == 1:
            values = np.array([
                entity.measure * (1.0 - (-1.0) ** (p + 1)) / ((p + 1) * 2.0 ** (p + 1))
                for (p,) in basis.indices
            ])
        elif entity.dim == 2:
            rule = self.local_quadrature(codim, index, degree)
            values = rule.integrate(basis.evaluate(rule.points))
        else:
            values = self._polyhedron_moments(index, basis)
        table = MomentTable(basis, values)
        with self._lock:
            current = self._moments.get(key)
            if current is None or current.degree < degree:
                self._moments[key] = table
        return table

    def _polyhedron_moments(self, element: int, basis: MonomialBasis) -> np.ndarray:
        """Volume moments from face integrals of the homogeneous local monomials"""
        entity = self.entity(0, element)
        orders = np.array([beta.order for beta in basis.indices], dtype=float)
        total = np.zeros(basis.size)
        for F in entity.boundary:
            face = self.entity(1, F)
            support = self.outward_normal(element, F) @ (face.barycenter - entity.barycenter)
            rule = self.quadrature(1, F, basis.degree)
            local = entity.local_coordinates(rule.points)
            total += support * rule.integrate(basis.evaluate(local))
        return total / (3.0 + orders)


# =============================================================================
# LATTICE CONSTRUCTION
# =============================================================================

def build_lattice(vertices, incidence: Sequence[Sequence[Sequence[int]]]) -> PolytopalMesh:
    """
    Build the complete face lattice

    Args:
        vertices: nv x n coordinates
        incidence: for codim c = 0..n-1, a list of entities each given by the
            indices of its codim-(c+1) boundary entities; the last level lists
            vertex indices

    Returns:
        PolytopalMesh with frames, measures and outward normals
    """
    coords = np.atleast_2d(np.asarray(vertices, dtype=float))
    if coords.ndim != 2 or coords.shape[1] not in (1, 2, 3):
        raise MeshError(f"Vertices must be an array of shape (nv, n) with n in 1..3, got {coords.shape}")
    dim = coords.shape[1]
    if len(incidence) != dim:
        raise MeshError(f"Expected {dim} incidence levels for dimension {dim}, got {len(incidence)}")
    if coords.shape[0] == 0:
        raise MeshError("Mesh has no vertices")

    duplicates = cKDTree(coords).query_pairs(DUPLICATE_TOL * max(1.0, float(np.ptp(coords))))
    if duplicates:
        a, b = sorted(duplicates)[0]
        raise MeshError(f"vertices {a} and {b} coincide")

    counts = [len(level) for level in incidence] + [coords.shape[0]]
    for codim, level in enumerate(incidence):
        if not level:
            raise MeshError(f"entities[{codim}] is empty")
        for i, refs in enumerate(level):
            if len(refs) == 0:
                raise MeshError(f"entities[{codim}][{i}] has no boundary entities")
            if len(set(refs)) != len(refs):
                raise MeshError(f"entities[{codim}][{i}] lists a boundary entity twice")
            for ref in refs:
                if not isinstance(ref, (int, np.integer)) or ref < 0 or ref >= counts[codim + 1]:
                    raise MeshError(
                        f"entities[{codim}][{i}] references missing entity {ref} of codimension {codim + 1}"
                    )
    for codim in range(1, dim + 1):
        used = set()
        for refs in incidence[codim - 1]:
            used.update(int(r) for r in refs)
        unused = sorted(set(range(counts[codim])) - used)
        if unused:
            raise MeshError(f"entities[{codim}][{unused[0]}] is dangling: it bounds no entity")

    entities: List[List[Entity]] = [[] for _ in range(dim + 1)]
    entities[dim] = [
        Entity(dim, v, (v,), (), 1.0, 0.0, coords[v].copy(), Frame(np.eye(dim), np.zeros((0, dim))))
        for v in range(coords.shape[0])
    ]

    outward: Dict[Tuple[int, int], np.ndarray] = {}
    oriented_loops: Dict[Tuple[int, int], Tuple[int, ...]] = {}

    for codim in range(dim - 1, -1, -1):
        entity_dim = dim - codim
        for i, refs in enumerate(incidence[codim]):
            location = f"entities[{codim}][{i}]"
            boundary = tuple(sorted(int(r) for r in refs))
            if entity_dim == 1:
                entities[codim].append(_build_segment(coords, codim, i, boundary, location))
            elif entity_dim == 2:
                entities[codim].append(
                    _build_polygon(coords, entities[codim + 1], codim, i, boundary, location))
            else:
                entity, loops, normals = _build_polyhedron(coords, entities[1], i, boundary, location)
                entities[0].append(entity)
                oriented_loops.update(loops)
                outward.update(normals)

    if dim == 1:
        for K, element in enumerate(entities[0]):
            for v in element.boundary:
                outward[(K, v)] = np.sign(coords[v] - element.barycenter)
    elif dim == 2:
        for K, element in enumerate(entities[0]):
            local = element.local_coordinates(coords[list(element.loop)])
            loop = list(element.loop)
            if _signed_area(local) < 0.0:
                loop = loop[::-1]
                local = local[::-1]
            normals = _ccw_outward_normals(local)
            edge_of = {frozenset(entities[1][e].vertices): e for e in element.boundary}
            for j, (a, b) in enumerate(zip(loop, loop[1:] + loop[:1])):
                outward[(K, edge_of[frozenset((a, b))])] = normals[j]

    shared: Dict[int, int] = {}
    for refs in incidence[0]:
        for F in refs:
            shared[int(F)] = shared.get(int(F), 0) + 1
    for F, count in sorted(shared.items()):
        if count > 2:
            raise MeshError(f"entities[1][{F}] is shared by {count} elements")

    mesh = PolytopalMesh(dim, coords, entities, outward, oriented_loops)
    logger.debug(f"Built {dim}D lattice: " + ", ".join(
        f"{mesh.num(c)} {mesh.entity_name(c)}s" for c in range(dim + 1)))
    return mesh


def _build_segment(coords: np.ndarray, codim: int, index: int,
                   boundary: Tuple[int, ...], location: str) -> Entity:
    if len(boundary) != 2:
        raise MeshError(f"{location}: a segment needs exactly 2 vertices, got {len(boundary)}")
    a, b = boundary
    length = float(np.linalg.norm(coords[b] - coords[a]))
    if length <= 0.0:
        raise MeshError(f"{location}: zero-length segment")
    if codim == 0:
        frame = Frame(np.zeros((0, 1)), np.eye(1))
    else:
        frame = _edge_frame(coords[a], coords[b])
    return Entity(codim, index, boundary, boundary, length, length,
                  0.5 * (coords[a] + coords[b]), frame)


def _build_polygon(coords: np.ndarray, edges: List[Entity], codim: int, index: int,
                   boundary: Tuple[int, ...], location: str) -> Entity:
    if len(boundary) < 3:
        raise MeshError(f"{location}: a polygon needs at least 3 edges, got {len(boundary)}")
    edge_vertices = [edges[e].vertices for e in boundary]
    loop = _chain_loop(edge_vertices, location)
    verts = tuple(sorted(loop))
    points = coords[list(loop)]
    if codim == 0:
        frame = Frame(np.zeros((0, 2)), np.eye(2))
    else:
        frame = _polygon_frame(coords, edge_vertices)
        deviation = np.max(np.abs((points - points[0]) @ frame.normals[0]))
        if deviation > PLANARITY_TOL * max(1.0, float(np.ptp(points))):
            raise MeshError(f"{location}: polygonal face is not planar (deviation {deviation:.3e})")

    local = (points - points[0]) @ frame.tangents.T
    area = _signed_area(local)
    if abs(area) <= 1e-14 * max(1.0, float(np.ptp(local))) ** 2:
        raise MeshError(f"{location}: zero-area polygon")
    x, y = local[:, 0], local[:, 1]
    cross = x * np.roll(y, -1) - np.roll(x, -1) * y
    centroid_local = np.array([
        np.sum((x + np.roll(x, -1)) * cross),
        np.sum((y + np.roll(y, -1)) * cross),
    ]) / (6.0 * area)
    barycenter = points[0] + centroid_local @ frame.tangents
    diameter = _diameter(points)
    return Entity(codim, index, verts, boundary, abs(area), diameter, barycenter, frame, loop)


def _build_polyhedron(coords: np.ndarray, faces: List[Entity], index: int,
                      boundary: Tuple[int, ...], location: str):
    if len(boundary) < 4:
        raise MeshError(f"{location}: a polyhedron needs at least 4 faces, got {len(boundary)}")

    edge_faces: Dict[frozenset, List[int]] = {}
    for F in boundary:
        loop = faces[F].loop
        for a, b in zip(loop, loop[1:] + loop[:1]):
            edge_faces.setdefault(frozenset((a, b)), []).append(F)
    if any(len(fs) != 2 for fs in edge_faces.values()):
        raise MeshError(f"{location}: faces do not close up into a surface")

    # Orient neighbouring loops consistently by breadth-first propagation
    oriented: Dict[int, Tuple[int, ...]] = {boundary[0]: faces[boundary[0]].loop}
    queue = deque([boundary[0]])
    while queue:
        F = queue.popleft()
        loop = oriented[F]
        for a, b in zip(loop, loop[1:] + loop[:1]):
            for G in edge_faces[frozenset((a, b))]:
                if G in oriented:
                    continue
                other = faces[G].loop
                directed = set(zip(other, other[1:] + other[:1]))
                oriented[G] = tuple(reversed(other)) if (a, b) in directed else other
                queue.append(G)
    if len(oriented) != len(boundary):
        raise MeshError(f"{location}: face surface is not connected")

    origin = coords[min(v for F in boundary for v in faces[F].vertices)]
    area_vectors = {}
    volume = 0.0
    for F in boundary:
        pts = coords[list(oriented[F])] - origin
        area_vectors[F] = 0.5 * np.sum(np.cross(pts, np.roll(pts, -1, axis=0)), axis=0)
        volume += area_vectors[F] @ (faces[F].barycenter - origin) / 3.0
    if volume < 0.0:
        oriented = {F: tuple(reversed(loop)) for F, loop in oriented.items()}
        area_vectors = {F: -vec for F, vec in area_vectors.items()}
        volume = -volume
    if volume <= 1e-14:
        raise MeshError(f"{location}: zero-volume polyhedron")

    first_moment = np.zeros(3)
    for F in boundary:
        c = faces[F].barycenter - origin
        first_moment += 0.25 * (area_vectors[F] @ c) * c
    barycenter = origin + first_moment / volume

    verts = tuple(sorted({v for F in boundary for v in faces[F].vertices}))
    entity = Entity(0, index, verts, boundary, float(volume), _diameter(coords[list(verts)]),
                    barycenter, Frame(np.zeros((0, 3)), np.eye(3)))
    loops = {(index, F): oriented[F] for F in boundary}
    normals = {(index, F): area_vectors[F] / np.linalg.norm(area_vectors[F]) for F in boundary}
    return entity, loops, normals


def _diameter(points: np.ndarray) -> float:
    diffs = points[:, None, :] - points[None, :, :]
    return float(np.sqrt(np.max(np.sum(diffs ** 2, axis=-1))))


# =============================================================================
# DIAGNOSTICS
# =============================================================================

def check_mesh(mesh: PolytopalMesh, chunkiness_limit: float = CHUNKINESS_LIMIT) -> MeshReport:
    """
    Star-shapedness, chunkiness and face-size ratios of every element

    Never raises on bad geometry; problems are listed in the report.
    """
    report = MeshReport(mesh.dim, mesh.num_elements, mesh.h, chunkiness_limit)
    for K in range(mesh.num_elements):
        element = mesh.entity(0, K)
        _, rho = mesh.kernel(0, K)
        star = rho > KERNEL_TOL * element.diameter
        gamma = element.diameter / rho if star else math.inf
        eta = 1.0
        for codim in range(1, mesh.dim):
            for F in mesh.closure(0, K, codim):
                eta = max(eta, element.diameter / mesh.entity(codim, F).diameter)
        report.elements.append(ElementDiagnostics(K, element.diameter, bool(star), rho, gamma, eta))

    if mesh.dim == 3:
        worst = 0.0
        for F in range(mesh.num(1)):
            face = mesh.entity(1, F)
            _, rho = mesh.kernel(1, F)
            worst = max(worst, face.diameter / rho if rho > KERNEL_TOL * face.diameter else math.inf)
        report.face_chunkiness_max = None if math.isinf(worst) else worst

    flagged = report.flagged
    if flagged:
        logger.warning(f"{len(flagged)} of {mesh.num_elements} elements violate the mesh conditions")
    return report

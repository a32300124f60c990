#!/usr/bin/env python3
"""
Mesh generators and the JSON mesh file format

File layout:
    {"dimension": n,
     "vertices": [[x, ...], ...],
     "entities": [codim-0 lists, codim-1 lists, ..., codim-(n-1) lists]}
where entities[c][i] lists the indices of the codim-(c+1) entities bounding
entity i, and the last level lists vertex indices.
"""

import os
import json
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from meshgeom import MeshError, PolytopalMesh, build_lattice
from results import backup_existing

logger = logging.getLogger(__name__)

MESH_KINDS = ("interval", "square_grid", "distorted_quads", "hex_dominant", "cube_grid")
MESH_DIMENSIONS = {
    "interval": 1,
    "square_grid": 2,
    "distorted_quads": 2,
    "hex_dominant": 2,
    "cube_grid": 3,
}


class MeshFormatError(MeshError):
    """Raised when a mesh file violates the schema"""


# =============================================================================
# RAW CONSTRUCTORS
# =============================================================================

def _edge_numbering(loops: Sequence[Sequence[int]]) -> Tuple[Dict[Tuple[int, int], int], List[List[int]]]:
    """Number edges by first appearance along the loops"""
    numbering: Dict[Tuple[int, int], int] = {}
    per_loop = []
    for loop in loops:
        ids = []
        for a, b in zip(loop, list(loop[1:]) + [loop[0]]):
            key = (min(a, b), max(a, b))
            if key not in numbering:
                numbering[key] = len(numbering)
            ids.append(numbering[key])
        per_loop.append(ids)
    return numbering, per_loop


def from_polygons(vertices, polygons: Sequence[Sequence[int]]) -> PolytopalMesh:
    """2D mesh from vertex loops, shared edges deduplicated"""
    numbering, per_polygon = _edge_numbering(polygons)
    edges = [list(key) for key, _ in sorted(numbering.items(), key=lambda kv: kv[1])]
    return build_lattice(vertices, [per_polygon, edges])


def from_polyhedra(vertices, cells: Sequence[Sequence[Sequence[int]]]) -> PolytopalMesh:
    """3D mesh from cells given as lists of face loops"""
    face_numbering: Dict[frozenset, int] = {}
    face_loops: List[Sequence[int]] = []
    cell_faces = []
    for cell in cells:
        ids = []
        for loop in cell:
            key = frozenset(loop)
            if key not in face_numbering:
                face_numbering[key] = len(face_loops)
                face_loops.append(loop)
            ids.append(face_numbering[key])
        cell_faces.append(ids)
    numbering, per_face = _edge_numbering(face_loops)
    edges = [list(key) for key, _ in sorted(numbering.items(), key=lambda kv: kv[1])]
    return build_lattice(vertices, [cell_faces, per_face, edges])


# =============================================================================
# GENERATORS
# =============================================================================

def _interval(n: int) -> PolytopalMesh:
    vertices = np.linspace(0.0, 1.0, n + 1)[:, None]
    return build_lattice(vertices, [[[i, i + 1] for i in range(n)]])


def _grid_vertices(n: int) -> np.ndarray:
    ticks = np.linspace(0.0, 1.0, n + 1)
    return np.array([[x, y] for y in ticks for x in ticks])


def _grid_quads(n: int) -> List[List[int]]:
    row = n + 1
    return [
        [j * row + i, j * row + i + 1, (j + 1) * row + i + 1, (j + 1) * row + i]
        for j in range(n) for i in range(n)
    ]


def _square_grid(n: int) -> PolytopalMesh:
    return from_polygons(_grid_vertices(n), _grid_quads(n))


def _distorted_quads(n: int, seed: int) -> PolytopalMesh:
    vertices = _grid_vertices(n)
    rng = np.random.default_rng(seed)
    shift = rng.uniform(-0.2 / n, 0.2 / n, size=vertices.shape)
    interior = np.all((vertices > 1e-12) & (vertices < 1.0 - 1e-12), axis=1)
    vertices[interior] += shift[interior]
    return from_polygons(vertices, _grid_quads(n))


def _hex_dominant(n: int) -> PolytopalMesh:
    """Brick wall with alternating half offsets; interior rows zigzag into convex hexagons"""
    h = 1.0 / n
    delta = 0.1 * h

    def corners(row: int) -> List[float]:
        offset = 0.0 if row % 2 == 0 else 0.5 * h
        xs = {0.0, 1.0}
        xs.update(x for x in (offset + i * h for i in range(n + 1)) if 0.0 < x < 1.0 - 1e-12)
        return sorted(xs)

    vertices: List[List[float]] = []
    line_ids: List[Dict[float, int]] = []
    for j in range(n + 1):
        own = set(corners(j)) if j < n else set()
        below = set(corners(j - 1)) if j > 0 else set()
        xs = sorted(own | below)
        ids = {}
        for x in xs:
            y = j * h
            if 0 < j < n and 0.0 < x < 1.0:
                y += delta if x in own else -delta
            ids[x] = len(vertices)
            vertices.append([x, y])
        line_ids.append(ids)

    polygons = []
    for j in range(n):
        row_corners = corners(j)
        for xa, xb in zip(row_corners, row_corners[1:]):
            bottom = [line_ids[j][x] for x in sorted(line_ids[j]) if xa - 1e-12 <= x <= xb + 1e-12]
            top = [line_ids[j + 1][x] for x in sorted(line_ids[j + 1], reverse=True)
                   if xa - 1e-12 <= x <= xb + 1e-12]
            polygons.append(bottom + top)
    return from_polygons(np.array(vertices), polygons)


def _cube_grid(n: int) -> PolytopalMesh:
    ticks = np.linspace(0.0, 1.0, n + 1)
    vertices = np.array([[x, y, z] for z in ticks for y in ticks for x in ticks])
    row, layer = n + 1, (n + 1) ** 2

    def vid(i, j, l):
        return l * layer + j * row + i

    cells = []
    for l in range(n):
        for j in range(n):
            for i in range(n):
                c = [[vid(i + a, j + b, l + d) for a, b in ((0, 0), (1, 0), (1, 1), (0, 1))]
                     for d in (0, 1)]
                bottom, top = c
                cells.append([
                    bottom,
                    top,
                    [bottom[0], bottom[1], top[1], top[0]],
                    [bottom[1], bottom[2], top[2], top[1]],
                    [bottom[2], bottom[3], top[3], top[2]],
                    [bottom[3], bottom[0], top[0], top[3]],
                ])
    return from_polyhedra(vertices, cells)


def generate_mesh(kind: str, n: int, seed: int = 0,
                  domain: Optional[Sequence[Tuple[float, float]]] = None) -> PolytopalMesh:
    """
    Deterministic mesh of the unit box (or an axis-aligned `domain`)

    Args:
        kind: one of MESH_KINDS
        n: subdivisions per axis, h proportional to 1/n
        seed: perturbation seed for distorted_quads
        domain: optional ((lo, hi), ...) per axis

    Returns:
        PolytopalMesh
    """
    if kind not in MESH_KINDS:
        raise MeshError(f"Unknown mesh kind {kind!r}; choose from {', '.join(MESH_KINDS)}")
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise MeshError(f"Mesh size must be a positive integer, got {n!r}")
    n = int(n)
    if kind == "interval":
        mesh = _interval(n)
    elif kind == "square_grid":
        mesh = _square_grid(n)
    elif kind == "distorted_quads":
        mesh = _distorted_quads(n, seed)
    elif kind == "hex_dominant":
        mesh = _hex_dominant(n)
    else:
        mesh = _cube_grid(n)

    if domain is not None:
        domain = np.asarray(domain, dtype=float).reshape(-1, 2)
        if domain.shape[0] != mesh.dim or np.any(domain[:, 1] <= domain[:, 0]):
            raise MeshError(f"Domain {domain.tolist()} does not fit a {mesh.dim}D mesh")
        vertices = domain[:, 0] + mesh.vertices * (domain[:, 1] - domain[:, 0])
        mesh = build_lattice(vertices, mesh_incidence(mesh))

    logger.info(f"Generated {kind}({n}): {mesh.num_elements} elements, h = {mesh.h:.4g}")
    return mesh


# =============================================================================
# FILE I/O
# =============================================================================

def mesh_incidence(mesh: PolytopalMesh) -> List[List[List[int]]]:
    return [
        [list(e.boundary) for e in mesh.entities[codim]]
        for codim in range(mesh.dim)
    ]


def mesh_to_dict(mesh: PolytopalMesh) -> dict:
    return {
        "dimension": mesh.dim,
        "vertices": mesh.vertices.tolist(),
        "entities": mesh_incidence(mesh),
    }


def write_mesh(mesh: PolytopalMesh, path: str):
    """Write a mesh as JSON; an existing file is backed up first"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    backup_existing(path)
    with open(path, "w") as f:
        json.dump(mesh_to_dict(mesh), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Mesh written to {path}")


def _require(condition: bool, path: str, location: str, message: str):
    if not condition:
        raise MeshFormatError(f"{path}: {location}: {message}")


def read_mesh(path: str) -> PolytopalMesh:
    """Read and validate a JSON mesh file"""
    if not os.path.exists(path):
        raise MeshFormatError(f"{path}: file not found")
    with open(path, "r") as f:
        text = f.read()
    _require(bool(text.strip()), path, "file", "empty mesh file")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise MeshFormatError(f"{path}: invalid JSON: {e}") from e

    _require(isinstance(data, dict), path, "root", "expected an object")
    for key in ("dimension", "vertices", "entities"):
        _require(key in data, path, key, "missing key")
    dim = data["dimension"]
    _require(isinstance(dim, int) and dim in (1, 2, 3), path, "dimension", f"must be 1, 2 or 3, got {dim!r}")

    vertices = data["vertices"]
    _require(isinstance(vertices, list) and len(vertices) > 0, path, "vertices", "must be a nonempty list")
    for i, v in enumerate(vertices):
        _require(
            isinstance(v, list) and len(v) == dim
            and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v),
            path, f"vertices[{i}]", f"must be a list of {dim} numbers",
        )

    entities = data["entities"]
    _require(isinstance(entities, list) and len(entities) == dim, path, "entities",
             f"must hold {dim} codimension levels")
    for c, level in enumerate(entities):
        _require(isinstance(level, list) and len(level) > 0, path, f"entities[{c}]", "must be a nonempty list")
        for i, refs in enumerate(level):
            _require(
                isinstance(refs, list) and all(isinstance(r, int) and not isinstance(r, bool) for r in refs),
                path, f"entities[{c}][{i}]", "must be a list of integer indices",
            )

    try:
        mesh = build_lattice(np.array(vertices, dtype=float), entities)
    except MeshError as e:
        raise MeshFormatError(f"{path}: {e}") from e
    logger.info(f"Read {dim}D mesh from {path}: {mesh.num_elements} elements")
    return mesh

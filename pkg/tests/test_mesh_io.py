import json

import numpy as np
import pytest

from mesh_io import (
    MESH_DIMENSIONS,
    MESH_KINDS,
    MeshFormatError,
    generate_mesh,
    mesh_incidence,
    mesh_to_dict,
    read_mesh,
    write_mesh,
)
from meshgeom import MeshError, check_mesh

TRIANGLE = {
    "dimension": 2,
    "vertices": [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
    "entities": [[[0, 1, 2]], [[0, 1], [1, 2], [2, 0]]],
}


def write_json(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def test_generated_counts():
    interval = generate_mesh("interval", 2)
    assert [interval.num(c) for c in range(2)] == [2, 3]
    grid = generate_mesh("square_grid", 2)
    assert [grid.num(c) for c in range(3)] == [4, 12, 9]
    assert grid.h == pytest.approx(np.sqrt(2.0) / 2.0)


@pytest.mark.parametrize("kind", MESH_KINDS)
def test_every_kind_passes_check_mesh(kind):
    mesh = generate_mesh(kind, 2)
    assert mesh.dim == MESH_DIMENSIONS[kind]
    assert mesh.total_measure == pytest.approx(1.0)
    assert check_mesh(mesh).passed


def test_hex_dominant_has_hexagons():
    mesh = generate_mesh("hex_dominant", 4)
    sides = [len(mesh.entity(0, K).boundary) for K in range(mesh.num_elements)]
    assert max(sides) == 6
    report = check_mesh(mesh)
    assert report.passed
    assert report.gamma_max < 20.0


def test_distorted_quads_are_deterministic():
    a = generate_mesh("distorted_quads", 4, seed=7)
    b = generate_mesh("distorted_quads", 4, seed=7)
    c = generate_mesh("distorted_quads", 4, seed=8)
    assert np.array_equal(a.vertices, b.vertices)
    assert not np.allclose(a.vertices, c.vertices)
    on_boundary = np.any((a.vertices < 1e-12) | (a.vertices > 1.0 - 1e-12), axis=1)
    assert np.array_equal(a.vertices[on_boundary], generate_mesh("square_grid", 4).vertices[on_boundary])


def test_domain_is_mapped():
    mesh = generate_mesh("square_grid", 2, domain=[(-1.0, 1.0), (0.0, 3.0)])
    assert mesh.total_measure == pytest.approx(6.0)
    assert mesh.vertices.min(axis=0) == pytest.approx([-1.0, 0.0])
    with pytest.raises(MeshError):
        generate_mesh("interval", 2, domain=[(1.0, 0.0)])


def test_bad_generator_arguments():
    with pytest.raises(MeshError, match="Unknown mesh kind"):
        generate_mesh("voronoi", 3)
    with pytest.raises(MeshError, match="positive integer"):
        generate_mesh("square_grid", 0)


@pytest.mark.parametrize("kind", ["interval", "hex_dominant", "cube_grid"])
def test_write_read_preserves_lattice(tmp_path, kind):
    mesh = generate_mesh(kind, 2)
    path = str(tmp_path / "mesh.json")
    write_mesh(mesh, path)
    again = read_mesh(path)
    assert mesh_incidence(again) == mesh_incidence(mesh)
    assert np.allclose(again.vertices, mesh.vertices)
    assert [again.num(c) for c in range(mesh.dim + 1)] == [mesh.num(c) for c in range(mesh.dim + 1)]


def test_write_backs_up_existing_file(tmp_path):
    path = tmp_path / "mesh.json"
    write_mesh(generate_mesh("interval", 1), str(path))
    first = path.read_text()
    write_mesh(generate_mesh("interval", 3), str(path))
    assert (tmp_path / "mesh.json.backup").read_text() == first
    assert json.loads(path.read_text()) == mesh_to_dict(generate_mesh("interval", 3))


def test_single_triangle_file(tmp_path):
    mesh = read_mesh(write_json(tmp_path / "tri.json", TRIANGLE))
    assert mesh.num_elements == 1
    assert mesh.entity(0, 0).measure == pytest.approx(0.5)


def test_missing_file(tmp_path):
    path = str(tmp_path / "absent.json")
    with pytest.raises(MeshFormatError, match="file not found"):
        read_mesh(path)


def test_empty_file(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("  \n")
    with pytest.raises(MeshFormatError, match="empty mesh file"):
        read_mesh(str(path))


def test_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{\"dimension\": 2,")
    with pytest.raises(MeshFormatError, match="invalid JSON"):
        read_mesh(str(path))


@pytest.mark.parametrize("mutate,message", [
    (lambda d: d.pop("vertices"), "vertices: missing key"),
    (lambda d: d.update(dimension=4), "must be 1, 2 or 3"),
    (lambda d: d["vertices"].__setitem__(1, [1.0]), r"vertices\[1\]"),
    (lambda d: d.update(entities=d["entities"][:1]), "codimension levels"),
    (lambda d: d["entities"][0].__setitem__(0, [0, 1, "2"]), "integer indices"),
])
def test_schema_violations(tmp_path, mutate, message):
    data = json.loads(json.dumps(TRIANGLE))
    mutate(data)
    with pytest.raises(MeshFormatError, match=message):
        read_mesh(write_json(tmp_path / "bad.json", data))


def test_missing_vertex_reference(tmp_path):
    data = json.loads(json.dumps(TRIANGLE))
    data["entities"][1][2] = [2, 3]
    with pytest.raises(MeshFormatError, match="missing entity 3"):
        read_mesh(write_json(tmp_path / "bad.json", data))

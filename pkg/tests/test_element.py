import math

import numpy as np
import pytest

from element import (
    DofVector,
    ElementBuilder,
    FaceMoment,
    InteriorMoment,
    UnsupportedElementError,
    VertexDeriv,
    entity_dof_count,
)
from mesh_io import from_polygons, generate_mesh
from models import ElementConfig
from conftest import regular_polygon
from polyspace import MonomialBasis, PolyCoeffs
from tensoralg import multi_indices, multiplicity

PLANAR_CASES = [(1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (2, 4), (3, 3), (3, 4)]


def random_poly(element, rng):
    return PolyCoeffs(element.basis, rng.standard_normal(element.basis.size))


def energy_by_quadrature(element, p, q):
    """(grad^m p, grad^m q) + (p, q) by direct quadrature"""
    rule = element.geometry.volume_quadrature(2 * element.k)
    total = rule.integrate(p(rule.points) * q(rule.points))
    for gamma in multi_indices(element.dim, element.m):
        total += multiplicity(gamma) * rule.integrate(
            p.differentiate(gamma)(rule.points) * q.differentiate(gamma)(rule.points))
    return total


def edge_points(face, ts):
    """Element-local points on an edge at edge coordinates ts"""
    return face.center + np.outer(ts, face.tangents[0])


# =============================================================================
# LAYOUT
# =============================================================================

def test_triangle_dof_counts(triangle, make_element):
    assert make_element(triangle, 2, 2).size == 9
    cubic = make_element(triangle, 2, 3)
    assert cubic.size == 12
    assert cubic.layout.count(VertexDeriv) == 9
    assert cubic.layout.count(FaceMoment) == 3
    assert cubic.layout.count(InteriorMoment) == 0


@pytest.mark.parametrize("sides", [3, 5, 7])
def test_polygon_quadratic_count(sides, make_element):
    element = make_element(regular_polygon(sides), 1, 2)
    assert element.size == 2 * sides + 1


@pytest.mark.parametrize("m", [1, 2, 3])
def test_k_equal_m_has_vertex_dofs_only(pentagon, make_element, m):
    element = make_element(pentagon, m, m)
    assert element.layout.count(VertexDeriv) == element.size == 5 * sum(j + 1 for j in range(m))


@pytest.mark.parametrize("m,k", PLANAR_CASES)
def test_entity_dof_count_matches_layout(pentagon, make_element, m, k):
    element = make_element(pentagon, m, k)
    for (codim, _), (start, stop) in element.layout.entity_ranges.items():
        assert stop - start == entity_dof_count(2, m, k, codim)


def test_cube_layout_order(unit_cube, make_element):
    element = make_element(unit_cube, 2, 3)
    kinds = [type(d).__name__ for d in element.layout.descriptors]
    first_face = kinds.index("FaceMoment")
    assert set(kinds[:first_face]) == {"VertexDeriv"}
    assert first_face == 8 * 4
    codims = [d.codim for d in element.layout.descriptors if isinstance(d, FaceMoment)]
    assert codims == sorted(codims, reverse=True)
    assert element.size == 8 * 4 + 12 * 2 + 6 * 1


def test_dof_vector_checks_its_size(unit_square, make_element):
    element = make_element(unit_square, 1, 1)
    with pytest.raises(ValueError):
        DofVector(element.layout, np.zeros(3))


def test_dof_map_of_x(unit_square, make_element):
    element = make_element(unit_square, 1, 1)
    p = PolyCoeffs(element.basis, [0.5, math.sqrt(2.0), 0.0])
    assert np.allclose(element.dof_map(p).values, [0.0, 1.0, 0.0, 1.0])
    foreign = PolyCoeffs(MonomialBasis(2, 1, np.ones(2), 1.0), [0.0, 1.0, 0.0])
    with pytest.raises(ValueError):
        element.dof_map(foreign)


# =============================================================================
# PROJECTORS
# =============================================================================

@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_interval_projectors_reproduce_polynomials(make_element, rng, m):
    mesh = generate_mesh("interval", 1)
    for k in (m, 2 * m + 1):
        element = make_element(mesh, m, k)
        p = random_poly(element, rng)
        dofs = element.dof_map(p)
        assert np.allclose(element.pi_projector(dofs).coeffs, p.coeffs, atol=1e-8)
        assert np.allclose(element.l2_projector(dofs).coeffs, p.coeffs, atol=1e-8)


@pytest.mark.parametrize("m,k", PLANAR_CASES)
@pytest.mark.parametrize("shape", ["pentagon", "l_shape"])
def test_planar_projectors_reproduce_polynomials(request, make_element, rng, shape, m, k):
    element = make_element(request.getfixturevalue(shape), m, k)
    p = random_poly(element, rng)
    dofs = element.dof_map(p)
    assert np.allclose(element.PiStar @ element.D, np.eye(element.basis.size), atol=1e-8)
    assert np.allclose(element.pi_projector(dofs).coeffs, p.coeffs, atol=1e-8)
    assert np.allclose(element.l2_projector(dofs).coeffs, p.coeffs, atol=1e-8)
    for order in range(1, m + 1):
        for alpha, g in element.grad_moment_projection(dofs, order).items():
            exact = p.differentiate(alpha).to_degree(g.degree)
            assert np.allclose(g.coeffs, exact.coeffs, atol=1e-7)


@pytest.mark.parametrize("m,k", [(1, 1), (1, 2), (1, 3), (2, 2), (2, 3)])
def test_cube_projectors_reproduce_polynomials(unit_cube, make_element, rng, m, k):
    element = make_element(unit_cube, m, k)
    p = random_poly(element, rng)
    dofs = element.dof_map(p)
    assert np.allclose(element.pi_projector(dofs).coeffs, p.coeffs, atol=1e-8)
    assert np.allclose(element.l2_projector(dofs).coeffs, p.coeffs, atol=1e-8)
    for alpha, g in element.grad_moment_projection(dofs, m).items():
        assert g.degree == k - m + 1
        expected = p.differentiate(alpha).to_degree(g.degree)
        assert np.allclose(g.coeffs, expected.coeffs, atol=1e-7)


def test_hat_function_projections(unit_square, make_element):
    element = make_element(unit_square, 1, 1)
    dofs = [1.0, 0.0, 0.0, 0.0]
    points = np.array([[0.0, 0.0], [1.0, 0.0], [0.3, 0.7], [1.0, 1.0]])
    local = element.geometry.to_local(points)
    x, y = points[:, 0], points[:, 1]
    assert np.allclose(element.pi_projector(dofs)(local), 0.75 - x / 2 - y / 2)
    grads = element.grad_moment_projection(dofs, 1)
    assert np.allclose(grads[(1, 0)](local), y - 1.0)
    assert np.allclose(grads[(0, 1)](local), x - 1.0)


@pytest.mark.parametrize("m,k", [(1, 2), (1, 3), (2, 4)])
def test_projector_kernel_keeps_interior_moments(pentagon, make_element, rng, m, k):
    element = make_element(pentagon, m, k)
    w = rng.standard_normal(element.size)
    v = w - element.D @ element.PiStar @ w
    assert np.allclose(element.PiStar @ v, 0.0, atol=1e-9)
    assert np.allclose(element.Q @ v, element.Cint @ v, atol=1e-9)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_l2_projector_equals_energy_projector_when_k_is_m(pentagon, make_element, m):
    element = make_element(pentagon, m, m)
    assert np.allclose(element.Q, element.PiStar)


# =============================================================================
# TRACES
# =============================================================================

def test_linear_edge_traces(unit_square, make_element):
    element = make_element(unit_square, 1, 1)
    p = element.project_function(lambda pts: 1.0 + 2.0 * pts[:, 0] - pts[:, 1], 1)
    dofs = element.dof_map(p)
    ts = np.linspace(-0.5, 0.5, 5)
    for face in element.geometry.faces[1]:
        trace = element.edge_trace_1d(dofs, face.key[1])
        assert np.allclose(trace(ts[:, None]), p(edge_points(face, ts)))


def test_hermite_edge_traces(triangle, make_element, rng):
    element = make_element(triangle, 2, 3)
    p = random_poly(element, rng)
    dofs = element.dof_map(p)
    for face in element.geometry.faces[1]:
        ts = np.linspace(-0.5, 0.5, 6) * face.diameter
        local = edge_points(face, ts)
        value = element.edge_trace_1d(dofs, face.key[1], order=0)
        assert np.allclose(value(ts[:, None]), p(local), atol=1e-9)
        nu = face.normals[0]
        normal = nu[0] * p.differentiate((1, 0))(local) + nu[1] * p.differentiate((0, 1))(local)
        slope = element.edge_trace_1d(dofs, face.key[1], order=1)
        assert np.allclose(slope(ts[:, None]), normal, atol=1e-8)
    with pytest.raises(ValueError):
        element.edge_trace_1d(dofs, 0, order=2)


def test_interval_hermite_trace(make_element, rng):
    mesh = generate_mesh("interval", 1)
    element = make_element(mesh, 2, 3)
    p = random_poly(element, rng)
    dofs = element.dof_map(p)
    ts = np.linspace(-0.5, 0.5, 7)[:, None]
    assert np.allclose(element.edge_trace_1d(dofs)(ts), p(ts))
    assert np.allclose(element.edge_trace_1d(dofs, order=1)(ts), p.differentiate((1,))(ts))


@pytest.mark.parametrize("m,k", [(1, 2), (2, 3), (3, 5)])
def test_boundary_gradient_traces_are_exact(pentagon, make_element, rng, m, k):
    element = make_element(pentagon, m, k)
    p = random_poly(element, rng)
    dofs = element.dof_map(p)
    for face in element.geometry.faces[1]:
        ts = np.linspace(-0.4, 0.4, 5) * face.diameter
        local = edge_points(face, ts)
        for order in range(m):
            for alpha, trace in element.boundary_grad_projection(dofs, face.key[1], order).items():
                assert np.allclose(trace(ts[:, None]), p.differentiate(alpha)(local), atol=1e-7)


def test_cube_face_traces_are_exact(unit_cube, make_element, rng):
    element = make_element(unit_cube, 2, 3)
    p = random_poly(element, rng)
    dofs = element.dof_map(p)
    for face in element.geometry.faces[1]:
        s = rng.uniform(-0.3, 0.3, size=(4, 2))
        local = face.center + s @ face.tangents
        for order in range(2):
            for alpha, trace in element.boundary_grad_projection(dofs, face.key[1], order).items():
                assert np.allclose(trace(s), p.differentiate(alpha)(local), atol=1e-7)


def test_face_subelement_dofs_restrict_the_trace(unit_cube, make_element, rng):
    element = make_element(unit_cube, 1, 2)
    p = random_poly(element, rng)
    dofs = element.dof_map(p)
    for face in element.geometry.faces[1]:
        F = face.key[1]
        sub = element.builder.face_element(F, 1, 2)
        restricted = sub.project_function(lambda pts: p(element.geometry.to_local(pts)), 2)
        expected = sub.dof_map(restricted).values
        assert np.allclose(element.face_subelement_dofs(dofs, F, (0,)).values, expected, atol=1e-9)


def test_face_subelement_normal_derivative(unit_cube, make_element):
    element = make_element(unit_cube, 2, 3)
    v = element.project_function(lambda pts: pts.sum(axis=1), 3)
    dofs = element.dof_map(v)
    for face in element.geometry.faces[1]:
        nu = unit_cube.entity(*face.key).frame.normals[0]
        sub_dofs = element.face_subelement_dofs(dofs, face.key[1], (1,))
        assert sub_dofs.layout.size == 9
        assert np.allclose(sub_dofs.values, nu.sum(), atol=1e-9)
    with pytest.raises(ValueError):
        element.face_subelement_dofs(dofs, 0, (2,))


def test_face_elements_are_shared(unit_cube):
    builder = ElementBuilder(unit_cube, ElementConfig(3, 2, 3))
    builder.element(0)
    assert builder.num_face_elements == 6 * 2
    assert builder.face_element(0, 1, 2) is builder.face_element(0, 1, 2)


# =============================================================================
# STABILIZATION AND LOCAL FORM
# =============================================================================

def test_stabilization_of_bilinear_square(unit_square, make_element):
    assert np.allclose(make_element(unit_square, 1, 1).stabilization, np.eye(4))


def test_stabilization_weights(triangle, make_element):
    element = make_element(triangle, 2, 3)
    h = math.sqrt(2.0)
    diag = np.diag(element.S)
    for i, desc in enumerate(element.layout.descriptors):
        if isinstance(desc, VertexDeriv):
            expected = h ** -2 if desc.alpha.order == 0 else 1.0
        else:
            expected = triangle.entity(*desc.entity).measure / h
        assert diag[i] == pytest.approx(expected)


@pytest.mark.parametrize("m,k", [(1, 1), (1, 3), (2, 3), (3, 4)])
def test_local_form_is_consistent(l_shape, make_element, rng, m, k):
    element = make_element(l_shape, m, k)
    p, q = random_poly(element, rng), random_poly(element, rng)
    discrete = element.dof_map(p).values @ element.A @ element.dof_map(q).values
    assert discrete == pytest.approx(energy_by_quadrature(element, p, q), rel=1e-8, abs=1e-8)


@pytest.mark.parametrize("mesh_name,m,k", [
    ("unit_square", 1, 1), ("pentagon", 2, 3), ("l_shape", 3, 3), ("unit_cube", 2, 2),
])
def test_local_form_is_positive_definite(request, make_element, mesh_name, m, k):
    mesh = request.getfixturevalue(mesh_name)
    element = make_element(mesh, m, k)
    assert np.allclose(element.A, element.A.T)
    one = element.dof_map(PolyCoeffs(element.basis, np.eye(element.basis.size)[0])).values
    assert one @ element.A @ one == pytest.approx(mesh.entity(0, 0).measure)
    eigenvalues = np.linalg.eigvalsh(element.A)
    assert eigenvalues.min() > 1e-10 * eigenvalues.max()


def test_load_vector_of_constant(pentagon, make_element):
    element = make_element(pentagon, 1, 2)
    one = element.dof_map(PolyCoeffs(element.basis, np.eye(element.basis.size)[0])).values
    load = element.load_vector(lambda pts: np.ones(len(pts)))
    assert one @ load == pytest.approx(pentagon.entity(0, 0).measure)


def test_debug_dump(unit_square, make_element):
    data = make_element(unit_square, 1, 1).to_dict()
    assert data["entity"] == [0, 0]
    assert len(data["dofs"]) == 4
    assert np.allclose(data["S"], 1.0)
    assert np.array(data["A_loc"]).shape == (4, 4)


# =============================================================================
# SUPPORT MATRIX
# =============================================================================

@pytest.mark.parametrize("mesh_kind,n,m,k", [
    ("cube_grid", 3, 3, 3), ("cube_grid", 3, 1, 4), ("square_grid", 2, 1, 5), ("square_grid", 2, 4, 4),
])
def test_unsupported_elements(mesh_kind, n, m, k):
    with pytest.raises(UnsupportedElementError):
        ElementBuilder(generate_mesh(mesh_kind, 1), ElementConfig(n, m, k))


def test_dimension_mismatch():
    with pytest.raises(UnsupportedElementError, match="does not match"):
        ElementBuilder(generate_mesh("square_grid", 1), ElementConfig(3, 1, 1))


def test_k_below_m_is_rejected():
    with pytest.raises(ValueError, match="k >= m"):
        ElementConfig(2, 2, 1)


# =============================================================================
# RANDOM STAR-SHAPED ELEMENTS
# =============================================================================

def random_star_polygon(rng, scale=1.0):
    """Polygon star-shaped about its seed point: jittered angles, radii in [0.6, 1]"""
    sides = int(rng.integers(4, 9))
    angles = 2.0 * np.pi * (np.arange(sides) + rng.uniform(-0.3, 0.3, sides)) / sides
    radii = rng.uniform(0.6, 1.0, sides)
    shift = rng.uniform(-5.0, 5.0, 2)
    vertices = shift + scale * radii[:, None] * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return from_polygons(vertices, [list(range(sides))])


def dof_orders(element):
    return np.array([0 if isinstance(d, InteriorMoment) else d.alpha.order
                     for d in element.layout.descriptors])


@pytest.mark.parametrize("m,k", [(1, 1), (1, 4), (2, 2), (2, 5), (3, 3), (3, 6)])
def test_projector_reproduction_on_random_polygons(m, k):
    rng = np.random.default_rng(100 * m + k)
    for scale in (0.01, 0.1, 1.0, 10.0):
        for _ in range(3):
            element = ElementBuilder(random_star_polygon(rng, scale), ElementConfig(2, m, k)).element(0)
            p = random_poly(element, rng)
            dofs = element.dof_map(p)
            error = np.linalg.norm(element.pi_projector(dofs).coeffs - p.coeffs)
            assert error <= 1e-9 * np.linalg.norm(p.coeffs)


@pytest.mark.parametrize("m,k", [(1, 2), (2, 3), (3, 4)])
def test_dof_map_has_full_column_rank(m, k):
    rng = np.random.default_rng(7)
    for scale in (0.01, 1.0, 10.0):
        element = ElementBuilder(random_star_polygon(rng, scale), ElementConfig(2, m, k)).element(0)
        assert np.linalg.matrix_rank(element.D) == element.basis.size


@pytest.mark.parametrize("m,k", [(1, 1), (1, 2), (2, 3), (2, 2)])
def test_cube_dof_map_has_full_column_rank(unit_cube, make_element, m, k):
    element = make_element(unit_cube, m, k)
    assert np.linalg.matrix_rank(element.D) == element.basis.size


@pytest.mark.parametrize("m,k", [(1, 3), (2, 4), (3, 5)])
def test_projectors_commute_with_dilation(m, k):
    rng = np.random.default_rng(11)
    sides = 6
    angles = 2.0 * np.pi * (np.arange(sides) + rng.uniform(-0.3, 0.3, sides)) / sides
    base = rng.uniform(0.6, 1.0, sides)[:, None] * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    config = ElementConfig(2, m, k)
    small = ElementBuilder(from_polygons(base, [list(range(sides))]), config).element(0)
    for s in (0.05, 3.0):
        large = ElementBuilder(from_polygons(s * base + 2.0, [list(range(sides))]), config).element(0)
        assert [d.describe() for d in large.layout.descriptors] == \
            [d.describe() for d in small.layout.descriptors]
        # Order-j dof functionals pick up s^{-j}; scaled-monomial coefficients are unchanged
        factors = float(s) ** (-dof_orders(small))
        w = rng.standard_normal(small.size)
        assert np.allclose(large.pi_projector(factors * w).coeffs, small.pi_projector(w).coeffs,
                           rtol=1e-8, atol=1e-8)
        assert np.allclose(large.l2_projector(factors * w).coeffs, small.l2_projector(w).coeffs,
                           rtol=1e-8, atol=1e-8)

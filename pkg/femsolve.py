#!/usr/bin/env python3
"""
Global virtual element space, assembly, solve, interpolation and error norms

Entity dof blocks are numbered vertices first, then faces by decreasing
co-dimension, then elements, each in index order. Element matrices are built
in a thread pool and scattered in element order so the assembled system does
not depend on the thread count.
"""

import sys
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy import linalg
from tqdm import tqdm

from cases import ManufacturedCase
from config import CONFIG
from element import (
    DofLayout,
    ElementBuilder,
    FaceMoment,
    InteriorMoment,
    LocalElement,
    VertexDeriv,
    entity_dof_count,
)
from meshgeom import PolytopalMesh
from models import ElementConfig, ErrorReport
from tensoralg import multi_indices, multiplicity

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12


class SolverError(RuntimeError):
    """Raised when the global system is not SPD or the solve does not converge"""

    def __init__(self, message: str, condition: Optional[float] = None):
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)
        self.condition = condition


def _progress(items: Iterable, total: int, desc: str):
    return tqdm(items, total=total, desc=desc, unit="el", leave=False,
                disable=not sys.stderr.isatty())


def parallel_map(fn: Callable, items: List, threads: Optional[int] = None, desc: str = "Elements") -> List:
    """Ordered map over a thread pool"""
    threads = threads or CONFIG["VEM_THREADS"]
    if threads <= 1:
        return list(_progress(map(fn, items), len(items), desc))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(_progress(pool.map(fn, items), len(items), desc))


# =============================================================================
# GLOBAL SPACE
# =============================================================================

class GlobalDofMap:
    """Global dof ranges per mesh entity and element-to-global index arrays"""

    def __init__(self, mesh: PolytopalMesh, config: ElementConfig):
        self.mesh = mesh
        self.config = config
        self.ranges: Dict[Tuple[int, int], Tuple[int, int]] = {}
        offset = 0
        for codim in range(mesh.dim, -1, -1):
            count = entity_dof_count(mesh.dim, config.m, config.k, codim)
            for index in range(mesh.num(codim)):
                self.ranges[(codim, index)] = (offset, offset + count)
                offset += count
        self.size = offset

    def element_dofs(self, layout: DofLayout) -> np.ndarray:
        """Global indices of an element's local dofs"""
        out = np.empty(layout.size, dtype=int)
        for key, (start, stop) in layout.entity_ranges.items():
            gstart, gstop = self.ranges[key]
            if gstop - gstart != stop - start:
                raise ValueError(f"Entity {key} has {stop - start} local and {gstop - gstart} global dofs")
            out[start:stop] = np.arange(gstart, gstop)
        return out

    def block(self, values: np.ndarray, codim: int, index: int) -> np.ndarray:
        start, stop = self.ranges[(codim, index)]
        return values[start:stop]


class VirtualElementSpace:
    """All local elements of one mesh with their global dof indices"""

    def __init__(self, mesh: PolytopalMesh, config: ElementConfig, threads: Optional[int] = None):
        self.mesh = mesh
        self.config = config
        self.threads = threads or CONFIG["VEM_THREADS"]
        self.builder = ElementBuilder(mesh, config)
        self.dofmap = GlobalDofMap(mesh, config)
        self.elements: List[LocalElement] = parallel_map(
            self.builder.element, list(range(mesh.num_elements)), self.threads, "Elements")
        self.element_dofs = [self.dofmap.element_dofs(e.layout) for e in self.elements]
        worst = max(e.condition for e in self.elements)
        logger.info(f"Built {mesh.num_elements} elements ({config.label}), "
                    f"{self.dofmap.size} global dofs, worst projector condition {worst:.2e}")

    @property
    def size(self) -> int:
        return self.dofmap.size

    def local_values(self, K: int, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.element_dofs[K]]


@dataclass
class LinearSystem:
    A: sps.csr_matrix
    b: np.ndarray
    space: Optional[VirtualElementSpace] = None
    x: Optional[np.ndarray] = None
    residual: Optional[float] = None
    solver: Optional[str] = None


def assemble(mesh: PolytopalMesh, config: ElementConfig, f: Callable[[np.ndarray], np.ndarray],
             threads: Optional[int] = None, quad_degree: Optional[int] = None,
             space: Optional[VirtualElementSpace] = None) -> LinearSystem:
    """
    Assemble a_h(u, v) = <f, v> with <f, v> = sum_K (f, Q_k v)_K

    Args:
        mesh: the mesh
        config: (n, m, k)
        f: load, evaluated at ambient points (npts x n)
        threads: worker threads for the element loop
        quad_degree: quadrature degree for the load (default 2k + VEM_QUAD_EXTRA)
        space: reuse an already built space

    Returns:
        LinearSystem with a CSR matrix
    """
    space = space or VirtualElementSpace(mesh, config, threads)
    loads = parallel_map(lambda e: e.load_vector(f, quad_degree), space.elements, space.threads, "Load")

    size = sum(e.size ** 2 for e in space.elements)
    rows_I = np.empty(size, dtype=int)
    cols_J = np.empty(size, dtype=int)
    data_V = np.empty(size)
    b = np.zeros(space.size)
    idx = 0
    for element, dofs, load in zip(space.elements, space.element_dofs, loads):
        cols = np.tile(dofs, (dofs.size, 1))
        loc_idx = slice(idx, idx + cols.size)
        rows_I[loc_idx] = cols.T.ravel()
        cols_J[loc_idx] = cols.ravel()
        data_V[loc_idx] = element.A.ravel()
        idx += cols.size
        np.add.at(b, dofs, load)

    A = sps.coo_matrix((data_V, (rows_I, cols_J)), shape=(space.size, space.size)).tocsr()
    asym = abs(A - A.T).max() if A.nnz else 0.0
    if asym > SYMMETRY_TOL * max(abs(A).max(), 1.0):
        logger.warning(f"Assembled matrix is not symmetric (max deviation {asym:.3e})")
    logger.info(f"Assembled system: {space.size} dofs, {A.nnz} nonzeros")
    return LinearSystem(A, b, space)


# =============================================================================
# SOLVE
# =============================================================================

def condition_estimate(A) -> float:
    """Spectral condition number, exact for small matrices, Lanczos estimate otherwise"""
    try:
        if A.shape[0] <= CONFIG["VEM_DENSE_LIMIT"]:
            dense = A.toarray() if sps.issparse(A) else np.asarray(A)
            return float(np.linalg.cond(dense))
        largest = spla.eigsh(A, k=1, which="LA", return_eigenvectors=False)[0]
        smallest = spla.eigsh(A, k=1, which="SA", return_eigenvectors=False)[0]
        return float(largest / smallest) if smallest > 0 else math.inf
    except Exception as e:
        logger.debug(f"Condition estimate failed: {e}")
        return math.nan


def _dense_cholesky(A, b) -> np.ndarray:
    dense = A.toarray() if sps.issparse(A) else np.asarray(A, dtype=float)
    try:
        factor = linalg.cho_factor(dense)
    except linalg.LinAlgError as e:
        raise SolverError(f"Matrix is not positive definite: {e}", condition_estimate(A)) from e
    return linalg.cho_solve(factor, b)


def _jacobi_cg(A, b, rtol: float, maxiter: int) -> Tuple[np.ndarray, int]:
    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise SolverError("Matrix has nonpositive diagonal entries; it is not positive definite")
    preconditioner = sps.diags(1.0 / diag)
    return spla.cg(A, b, rtol=rtol, maxiter=maxiter, M=preconditioner)


def solve(system: LinearSystem, method: Optional[str] = None,
          rtol: Optional[float] = None, maxiter: Optional[int] = None) -> np.ndarray:
    """
    Solve the SPD system

    `auto` uses a dense Cholesky factorization up to VEM_DENSE_LIMIT dofs and
    Jacobi-preconditioned CG above, falling back to sparse LU when CG misses
    the tolerance. `cg` raises instead of falling back.
    """
    method = (method or CONFIG["VEM_SOLVER"]).lower()
    rtol = rtol or CONFIG["VEM_SOLVER_RTOL"]
    maxiter = maxiter or CONFIG["VEM_SOLVER_MAXITER"]
    A = sps.csr_matrix(system.A)
    b = np.asarray(system.b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.size:
        raise SolverError(f"System shapes do not match: A {A.shape}, b {b.shape}")
    asym = abs(A - A.T).max() if A.nnz else 0.0
    if asym > 1e-10 * max(abs(A).max(), 1.0):
        raise SolverError(f"Matrix is not symmetric (max deviation {asym:.3e})")

    if method == "auto":
        method = "dense" if A.shape[0] <= CONFIG["VEM_DENSE_LIMIT"] else "cg-fallback"

    if method == "dense":
        x = _dense_cholesky(A, b)
        used = "dense"
    elif method == "direct":
        x = spla.splu(A.tocsc()).solve(b)
        used = "direct"
    elif method in ("cg", "cg-fallback"):
        x, info = _jacobi_cg(A, b, rtol, maxiter)
        used = "cg"
        residual = _relative_residual(A, x, b)
        if info != 0 or residual > rtol:
            if method == "cg":
                raise SolverError(
                    f"CG did not reach rtol {rtol:g} in {maxiter} iterations "
                    f"(relative residual {residual:.3e})", condition_estimate(A))
            logger.warning(f"CG stopped at relative residual {residual:.3e}; falling back to sparse LU")
            x = spla.splu(A.tocsc()).solve(b)
            used = "direct"
    else:
        raise SolverError(f"Unknown solver {method!r}")

    system.x = x
    system.residual = _relative_residual(A, x, b)
    system.solver = used
    logger.info(f"Solved with {used}: relative residual {system.residual:.3e}")
    return x


def _relative_residual(A, x: np.ndarray, b: np.ndarray) -> float:
    norm_b = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return float(r / norm_b) if norm_b > 0 else float(r)


# =============================================================================
# INTERPOLATION AND ERRORS
# =============================================================================

def interpolate(u: ManufacturedCase, mesh: PolytopalMesh, config: ElementConfig,
                space: Optional[VirtualElementSpace] = None, exact_vertex_data: bool = False,
                quad_degree: Optional[int] = None) -> np.ndarray:
    """
    I_h u: every dof is the average over incident elements of the functional
    applied to Q_k^K u

    With exact_vertex_data the vertex dofs take the exact derivatives of u
    instead of the averaged projections.
    """
    space = space or VirtualElementSpace(mesh, config)

    def local(element: LocalElement) -> np.ndarray:
        q = element.project_function(u, config.k, quad_degree)
        return element.dof_matrix(q.basis) @ q.coeffs

    sums = np.zeros(space.size)
    counts = np.zeros(space.size)
    for dofs, values in zip(space.element_dofs, parallel_map(local, space.elements, space.threads, "Interpolate")):
        np.add.at(sums, dofs, values)
        np.add.at(counts, dofs, 1.0)
    values = sums / counts

    if exact_vertex_data:
        for element, dofs in zip(space.elements, space.element_dofs):
            for row, desc in enumerate(element.layout.descriptors):
                if isinstance(desc, VertexDeriv):
                    values[dofs[row]] = u.derivative(mesh.vertices[desc.vertex][None, :], desc.alpha)[0]
    return values


def _element_errors(element: LocalElement, local: np.ndarray, u: ManufacturedCase,
                    quad_degree: int) -> Tuple[np.ndarray, float, float]:
    geometry = element.geometry
    rule = geometry.volume_quadrature(quad_degree)
    ambient = geometry.ambient_volume_quadrature(quad_degree).points
    pi = element.pi_projector(local)
    seminorms = np.zeros(element.m + 1)
    for j in range(element.m + 1):
        for gamma in multi_indices(element.dim, j):
            diff = u.derivative(ambient, gamma) - pi.differentiate(gamma)(rule.points)
            seminorms[j] += multiplicity(gamma) * rule.integrate(diff ** 2)
    q = element.l2_projector(local)
    q_error = rule.integrate((u(ambient) - q(rule.points)) ** 2)

    fq = element.project_function(u.load, element.k, quad_degree)
    osc = element.h ** (2 * element.m) * rule.integrate((u.load(ambient) - fq(rule.points)) ** 2)
    return seminorms, float(q_error), float(osc)


def error_norms(u: ManufacturedCase, values: np.ndarray, space: VirtualElementSpace,
                quad_degree: Optional[int] = None, system: Optional[LinearSystem] = None) -> ErrorReport:
    """
    Broken errors of Pi_h u_h against u: ||.||_0, |.|_{j,h} for j <= m, the
    L2 error of Q_h u_h and the data oscillation of the load
    """
    config = space.config
    quad_degree = quad_degree or u.error_quadrature_degree(config.k, CONFIG["VEM_QUAD_EXTRA"])
    results = parallel_map(
        lambda K: _element_errors(space.elements[K], space.local_values(K, values), u, quad_degree),
        list(range(space.mesh.num_elements)), space.threads, "Errors",
    )
    seminorms = np.zeros(config.m + 1)
    q_error = 0.0
    osc = 0.0
    for s, qe, oe in results:
        seminorms += s
        q_error += qe
        osc += oe
    seminorms = np.sqrt(np.maximum(seminorms, 0.0))
    report = ErrorReport(
        h=space.mesh.h,
        num_dofs=space.size,
        l2_error=float(seminorms[0]),
        hm_error=float(seminorms[config.m]),
        seminorms=[float(s) for s in seminorms],
        l2_projector_error=math.sqrt(max(q_error, 0.0)),
        osc=math.sqrt(max(osc, 0.0)),
        residual=system.residual if system is not None else None,
        solver=system.solver if system is not None else None,
    )
    logger.info(f"h={report.h:.4g} N_h={report.num_dofs} e_L2={report.l2_error:.4e} "
                f"e_Hm={report.hm_error:.4e} osc={report.osc:.3e}")
    return report


def interpolation_errors(u: ManufacturedCase, space: VirtualElementSpace,
                         exact_vertex_data: bool = False,
                         quad_degree: Optional[int] = None) -> ErrorReport:
    """Errors |u - Pi_h I_h u|_{j,h} for all j <= m"""
    values = interpolate(u, space.mesh, space.config, space, exact_vertex_data)
    return error_norms(u, values, space, quad_degree)


def osc(f: Callable[[np.ndarray], np.ndarray], space: VirtualElementSpace,
        quad_degree: Optional[int] = None) -> float:
    """(sum_K h_K^{2m} ||f - Q_k^K f||_{0,K}^2)^{1/2}"""
    m, k = space.config.m, space.config.k
    quad_degree = quad_degree or 2 * k + 2 * CONFIG["VEM_QUAD_EXTRA"]
    total = 0.0
    for element in space.elements:
        rule = element.geometry.volume_quadrature(quad_degree)
        ambient = element.geometry.ambient_volume_quadrature(quad_degree).points
        fq = element.project_function(f, k, quad_degree)
        total += element.h ** (2 * m) * rule.integrate((f(ambient) - fq(rule.points)) ** 2)
    return math.sqrt(max(total, 0.0))


# =============================================================================
# POLYNOMIAL-SUBSPACE DIAGNOSTICS
# =============================================================================

def seminorm_squares(element: LocalElement, coeffs: np.ndarray, max_order: int) -> np.ndarray:
    """|p|_j^2 over the element for j = 0..max_order, p given in the element basis"""
    out = np.zeros(max_order + 1)
    for j in range(max_order + 1):
        for gamma in multi_indices(element.dim, j):
            d = element.basis.derivative(gamma) @ coeffs
            out[j] += multiplicity(gamma) * d @ element.M @ d
    return out


def dof_norm_weights(element: LocalElement) -> np.ndarray:
    """Diagonal of the scaled dof norm: |K| inside, h^{n+2j} w_alpha at vertices, h^{r+2|alpha|}|F| on faces"""
    h, d = element.h, element.dim
    mesh = element.geometry.mesh
    weights = np.zeros(element.size)
    for i, desc in enumerate(element.layout.descriptors):
        if isinstance(desc, VertexDeriv):
            weights[i] = multiplicity(desc.alpha) * h ** (d + 2 * desc.alpha.order)
        elif isinstance(desc, FaceMoment):
            weights[i] = h ** (desc.codim + 2 * desc.alpha.order) * mesh.entity(*desc.entity).measure
        elif isinstance(desc, InteriorMoment):
            weights[i] = element.geometry.measure
    return weights


def norm_equivalence_ratio(element: LocalElement, coeffs: np.ndarray) -> Tuple[float, float]:
    """(||p||_0^2, scaled dof norm of p) for p in the element basis"""
    dofs = element.D @ coeffs
    lhs = float(coeffs @ element.M @ coeffs)
    rhs = float(dofs @ (dof_norm_weights(element) * dofs))
    return lhs, rhs


def vertex_sum_ratio(element: LocalElement, coeffs: np.ndarray, order: int) -> Tuple[float, float]:
    """(|p|_j^2, h^2 |p|_{j+1}^2 + h^n |sum_delta grad^j p(delta)|^2)"""
    h, d = element.h, element.dim
    semis = seminorm_squares(element, coeffs, order + 1)
    points = np.array([element.geometry.vertex_points[v] for v in element.geometry.vertices])
    values = element.basis.evaluate(points)
    vertex_term = 0.0
    for gamma in multi_indices(d, order):
        total = float(np.sum(values @ element.basis.derivative(gamma) @ coeffs))
        vertex_term += multiplicity(gamma) * total ** 2
    return float(semis[order]), float(h ** 2 * semis[order + 1] + h ** d * vertex_term)


def sample_polynomial_constants(mesh: PolytopalMesh, config: ElementConfig, samples: int = 20,
                    seed: Optional[int] = None, space: Optional[VirtualElementSpace] = None) -> dict:
    """
    Inverse-inequality and norm-equivalence constants sampled on random
    polynomials of P_k, the same coefficient vectors in every element's
    scaled basis
    """
    space = space or VirtualElementSpace(mesh, config)
    rng = np.random.default_rng(CONFIG["VEM_SEED"] if seed is None else seed)
    size = space.elements[0].basis.size
    coefficients = rng.standard_normal((samples, size))
    m = config.m

    c_inv = 0.0
    ratios: List[float] = []
    vertex_ratios: List[float] = []
    skipped = 0
    for element in space.elements:
        h = element.h
        for coeffs in coefficients:
            semis = np.sqrt(np.maximum(seminorm_squares(element, coeffs, m), 0.0))
            for i in range(m + 1):
                for j in range(i + 1, m + 1):
                    if semis[i] <= 1e-14 * max(semis[0], 1e-300):
                        skipped += 1
                        continue
                    c_inv = max(c_inv, h ** (j - i) * semis[j] / semis[i])
            lhs, rhs = norm_equivalence_ratio(element, coeffs)
            if rhs > 0.0:
                ratios.append(lhs / rhs)
            for j in range(m):
                a, b = vertex_sum_ratio(element, coeffs, j)
                if b > 0.0:
                    vertex_ratios.append(a / b)

    def summary(values: List[float]) -> Dict[str, Optional[float]]:
        if not values:
            return {"min": None, "max": None}
        return {"min": float(min(values)), "max": float(max(values))}

    result = {
        "h": mesh.h,
        "num_elements": mesh.num_elements,
        "samples": samples,
        "skipped": skipped,
        "inverse_constant": c_inv,
        "norm_equivalence": summary(ratios),
        "vertex_sum": summary(vertex_ratios),
        "projector_condition_max": max(e.condition for e in space.elements),
    }
    logger.info(f"Polynomial-subspace constants at h={mesh.h:.4g}: c_inv={c_inv:.4g}, "
                f"norm ratio {result['norm_equivalence']}")
    return result

#!/usr/bin/env python3
"""
Run drivers: single solves, interpolation checks and convergence families
"""

import sys
import math
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from cases import CaseError, ManufacturedCase, make_case
from femsolve import (
    VirtualElementSpace,
    assemble,
    error_norms,
    interpolation_errors,
    solve,
)
from mesh_io import generate_mesh, read_mesh
from meshgeom import PolytopalMesh
from models import ConvergenceRow, ErrorReport, RunConfig
from results import ResultsWriter

logger = logging.getLogger(__name__)


def observed_rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> Optional[float]:
    """log(e_i / e_{i+1}) / log(h_i / h_{i+1}); None when undefined"""
    if e_coarse <= 0.0 or e_fine <= 0.0 or h_coarse <= 0.0 or h_fine <= 0.0 or h_coarse == h_fine:
        return None
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


def convergence_rows(reports: Sequence[ErrorReport]) -> List[ConvergenceRow]:
    rows = []
    for i, report in enumerate(reports):
        row = ConvergenceRow(report.h, report.num_dofs, report.l2_error, report.hm_error, report.osc)
        if i > 0:
            prev = reports[i - 1]
            row.rate_l2 = observed_rate(prev.l2_error, report.l2_error, prev.h, report.h)
            row.rate_hm = observed_rate(prev.hm_error, report.hm_error, prev.h, report.h)
        rows.append(row)
    return rows


class VemStudy:
    """Coordinates mesh loading, solving, error evaluation and export for one RunConfig"""

    def __init__(self, run: RunConfig, writer: Optional[ResultsWriter] = None):
        self.run = run
        self.config = run.element_config
        self.case: ManufacturedCase = make_case(run.case, run.n, run.m)
        self.writer = writer

    @property
    def tag(self) -> str:
        mesh = "file" if self.run.mesh_file else f"{self.run.mesh_kind}{self.run.mesh_size}"
        case = self.run.case.replace(":", "")
        return f"{mesh}_n{self.run.n}m{self.run.m}k{self.run.k}_{case}"

    def load_mesh(self, size: Optional[int] = None) -> PolytopalMesh:
        if self.run.mesh_file:
            mesh = read_mesh(self.run.mesh_file)
        else:
            mesh = generate_mesh(self.run.mesh_kind, size or self.run.mesh_size, seed=self.run.seed)
        if mesh.dim != self.run.n:
            raise ValueError(f"Mesh {self.run.mesh_label} is {mesh.dim}D but n={self.run.n}")
        return mesh

    def _banner(self, title: str):
        logger.info("=" * 60)
        logger.info(title)
        logger.info(f"Element: {self.config.label}")
        logger.info(f"Mesh: {self.run.mesh_label}")
        logger.info(f"Case: {self.case.name}")
        logger.info(f"Threads: {self.run.threads}, solver: {self.run.solver}")
        logger.info("=" * 60)

    def solve_on(self, mesh: PolytopalMesh) -> Tuple[VirtualElementSpace, np.ndarray, ErrorReport]:
        """Assemble, solve and measure the errors on one mesh"""
        if not self.case.solvable:
            raise CaseError(f"Case {self.case.name} is for interpolation checks only; use --interpolate")
        space = VirtualElementSpace(mesh, self.config, self.run.threads)
        system = assemble(mesh, self.config, self.case.load, quad_degree=self.run.quad_degree, space=space)
        values = solve(system, method=self.run.solver)
        report = error_norms(self.case, values, space, system=system)
        return space, values, report

    def interpolate_on(self, mesh: PolytopalMesh) -> ErrorReport:
        space = VirtualElementSpace(mesh, self.config, self.run.threads)
        return interpolation_errors(self.case, space, exact_vertex_data=self.run.exact_vertex_data,
                                    quad_degree=self.run.quad_degree)

    def run_solve(self, interpolate: bool = False) -> ErrorReport:
        """One solve (or interpolation check) on the configured mesh, exported when a writer is set"""
        self._banner("INTERPOLATION CHECK" if interpolate else "SOLVE")
        mesh = self.load_mesh()
        if interpolate:
            report = self.interpolate_on(mesh)
        else:
            space, values, report = self.solve_on(mesh)
            if self.writer:
                self.writer.write_solution(f"solution_{self.tag}.json", space.dofmap, values, self.run)
        if self.writer:
            self.writer.write_report(f"report_{self.tag}.json", report, self.run)

        logger.info("=" * 60)
        logger.info("RUN COMPLETE")
        logger.info("=" * 60)
        logger.info(f"h: {report.h:.4g}")
        logger.info(f"Dofs: {report.num_dofs}")
        logger.info(f"L2 error: {report.l2_error:.6e}")
        logger.info(f"H^{self.run.m} error: {report.hm_error:.6e}")
        if report.residual is not None:
            logger.info(f"Residual: {report.residual:.3e} ({report.solver})")
        logger.info("=" * 60)
        return report

    def run_convergence(self, sizes: Sequence[int], interpolate: bool = False) -> List[ConvergenceRow]:
        """Run a mesh family and tabulate observed rates"""
        if self.run.mesh_file:
            raise ValueError("A convergence study needs a generated mesh family, not a mesh file")
        self._banner(f"CONVERGENCE STUDY over sizes {list(sizes)}")
        reports = []
        for size in tqdm(sizes, desc="Meshes", unit="mesh", disable=not sys.stderr.isatty()):
            mesh = self.load_mesh(size)
            if interpolate:
                reports.append(self.interpolate_on(mesh))
            else:
                reports.append(self.solve_on(mesh)[2])
        rows = convergence_rows(reports)
        if self.writer:
            suffix = "_interp" if interpolate else ""
            self.writer.write_convergence_csv(f"convergence_{self.tag}{suffix}.csv", rows)

        logger.info("=" * 60)
        logger.info("CONVERGENCE SUMMARY")
        logger.info("=" * 60)
        for row in rows:
            logger.info(f"h={row.h:.4e} N_h={row.num_dofs:7d} e_L2={row.l2_error:.3e} "
                        f"({ConvergenceRow.format_rate(row.rate_l2)}) e_Hm={row.hm_error:.3e} "
                        f"({ConvergenceRow.format_rate(row.rate_hm)})")
        logger.info("=" * 60)
        return rows

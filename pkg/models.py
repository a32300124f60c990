#!/usr/bin/env python3
"""
Data models for the polytopal virtual element engine
"""

import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional

from config import CONFIG


@dataclass(frozen=True)
class ElementConfig:
    """Space dimension n, conformity order m and polynomial degree k"""
    n: int
    m: int
    k: int

    def __post_init__(self):
        for name in ("n", "m", "k"):
            if not isinstance(getattr(self, name), int):
                raise ValueError(f"{name} must be an integer, got {getattr(self, name)!r}")
        if self.n < 1 or self.m < 1:
            raise ValueError(f"Need n >= 1 and m >= 1, got n={self.n}, m={self.m}")
        if self.k < self.m:
            raise ValueError(f"Need k >= m, got m={self.m}, k={self.k}")

    @property
    def label(self) -> str:
        return f"n={self.n} m={self.m} k={self.k}"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunConfig:
    """One run of the engine: element, mesh source, case and outputs"""
    n: int = 2
    m: int = 1
    k: int = 1
    mesh_kind: Optional[str] = "square_grid"
    mesh_size: int = 8
    mesh_file: Optional[str] = None
    case: str = "bump"
    quad_degree: Optional[int] = None
    output_dir: str = CONFIG["VEM_OUTPUT_DIR"]
    seed: int = CONFIG["VEM_SEED"]
    threads: int = CONFIG["VEM_THREADS"]
    solver: str = CONFIG["VEM_SOLVER"]
    exact_vertex_data: bool = False

    def __post_init__(self):
        # Validates the (n, m, k) triple
        self.element_config

    @property
    def element_config(self) -> ElementConfig:
        return ElementConfig(self.n, self.m, self.k)

    @property
    def mesh_label(self) -> str:
        if self.mesh_file:
            return self.mesh_file
        return f"{self.mesh_kind}({self.mesh_size})"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ElementDiagnostics:
    """Mesh-condition figures of one element"""
    index: int
    diameter: float
    star_shaped: bool
    rho: float
    chunkiness: float
    eta: float

    def to_dict(self) -> dict:
        data = asdict(self)
        if math.isinf(self.chunkiness):
            data["chunkiness"] = None
        return data


@dataclass
class MeshReport:
    """Result of check_mesh: star-shapedness, chunkiness and face-size ratios"""
    dimension: int
    num_elements: int
    h: float
    chunkiness_limit: float
    elements: List[ElementDiagnostics] = field(default_factory=list)
    face_chunkiness_max: Optional[float] = None

    @property
    def gamma_max(self) -> float:
        return max((e.chunkiness for e in self.elements), default=0.0)

    @property
    def eta_estimate(self) -> float:
        return max((e.eta for e in self.elements), default=0.0)

    @property
    def flagged(self) -> List[Dict]:
        out = []
        for e in self.elements:
            if not e.star_shaped:
                out.append({"element": e.index, "reason": "empty kernel"})
            elif e.chunkiness > self.chunkiness_limit:
                out.append({"element": e.index,
                            "reason": f"chunkiness {e.chunkiness:.3g} above {self.chunkiness_limit:g}"})
        return out

    @property
    def passed(self) -> bool:
        return not self.flagged

    def to_dict(self) -> dict:
        gamma = self.gamma_max
        return {
            "dimension": self.dimension,
            "num_elements": self.num_elements,
            "h": self.h,
            "chunkiness_limit": self.chunkiness_limit,
            "gamma_max": None if math.isinf(gamma) else gamma,
            "eta_estimate": self.eta_estimate,
            "face_chunkiness_max": self.face_chunkiness_max,
            "passed": self.passed,
            "flagged": self.flagged,
            "elements": [e.to_dict() for e in self.elements],
        }


@dataclass
class ErrorReport:
    """Errors of one discrete solution or interpolant against the exact one"""
    h: float
    num_dofs: int
    l2_error: float
    hm_error: float
    seminorms: List[float]
    l2_projector_error: float
    osc: float
    residual: Optional[float] = None
    solver: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "N_h": self.num_dofs,
            "e_L2": self.l2_error,
            "e_Hm": self.hm_error,
            "seminorms": list(self.seminorms),
            "e_L2_Q": self.l2_projector_error,
            "osc": self.osc,
            "residual": self.residual,
            "solver": self.solver,
        }


@dataclass
class ConvergenceRow:
    """One mesh of a convergence family with observed rates"""
    h: float
    num_dofs: int
    l2_error: float
    hm_error: float
    osc: float
    rate_l2: Optional[float] = None
    rate_hm: Optional[float] = None

    CSV_COLUMNS = ("h", "N_h", "e_L2", "rate_L2", "e_Hm", "rate_Hm", "osc")

    def to_csv_row(self) -> List[str]:
        def fmt(value):
            return "" if value is None else repr(float(value))
        return [fmt(self.h), str(self.num_dofs), fmt(self.l2_error), fmt(self.rate_l2),
                fmt(self.hm_error), fmt(self.rate_hm), fmt(self.osc)]

    @staticmethod
    def format_rate(rate: Optional[float]) -> str:
        return "  -  " if rate is None else f"{rate:5.2f}"

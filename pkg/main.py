#!/usr/bin/env python3
"""
Polytopal H^m-conforming virtual element engine
Main entry point for the application
"""

import os
import sys
import json
import logging
import argparse
from dataclasses import fields
from typing import List, Optional

import numpy as np
import sympy

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

# Add current directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config import CONFIG, SOLVER_CHOICES, configuration_status, validate_environment
from element import ElementBuilder, LocalElement
from femsolve import sample_polynomial_constants
from mesh_io import MESH_DIMENSIONS, MESH_KINDS, generate_mesh, read_mesh, write_mesh
from meshgeom import CHUNKINESS_LIMIT, PolytopalMesh, check_mesh
from models import ElementConfig, RunConfig
from polyspace import PolyCoeffs
from results import ResultsWriter
from setup_wizard import setup_wizard, check_requirements
from study import VemStudy

SYMBOLS = sympy.symbols("x y z")

# =============================================================================
# LOGGING SETUP
# =============================================================================

def setup_logging(verbose: bool = False):
    """Configure logging for the application"""
    log_level = logging.DEBUG if verbose else getattr(logging, CONFIG["VEM_LOG_LEVEL"], logging.INFO)

    handlers = [logging.StreamHandler()]
    if CONFIG["VEM_LOG_FILE"]:
        log_dir = os.path.dirname(CONFIG["VEM_LOG_FILE"])
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir)
        handlers.append(logging.FileHandler(CONFIG["VEM_LOG_FILE"]))

    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )

    return logging.getLogger(__name__)

# =============================================================================
# RUN CONFIGURATION
# =============================================================================

RUN_FLAGS = {
    "n": "n", "m": "m", "k": "k", "kind": "mesh_kind", "size": "mesh_size", "mesh": "mesh_file",
    "case": "case", "quad_degree": "quad_degree", "output_dir": "output_dir", "seed": "seed",
    "threads": "threads", "solver": "solver", "exact_vertex_data": "exact_vertex_data",
}


def load_toml(path: str) -> dict:
    """Run settings from a TOML file; keys are RunConfig field names"""
    with open(path, "rb") as f:
        data = tomllib.load(f)
    data = data.get("run", data)
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"{path}: unknown run settings {', '.join(unknown)}")
    return data


def build_run_config(args) -> RunConfig:
    """Defaults from CONFIG, overridden by --config TOML, overridden by flags"""
    values = {}
    if getattr(args, "config", None):
        values.update(load_toml(args.config))
    for flag, name in RUN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None and value is not False:
            values[name] = value
    if values.get("mesh_file"):
        values.setdefault("mesh_kind", None)
    elif "n" not in values and values.get("mesh_kind") in MESH_DIMENSIONS:
        values["n"] = MESH_DIMENSIONS[values["mesh_kind"]]
    return RunConfig(**values)


def load_mesh(args) -> PolytopalMesh:
    if getattr(args, "mesh", None):
        return read_mesh(args.mesh)
    if not args.kind or getattr(args, "size", None) is None:
        raise ValueError("Give --mesh FILE, or --kind KIND together with --size N")
    return generate_mesh(args.kind, args.size, seed=args.seed or 0)

# =============================================================================
# POLYNOMIAL INPUT AND OUTPUT
# =============================================================================

def polynomial_to_element(expression: str, element: LocalElement) -> PolyCoeffs:
    """Parse a polynomial in x, y, z into the element's scaled monomials"""
    n = element.dim
    symbols = SYMBOLS[:n]
    expr = sympy.sympify(expression, locals={str(s): s for s in symbols})
    extra = expr.free_symbols - set(symbols)
    if extra:
        raise ValueError(f"Polynomial uses unknown variables {sorted(map(str, extra))}")
    local = sympy.symbols(f"y0:{n}")
    center = element.geometry.entity.barycenter
    h = element.basis.scale
    shifted = sympy.expand(expr.subs({s: float(c) + h * y for s, c, y in zip(symbols, center, local)},
                                     simultaneous=True))
    poly = sympy.Poly(shifted, *local)
    basis = element.basis.with_degree(0 if poly.is_zero else poly.total_degree())
    coeffs = np.zeros(basis.size)
    for monom, c in poly.terms():
        coeffs[basis.indices.index(tuple(monom))] = float(c)
    return PolyCoeffs(basis, coeffs)


def polynomial_to_sympy(p: PolyCoeffs, element: LocalElement, tol: float = 1e-12):
    """Ambient-coordinate sympy expression of an element polynomial"""
    symbols = SYMBOLS[:element.dim]
    center = element.geometry.entity.barycenter
    expr = sum(
        float(c) * sympy.Mul(*[((s - float(x0)) / p.basis.scale) ** int(b)
                               for s, x0, b in zip(symbols, center, beta)])
        for c, beta in zip(p.coeffs, p.basis.indices)
    )
    expr = sympy.expand(sympy.sympify(expr))
    return expr.xreplace({a: 0 for a in expr.atoms(sympy.Float) if abs(a) < tol})

# =============================================================================
# COMMAND HANDLERS
# =============================================================================

def handle_make_mesh(args):
    """Handle make-mesh command"""
    mesh = generate_mesh(args.kind, args.n, seed=args.seed or 0)
    output = args.output or os.path.join("meshes", f"{args.kind}_{args.n}.json")
    write_mesh(mesh, output)
    print(f"Wrote {mesh.num_elements} elements to {output}")


def handle_check_mesh(args):
    """Handle check-mesh command"""
    mesh = load_mesh(args)
    report = check_mesh(mesh, args.chunkiness_limit).to_dict()
    if args.constants:
        config = ElementConfig(mesh.dim, args.m or 1, args.k or args.m or 1)
        report["polynomial_constants"] = sample_polynomial_constants(mesh, config, samples=args.samples, seed=args.seed)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.output:
        ResultsWriter(os.path.dirname(args.output) or ".").write_json(os.path.basename(args.output), report)
    print(text)


def handle_project(args):
    """Handle project command"""
    mesh = load_mesh(args)
    config = ElementConfig(mesh.dim, args.m, args.k)
    builder = ElementBuilder(mesh, config)
    element = builder.element(args.element)

    if args.poly is not None:
        dofs = element.dof_map(polynomial_to_element(args.poly, element)).values
    elif args.dofs is not None:
        dofs = np.array([float(v) for v in args.dofs.replace(",", " ").split()])
        if dofs.size != element.size:
            raise ValueError(f"Element has {element.size} dofs, got {dofs.size} values")
    else:
        dofs = np.zeros(element.size)

    print(f"Element {args.element}: {config.label}, {element.size} dofs, h = {element.h:.6g}")
    print(f"Pi v = {polynomial_to_sympy(element.pi_projector(dofs), element)}")
    print(f"Q v  = {polynomial_to_sympy(element.l2_projector(dofs), element)}")
    if args.matrices:
        print(json.dumps(element.to_dict(), indent=2))


def handle_solve(args):
    """Handle solve command"""
    run = build_run_config(args)
    study = VemStudy(run, ResultsWriter(run.output_dir))
    report = study.run_solve(interpolate=args.interpolate)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))


def handle_convergence(args):
    """Handle convergence command"""
    run = build_run_config(args)
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    if not sizes:
        raise ValueError("--sizes needs at least one mesh size")
    study = VemStudy(run, ResultsWriter(run.output_dir))
    rows = study.run_convergence(sizes, interpolate=args.interpolate)
    print(",".join(rows[0].CSV_COLUMNS))
    for row in rows:
        print(",".join(row.to_csv_row()))


def handle_validate(args):
    """Print each VEM_* setting with its status; True when nothing is an error"""
    rows = configuration_status()
    width = max(len(key) for key, _, _ in rows)
    print("VEM settings (environment and .env):")
    for key, value, status in rows:
        shown = "(not set)" if value in ("", None) else value
        print(f"  {key:<{width}}  {str(shown):<16} {status}")

    errors, warnings = validate_environment()
    for message in errors:
        print(f"error: {message}")
    for message in warnings:
        print(f"warning: {message}")
    print(f"{len(errors)} error(s), {len(warnings)} warning(s)")
    return not errors

# =============================================================================
# MAIN ENTRY POINT
# =============================================================================

def _add_mesh_source(parser: argparse.ArgumentParser):
    parser.add_argument('--mesh', type=str, help='Mesh JSON file')
    parser.add_argument('--kind', type=str, choices=MESH_KINDS, help='Generated mesh kind')
    parser.add_argument('--size', type=int, help='Subdivisions per axis of a generated mesh')
    parser.add_argument('--seed', type=int, help='Seed for randomized meshes and sampling')


def _add_run_options(parser: argparse.ArgumentParser):
    _add_mesh_source(parser)
    parser.add_argument('--n', type=int, help='Space dimension')
    parser.add_argument('--m', type=int, help='Conformity order (H^m)')
    parser.add_argument('--k', type=int, help='Polynomial degree, k >= m')
    parser.add_argument('--case', type=str, help='bump, trig or poly:<degree>')
    parser.add_argument('--quad-degree', type=int, dest='quad_degree', help='Load quadrature degree')
    parser.add_argument('--output-dir', type=str, dest='output_dir', help='Output directory')
    parser.add_argument('--threads', type=int, help='Worker threads')
    parser.add_argument('--solver', type=str, choices=SOLVER_CHOICES, help='Linear solver')
    parser.add_argument('--interpolate', action='store_true',
                        help='Measure |u - Pi_h I_h u| instead of solving')
    parser.add_argument('--exact-vertex-data', action='store_true', dest='exact_vertex_data',
                        help='Interpolate vertex dofs from exact derivatives')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Polytopal H^m-conforming virtual element engine',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s make-mesh --kind square_grid --n 4
  %(prog)s check-mesh --mesh meshes/square_grid_4.json
  %(prog)s project --kind square_grid --size 1 --m 1 --k 1 --dofs "1 0 0 0"
  %(prog)s solve --n 2 --m 1 --k 1 --kind square_grid --size 16
  %(prog)s convergence --n 2 --m 2 --k 3 --kind square_grid --sizes 4,8,16
  %(prog)s --setup            # Run setup wizard
        """
    )

    # Global options
    parser.add_argument('--setup', action='store_true',
                        help='Run interactive setup wizard')
    parser.add_argument('--validate', action='store_true',
                        help='Validate environment configuration')
    parser.add_argument('-v', '--verbose', action='store_true',
                        help='Verbose output')
    parser.add_argument('--config', type=str,
                        help='TOML file with run settings')

    subparsers = parser.add_subparsers(dest='command', help='Commands')

    make_parser = subparsers.add_parser('make-mesh', help='Generate a mesh file')
    make_parser.add_argument('--kind', type=str, required=True, choices=MESH_KINDS)
    make_parser.add_argument('--n', type=int, required=True, help='Subdivisions per axis')
    make_parser.add_argument('--seed', type=int, help='Perturbation seed')
    make_parser.add_argument('--output', type=str, help='Output file (default: meshes/<kind>_<n>.json)')

    check_parser = subparsers.add_parser('check-mesh', help='Mesh regularity diagnostics as JSON')
    _add_mesh_source(check_parser)
    check_parser.add_argument('--chunkiness-limit', type=float, default=CHUNKINESS_LIMIT,
                              dest='chunkiness_limit')
    check_parser.add_argument('--constants', action='store_true',
                              help='Also sample inverse and norm-equivalence constants')
    check_parser.add_argument('--m', type=int, help='Order for --constants')
    check_parser.add_argument('--k', type=int, help='Degree for --constants')
    check_parser.add_argument('--samples', type=int, default=20)
    check_parser.add_argument('--output', type=str, help='Also write the JSON to this file')

    project_parser = subparsers.add_parser('project', help='Inspect one element\'s projectors')
    _add_mesh_source(project_parser)
    project_parser.add_argument('--element', type=int, default=0)
    project_parser.add_argument('--m', type=int, required=True)
    project_parser.add_argument('--k', type=int, required=True)
    source = project_parser.add_mutually_exclusive_group()
    source.add_argument('--poly', type=str, help='Polynomial in x, y, z whose dofs are projected')
    source.add_argument('--dofs', type=str, help='Raw dof values, comma or space separated')
    project_parser.add_argument('--matrices', action='store_true', help='Print the local matrices')

    solve_parser = subparsers.add_parser('solve', help='Solve one manufactured case')
    _add_run_options(solve_parser)

    conv_parser = subparsers.add_parser('convergence', help='Run a mesh family and tabulate rates')
    _add_run_options(conv_parser)
    conv_parser.add_argument('--sizes', type=str, default="8,16,32",
                             help='Comma-separated mesh sizes')

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    if not check_requirements():
        return 1

    parser = build_parser()
    args = parser.parse_args(argv)

    if args.setup:
        setup_wizard()
        return 0

    if args.validate:
        return 0 if handle_validate(args) else 1

    logger = setup_logging(args.verbose)

    handlers = {
        'make-mesh': handle_make_mesh,
        'check-mesh': handle_check_mesh,
        'project': handle_project,
        'solve': handle_solve,
        'convergence': handle_convergence,
    }
    if args.command not in handlers:
        parser.print_help()
        return 1

    try:
        handlers[args.command](args)
    except KeyboardInterrupt:
        logger.info("\nProcess interrupted by user")
        return 130
    except Exception as e:
        logger.error(f"Fatal error: {e}", exc_info=args.verbose)
        message = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

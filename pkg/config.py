#!/usr/bin/env python3
"""
Configuration management for the polytopal virtual element engine
Handles environment variables and configuration validation
"""

import os
import re
from typing import List, Tuple
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

SOLVER_CHOICES = ("auto", "cg", "dense", "direct")

# =============================================================================
# UTILITY FUNCTIONS
# =============================================================================

def _int_env(name: str, default: int):
    """Integer from the environment; keeps the raw string when it does not parse"""
    raw = os.getenv(name, str(default))
    try:
        return int(raw)
    except ValueError:
        return raw


def _float_env(name: str, default: float):
    raw = os.getenv(name, repr(default))
    try:
        return float(raw)
    except ValueError:
        return raw

# =============================================================================
# CONFIGURATION FROM ENVIRONMENT
# =============================================================================

CONFIG = {
    # Parallelism
    "VEM_THREADS": _int_env("VEM_THREADS", 1),

    # Logging
    "VEM_LOG_LEVEL": os.getenv("VEM_LOG_LEVEL", "INFO").upper(),
    "VEM_LOG_FILE": os.getenv("VEM_LOG_FILE", ""),

    # Linear solver
    "VEM_SOLVER": os.getenv("VEM_SOLVER", "auto").lower(),
    "VEM_SOLVER_RTOL": _float_env("VEM_SOLVER_RTOL", 1e-10),
    "VEM_SOLVER_MAXITER": _int_env("VEM_SOLVER_MAXITER", 20000),
    "VEM_DENSE_LIMIT": _int_env("VEM_DENSE_LIMIT", 2000),

    # Quadrature for non-polynomial integrands: degree 2k + VEM_QUAD_EXTRA
    "VEM_QUAD_EXTRA": _int_env("VEM_QUAD_EXTRA", 4),

    # Outputs
    "VEM_OUTPUT_DIR": os.getenv("VEM_OUTPUT_DIR", "./results"),
    "VEM_SEED": _int_env("VEM_SEED", 0),
}

# =============================================================================
# VALIDATION FUNCTIONS
# =============================================================================

def validate_environment() -> Tuple[List[str], List[str]]:
    """
    Validate the configuration values

    Returns:
        Tuple of (errors, warnings)
    """
    errors = []
    warnings = []

    for key in ("VEM_THREADS", "VEM_SOLVER_MAXITER", "VEM_DENSE_LIMIT", "VEM_QUAD_EXTRA", "VEM_SEED"):
        if not isinstance(CONFIG[key], int):
            errors.append(f"{key} must be an integer, got {CONFIG[key]!r}")

    if isinstance(CONFIG["VEM_THREADS"], int):
        if CONFIG["VEM_THREADS"] < 1:
            errors.append("VEM_THREADS must be at least 1")
        elif CONFIG["VEM_THREADS"] > (os.cpu_count() or 1):
            warnings.append(
                f"VEM_THREADS={CONFIG['VEM_THREADS']} exceeds the {os.cpu_count()} available CPUs"
            )

    if CONFIG["VEM_SOLVER"] not in SOLVER_CHOICES:
        errors.append(f"VEM_SOLVER must be one of {', '.join(SOLVER_CHOICES)}, got {CONFIG['VEM_SOLVER']!r}")

    rtol = CONFIG["VEM_SOLVER_RTOL"]
    if not isinstance(rtol, float) or rtol <= 0.0:
        errors.append(f"VEM_SOLVER_RTOL must be a positive number, got {rtol!r}")
    elif rtol > 1e-6:
        warnings.append(f"VEM_SOLVER_RTOL={rtol:g} is loose; discretization errors may be polluted")

    if isinstance(CONFIG["VEM_QUAD_EXTRA"], int) and CONFIG["VEM_QUAD_EXTRA"] < 0:
        errors.append("VEM_QUAD_EXTRA must be nonnegative")

    if CONFIG["VEM_LOG_LEVEL"] not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        warnings.append(f"Unknown VEM_LOG_LEVEL {CONFIG['VEM_LOG_LEVEL']!r}, INFO will be used")

    return errors, warnings

def configuration_status() -> List[Tuple[str, object, str]]:
    """(key, value, status) for every setting, status being ok, warning or error"""
    errors, warnings = validate_environment()

    def mentioned(key: str, messages: List[str]) -> bool:
        return any(re.search(rf"\b{key}\b", message) for message in messages)

    rows = []
    for key, value in CONFIG.items():
        if mentioned(key, errors):
            status = "error"
        elif mentioned(key, warnings):
            status = "warning"
        else:
            status = "ok"
        rows.append((key, value, status))
    return rows

def check_configuration() -> bool:
    """Print configuration problems; True when there are no errors"""
    errors, warnings = validate_environment()
    for message in errors:
        print(f"config error: {message}")
    for message in warnings:
        print(f"config warning: {message}")
    if errors:
        print("Fix .env or run 'python main.py --setup'")
    return not errors

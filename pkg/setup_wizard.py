#!/usr/bin/env python3
"""
Setup wizard and utility functions
"""

import os
import datetime

ENV_TEMPLATE = """# Polytopal virtual element engine configuration
# Copy this file to .env and adjust the values

# ==== PARALLELISM ====

# Worker threads for element construction, load and error loops
VEM_THREADS=1

# ==== LINEAR SOLVER ====

# auto (dense Cholesky below VEM_DENSE_LIMIT dofs, CG above), cg, dense or direct
VEM_SOLVER=auto

# Relative residual target and iteration cap for CG
VEM_SOLVER_RTOL=1e-10
VEM_SOLVER_MAXITER=20000

# Largest system solved with a dense factorization in auto mode
VEM_DENSE_LIMIT=2000

# ==== QUADRATURE ====

# Extra degree for non-polynomial integrands (rule degree 2k + VEM_QUAD_EXTRA)
VEM_QUAD_EXTRA=4

# ==== OUTPUTS ====

# Directory for solutions, reports and convergence tables
VEM_OUTPUT_DIR=./results

# Seed for randomized meshes and sampled diagnostics
VEM_SEED=0

# ==== LOGGING ====

# Logging level: DEBUG, INFO, WARNING, ERROR, CRITICAL
VEM_LOG_LEVEL=INFO

# Optional log file (console only when empty)
VEM_LOG_FILE=
"""


def create_env_template(path: str = ".env.template"):
    """Create a .env.template file with all available options"""
    with open(path, "w") as f:
        f.write(ENV_TEMPLATE)
    print(f"✓ Created {path} file")


def setup_wizard():
    """Interactive setup wizard for first-time configuration"""
    print("\n" + "=" * 60)
    print("POLYTOPAL VIRTUAL ELEMENT ENGINE - SETUP WIZARD")
    print("=" * 60)

    print("\nThis wizard writes a .env file with the engine settings.")
    input("\nPress Enter to continue...")

    print("\n1. CREATING CONFIGURATION TEMPLATE")
    print("-" * 40)
    create_env_template()

    if os.path.exists(".env"):
        print("✓ .env file already exists")
        overwrite = input("  Overwrite existing .env? (y/N): ").strip().lower()
        if overwrite != "y":
            print("  Keeping existing .env file")
            return

    print("\n2. CREATING .ENV FILE")
    print("-" * 40)

    env_content = []

    cpus = os.cpu_count() or 1
    threads = input(f"  Worker threads (1-{cpus}) [default: 1]: ").strip() or "1"
    env_content.append(f"VEM_THREADS={threads}")

    print("\nLinear solver:")
    print("    1. auto (dense below 2000 dofs, CG above)")
    print("    2. cg (fail instead of falling back)")
    print("    3. dense")
    print("    4. direct (sparse LU)")
    solver_choice = input("  Choose (1-4) [default: 1]: ").strip() or "1"
    solver = {"1": "auto", "2": "cg", "3": "dense", "4": "direct"}.get(solver_choice, "auto")
    env_content.append(f"VEM_SOLVER={solver}")

    output_dir = input("  Output directory [default: ./results]: ").strip() or "./results"
    env_content.append(f"VEM_OUTPUT_DIR={output_dir}")

    log_file = input("  Log file (empty for console only): ").strip()
    env_content.append(f"VEM_LOG_FILE={log_file}")

    print("\n3. SAVING CONFIGURATION")
    print("-" * 40)

    with open(".env", "w") as f:
        f.write("# Generated by setup wizard\n")
        f.write(f"# {datetime.datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n\n")
        for line in env_content:
            f.write(line + "\n")

        f.write("\n# Default settings (can be modified)\n")
        f.write("VEM_SOLVER_RTOL=1e-10\n")
        f.write("VEM_SOLVER_MAXITER=20000\n")
        f.write("VEM_DENSE_LIMIT=2000\n")
        f.write("VEM_QUAD_EXTRA=4\n")
        f.write("VEM_SEED=0\n")
        f.write("VEM_LOG_LEVEL=INFO\n")

    print("✓ Created .env file")

    print("\n" + "=" * 60)
    print("Setup complete!")
    print("\nTo run a first solve:")
    print("  python main.py solve --n 2 --m 1 --k 1 --kind square_grid --size 8")
    print("\nFor help and options:")
    print("  python main.py --help")
    print("=" * 60)


def check_requirements() -> bool:
    """Check if all required packages are installed"""
    # Map package names to their import names
    required_packages = {
        "python-dotenv": "dotenv",
        "numpy": "numpy",
        "scipy": "scipy",
        "sympy": "sympy",
        "tqdm": "tqdm",
    }

    missing_packages = []

    for package_name, import_name in required_packages.items():
        try:
            __import__(import_name)
        except ImportError:
            missing_packages.append(package_name)

    if missing_packages:
        print("\n⚠️  Missing required packages:")
        for package in missing_packages:
            print(f"  - {package}")
        print("\nInstall them with:")
        print(f"  pip install {' '.join(missing_packages)}")
        return False

    return True

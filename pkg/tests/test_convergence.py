"""
Observed rates on small mesh families

e_Hm should decay like h^{k+1-m}; the finest pair of meshes is checked.
"""

import pytest

from models import RunConfig
from study import VemStudy

pytestmark = pytest.mark.slow

# (mesh kind, n, m, k) for the bump solution
BUMP_CELLS = [
    ("interval", 1, 1, 1),
    ("interval", 1, 2, 2),
    ("interval", 1, 2, 3),
    ("square_grid", 2, 1, 1),
    ("square_grid", 2, 1, 2),
    ("square_grid", 2, 2, 2),
    ("square_grid", 2, 2, 3),
    ("square_grid", 2, 3, 3),
]


def rates(tmp_path, sizes, interpolate=False, solver="direct", threads=1, **run):
    study = VemStudy(RunConfig(output_dir=str(tmp_path), threads=threads, solver=solver, **run))
    return study.run_convergence(sizes, interpolate=interpolate)[-1]


@pytest.mark.parametrize("kind,n,m,k", BUMP_CELLS)
def test_bump_solution_rates(tmp_path, kind, n, m, k):
    row = rates(tmp_path, [8, 16, 32], n=n, m=m, k=k, mesh_kind=kind, case="bump")
    expected = k + 1 - m
    assert row.rate_hm >= expected - 0.2
    assert row.rate_l2 >= expected - 0.2


@pytest.mark.parametrize("kind,n,m,k", BUMP_CELLS)
def test_bump_interpolation_rates(tmp_path, kind, n, m, k):
    row = rates(tmp_path, [8, 16, 32], interpolate=True, n=n, m=m, k=k, mesh_kind=kind, case="bump")
    assert row.rate_hm >= k + 1 - m - 0.2


def test_interval_linear(tmp_path):
    row = rates(tmp_path, [8, 16, 32], n=1, m=1, k=1, mesh_kind="interval", case="bump")
    assert row.rate_hm == pytest.approx(1.0, abs=0.1)
    assert row.rate_l2 == pytest.approx(2.0, abs=0.2)


def test_interval_cubic_second_order(tmp_path):
    row = rates(tmp_path, [4, 8, 16], n=1, m=2, k=3, mesh_kind="interval", case="bump")
    assert row.rate_hm == pytest.approx(2.0, abs=0.25)


def test_square_grid_first_order(tmp_path):
    row = rates(tmp_path, [4, 8, 16], n=2, m=1, k=1, mesh_kind="square_grid", case="trig")
    assert row.rate_hm == pytest.approx(1.0, abs=0.15)
    assert row.rate_l2 == pytest.approx(2.0, abs=0.3)


def test_distorted_quads_interpolation(tmp_path):
    row = rates(tmp_path, [4, 8, 16], interpolate=True, n=2, m=1, k=2,
                mesh_kind="distorted_quads", case="bump")
    assert row.rate_hm == pytest.approx(2.0, abs=0.3)


def test_hex_dominant_plate(tmp_path):
    row = rates(tmp_path, [4, 8], n=2, m=2, k=3, mesh_kind="hex_dominant", case="bump")
    assert row.rate_hm > 1.3


def test_cube_grid_first_order(tmp_path):
    # cube_grid(2) is still pre-asymptotic, so only the 4 -> 8 pair is checked
    row = rates(tmp_path, [4, 8], threads=4, n=3, m=1, k=1, mesh_kind="cube_grid", case="bump")
    assert row.rate_hm >= 0.8

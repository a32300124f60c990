import csv
import os

import pytest

from cases import CaseError
from models import ConvergenceRow, ErrorReport, RunConfig
from results import ResultsWriter, load_json
from study import VemStudy, convergence_rows, observed_rate


def interval_run(tmp_path, **overrides):
    values = dict(n=1, m=1, k=1, mesh_kind="interval", mesh_size=4, case="bump",
                  output_dir=str(tmp_path), threads=1, solver="dense")
    values.update(overrides)
    return RunConfig(**values)


def test_observed_rate():
    assert observed_rate(1.0, 0.25, 1.0, 0.5) == pytest.approx(2.0)
    assert observed_rate(1.0, 0.0, 1.0, 0.5) is None
    assert observed_rate(1.0, 0.5, 0.5, 0.5) is None


def test_convergence_rows():
    reports = [
        ErrorReport(0.5, 9, 4e-2, 2e-1, [4e-2, 2e-1], 4e-2, 0.0),
        ErrorReport(0.25, 25, 1e-2, 1e-1, [1e-2, 1e-1], 1e-2, 0.0),
    ]
    rows = convergence_rows(reports)
    assert rows[0].rate_l2 is None
    assert rows[1].rate_l2 == pytest.approx(2.0)
    assert rows[1].rate_hm == pytest.approx(1.0)
    assert rows[1].num_dofs == 25


def test_tag(tmp_path):
    assert VemStudy(interval_run(tmp_path)).tag == "interval4_n1m1k1_bump"
    assert VemStudy(interval_run(tmp_path, case="poly:2")).tag == "interval4_n1m1k1_poly2"


def test_mesh_dimension_must_match(tmp_path):
    study = VemStudy(interval_run(tmp_path, n=2, mesh_kind="interval"))
    with pytest.raises(ValueError, match="is 1D but n=2"):
        study.load_mesh()


def test_polynomial_case_is_interpolation_only(tmp_path):
    study = VemStudy(interval_run(tmp_path, case="poly:1"))
    with pytest.raises(CaseError, match="interpolation checks only"):
        study.run_solve()
    report = study.run_solve(interpolate=True)
    assert report.l2_error < 1e-12
    assert report.residual is None


def test_run_solve_writes_outputs(tmp_path):
    run = interval_run(tmp_path)
    study = VemStudy(run, ResultsWriter(run.output_dir))
    report = study.run_solve()
    assert report.solver == "dense"
    assert report.residual < 1e-12
    assert report.hm_error < 0.1
    solution = load_json(os.path.join(run.output_dir, f"solution_{study.tag}.json"))
    assert solution["num_dofs"] == 5
    saved = load_json(os.path.join(run.output_dir, f"report_{study.tag}.json"))
    assert saved["e_L2"] == pytest.approx(report.l2_error)


def test_run_convergence_writes_table(tmp_path):
    run = interval_run(tmp_path)
    study = VemStudy(run, ResultsWriter(run.output_dir))
    rows = study.run_convergence([4, 8])
    assert len(rows) == 2
    assert rows[1].rate_hm is not None
    with open(os.path.join(run.output_dir, f"convergence_{study.tag}.csv"), newline="") as f:
        assert len(list(csv.reader(f))) == 3
    interp = study.run_convergence([4, 8], interpolate=True)
    assert interp[1].h == pytest.approx(0.125)
    assert os.path.exists(os.path.join(run.output_dir, f"convergence_{study.tag}_interp.csv"))


def test_convergence_needs_generated_meshes(tmp_path):
    study = VemStudy(interval_run(tmp_path, mesh_file=str(tmp_path / "mesh.json")))
    with pytest.raises(ValueError, match="mesh family"):
        study.run_convergence([4, 8])


def test_format_rate():
    assert ConvergenceRow.format_rate(None) == "  -  "
    assert ConvergenceRow.format_rate(1.987) == " 1.99"


def test_convergence_csv_is_thread_independent(tmp_path):
    tables = []
    for threads in (1, 4, 8):
        run = RunConfig(n=2, m=2, k=3, mesh_kind="hex_dominant", case="bump",
                        output_dir=str(tmp_path / f"threads{threads}"), threads=threads, solver="dense")
        study = VemStudy(run, ResultsWriter(run.output_dir))
        study.run_convergence([2, 4])
        with open(os.path.join(run.output_dir, f"convergence_{study.tag}.csv"), "rb") as f:
            tables.append(f.read())
    assert tables[0] == tables[1] == tables[2]

"""
Tests for run records, artifact writers and exit codes
"""
import json

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.parquet as pq

from minsurf_lab.grid import ScalarField
from minsurf_lab.reporting import (
    ExperimentRun,
    StageResult,
    _jsonable,
    report,
    write_gnuplot,
)


def _stage(grid, passed=True):
    stage = StageResult("linearize")
    stage.tables["eps_first"] = pd.DataFrame({
        "eps": [0.02, 0.01, 0.005],
        "error": [4e-4, 1e-4, 2.5e-5],
        "floor": [1e-9, 1e-9, 1e-9],
        "converged": [True, True, False],
    })
    stage.fields["v"] = ScalarField.from_function(grid, lambda x: np.exp(1j * x[:, 0]))
    stage.metrics = {"slope": 2.0, "gap": float("nan"), "lhs": 1 + 2j}
    stage.checks = {"linearize.first_slope": passed}
    stage.wall_time = 0.5
    return stage


def test_empty_run_exits_zero(tmp_path):
    """A run without stages writes run.json and succeeds."""
    code = report(ExperimentRun(config={"scenario": "bump-cubic"}), str(tmp_path))
    summary = json.loads((tmp_path / "run.json").read_text())
    assert code == 0, "empty run must exit 0"
    assert summary["stage_count"] == 0 and summary["passed"] is True
    assert summary["failures"] == []
    print("✓ Empty run exits 0")


def test_failed_check_exits_one(tmp_path, grid17):
    run = ExperimentRun(config={}, stages=[_stage(grid17, passed=False)])
    assert report(run, str(tmp_path)) == 1, "a failed check must exit 1"
    summary = json.loads((tmp_path / "run.json").read_text())
    assert summary["failures"] == [{"stage": "linearize", "check": "linearize.first_slope"}]


def test_stage_error_is_a_failure():
    run = ExperimentRun(stages=[StageResult("recover", error="CGOError: every xi was excluded")])
    assert not run.passed
    assert run.failures == [{"stage": "recover", "error": "CGOError: every xi was excluded"}]


def test_reports_are_byte_identical(tmp_path, grid17):
    """Writing the same run twice gives identical artifacts."""
    run = ExperimentRun(config={"seed": 0}, stages=[_stage(grid17)])
    report(run, str(tmp_path / "a"))
    report(run, str(tmp_path / "b"))
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files, "no artifacts written"
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), f"{rel} differs"
    print(f"✓ {len(files)} artifacts byte-identical")


def test_artifact_layout_and_schema(tmp_path, grid17):
    run = ExperimentRun(config={"plot": True}, stages=[_stage(grid17)])
    report(run, str(tmp_path))

    assert (tmp_path / "tables" / "linearize_eps_first.csv").exists()
    assert (tmp_path / "tables" / "linearize_eps_first.dat").exists()
    assert (tmp_path / "fields" / "linearize_v.csv").exists()
    assert (tmp_path / "plots" / "linearize_eps_first.png").exists(), "eps table with error column must be plotted"
    assert json.loads((tmp_path / "timings.json").read_text()) == {"linearize": 0.5}

    schema = pq.read_schema(tmp_path / "fields" / "linearize_v.parquet")
    assert schema.field("node").type == pa.int64()
    for name in ("x1", "x2", "value_re", "value_im"):
        assert schema.field(name).type == pa.float64(), f"{name} must be float64"
    frame = pd.read_parquet(tmp_path / "fields" / "linearize_v.parquet")
    assert len(frame) == grid17.size
    print("✓ Artifact layout and parquet schema")


def test_gnuplot_header_and_booleans(tmp_path):
    path = tmp_path / "t.dat"
    written = write_gnuplot(pd.DataFrame({"h": [0.5, 0.25], "ok": [True, False], "name": ["a", "b"]}), path)
    lines = path.read_text().splitlines()
    assert written and lines[0] == "# h ok"
    assert lines[1].split() == ["0.5", "1"]
    assert not write_gnuplot(pd.DataFrame({"name": ["a"]}), tmp_path / "none.dat")


def test_jsonable_values():
    assert _jsonable({"b": float("nan"), "a": 1 + 2j, "c": np.float64(1.5)}) == {
        "a": {"re": 1.0, "im": 2.0},
        "b": None,
        "c": 1.5,
    }

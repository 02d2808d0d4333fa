"""
Step 6: Persist an experiment run and decide its exit code

Layout of a run directory:

    run.json             config snapshot, per-stage metrics, checks, failures
    timings.json         wall-clock seconds per stage (kept out of run.json)
    tables/<stage>_<name>.csv   pandas tables, %.17g floats
    tables/<stage>_<name>.dat   gnuplot-ready numeric columns
    fields/<stage>_<name>.csv   node coordinates and values
    fields/<stage>_<name>.parquet
    plots/<stage>_<name>.png    only when the config sets plot
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.parquet as pq

from minsurf_lab.config import CSV_FLOAT_FORMAT
from minsurf_lab.grid import ScalarField

logger = logging.getLogger(__name__)

# Tables whose first column is a step (h, eps, amplitude) and that carry an
# 'error' column get a log-log convergence plot.
PLOT_STEP_COLUMNS = ("h", "eps", "amplitude")


# ============================================================================
# RUN RECORDS
# ============================================================================

@dataclass
class StageResult:
    """Tables, fields, metrics and acceptance checks of one pipeline stage."""
    name: str
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    fields: Dict[str, ScalarField] = field(default_factory=dict)
    metrics: Dict[str, Any] = field(default_factory=dict)
    checks: Dict[str, bool] = field(default_factory=dict)
    wall_time: float = 0.0
    error: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(self.checks.values())


@dataclass
class ExperimentRun:
    """Persisted record of one pipeline execution."""
    config: Dict[str, Any] = field(default_factory=dict)
    stages: List[StageResult] = field(default_factory=list)

    def add(self, stage: StageResult) -> StageResult:
        self.stages.append(stage)
        return stage

    @property
    def failures(self) -> List[Dict[str, str]]:
        failed = []
        for stage in self.stages:
            if stage.error is not None:
                failed.append({"stage": stage.name, "error": stage.error})
            for check, ok in sorted(stage.checks.items()):
                if not ok:
                    failed.append({"stage": stage.name, "check": check})
        return failed

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> Dict[str, Any]:
        """Content of run.json; contains nothing that varies between identical reruns."""
        return {
            "config": _jsonable(self.config),
            "stage_count": len(self.stages),
            "stages": [
                {
                    "name": stage.name,
                    "passed": stage.passed,
                    "metrics": _jsonable(stage.metrics),
                    "checks": {k: bool(v) for k, v in sorted(stage.checks.items())},
                    "tables": sorted(stage.tables),
                    "fields": sorted(stage.fields),
                    "error": stage.error,
                }
                for stage in self.stages
            ],
            "passed": self.passed,
            "failures": self.failures,
        }


def _jsonable(value: Any) -> Any:
    """Plain JSON types; NaN and inf become null, complex numbers become {re, im}."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in sorted(value.items(), key=lambda kv: str(kv[0]))}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, complex):
        return {"re": _jsonable(value.real), "im": _jsonable(value.imag)}
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


# ============================================================================
# WRITERS
# ============================================================================

def write_table(df: pd.DataFrame, path: Path) -> None:
    """CSV with round-trippable floats."""
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)


def write_gnuplot(df: pd.DataFrame, path: Path) -> bool:
    """
    Numeric (and boolean) columns as whitespace-separated data with a '#' header.

    Returns:
        False when the table has no numeric column (nothing written)
    """
    numeric = df.select_dtypes(include=["number", "bool"])
    if numeric.empty:
        return False
    numeric = numeric.astype({col: int for col in numeric.columns if numeric[col].dtype == bool})
    with open(path, "w") as f:
        f.write("# " + " ".join(numeric.columns) + "\n")
        numeric.to_csv(f, sep=" ", index=False, header=False, float_format=CSV_FLOAT_FORMAT, na_rep="nan")
    return True


def field_frame(values: ScalarField) -> pd.DataFrame:
    """One row per node: node index, coordinates x1..xd, value (value_re/value_im when complex)."""
    grid = values.grid
    frame = pd.DataFrame({"node": np.arange(grid.size, dtype=np.int64)})
    for k in range(grid.dim):
        frame[f"x{k + 1}"] = grid.points[:, k]
    if values.is_complex:
        frame["value_re"] = np.real(values.values)
        frame["value_im"] = np.imag(values.values)
    else:
        frame["value"] = np.asarray(values.values, dtype=float)
    return frame


def field_schema(frame: pd.DataFrame) -> pa.Schema:
    fields = [pa.field("node", pa.int64())]
    fields += [pa.field(col, pa.float64()) for col in frame.columns if col != "node"]
    return pa.schema(fields)


def write_field(values: ScalarField, directory: Path, name: str) -> None:
    """fields/<name>.csv and fields/<name>.parquet with an explicit schema."""
    frame = field_frame(values)
    write_table(frame, directory / f"{name}.csv")
    table = pa.Table.from_pandas(frame, schema=field_schema(frame), preserve_index=False)
    pq.write_table(table, directory / f"{name}.parquet", compression="snappy")


def plot_convergence(df: pd.DataFrame, path: Path, title: str) -> bool:
    """Log-log error against the step column, with the floor when present."""
    step = df.columns[0]
    if step not in PLOT_STEP_COLUMNS or "error" not in df.columns:
        return False
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = df[(df[step] > 0) & (df["error"] > 0)]
    if data.empty:
        return False
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.loglog(data[step], data["error"], "o-", label="error")
    if "floor" in data.columns:
        ax.loglog(data[step], data["floor"], "k--", alpha=0.7, label="predicted floor")
    ax.set_xlabel(step)
    ax.set_ylabel("error")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


# ============================================================================
# REPORT
# ============================================================================

def report(run: ExperimentRun, output_dir: str) -> int:
    """
    Write every artifact of a run.

    Args:
        run: Completed ExperimentRun (may have zero stages)
        output_dir: Run directory, created when missing

    Returns:
        0 iff every stage finished and every acceptance check passed, else 1
    """
    root = Path(output_dir)
    tables_dir, fields_dir = root / "tables", root / "fields"
    for directory in (root, tables_dir, fields_dir):
        directory.mkdir(parents=True, exist_ok=True)
    plot = bool(run.config.get("plot", False))
    if plot:
        (root / "plots").mkdir(exist_ok=True)

    for stage in run.stages:
        for name, df in sorted(stage.tables.items()):
            stem = f"{stage.name}_{name}"
            write_table(df, tables_dir / f"{stem}.csv")
            write_gnuplot(df, tables_dir / f"{stem}.dat")
            if plot:
                plot_convergence(df, root / "plots" / f"{stem}.png", f"{stage.name}: {name}")
        for name, values in sorted(stage.fields.items()):
            write_field(values, fields_dir, f"{stage.name}_{name}")

    (root / "run.json").write_text(json.dumps(run.summary(), indent=2, sort_keys=True) + "\n")
    timings = {stage.name: round(stage.wall_time, 6) for stage in run.stages}
    (root / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")

    failures = run.failures
    if failures:
        for failure in failures:
            logger.error("✗ %s: %s", failure["stage"], failure.get("check") or failure.get("error"))
        logger.info("report written to %s (%d failures)", root, len(failures))
        return 1
    logger.info("✓ report written to %s (%d stages, all checks passed)", root, len(run.stages))
    return 0

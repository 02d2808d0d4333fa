"""
Tests for the minsurf-lab command line
"""
import json

import pytest
from pydantic import ValidationError

from minsurf_lab.config import ExperimentConfig
from minsurf_lab.run_pipeline import (
    FULL_PIPELINE,
    STAGES,
    build_parser,
    config_from_args,
    main,
    stage_cgo_check,
    stage_linearize,
)


def test_parser_accepts_every_stage():
    parser = build_parser()
    for name in list(STAGES) + ["report"]:
        args = parser.parse_args([name, "--grid", "17", "--scenario", "quartic", "--workers", "2"])
        assert args.command == name and args.grid == 17 and args.workers == 2
    assert FULL_PIPELINE[0] == "verify-derivation" and FULL_PIPELINE[-1] == "compare"


def test_parser_rejects_unknown_scenario():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["forward", "--scenario", "no-such-factor"])


def test_dn_stage_end_to_end(tmp_path):
    """A single cheap stage writes its report and exits 0."""
    with pytest.raises(SystemExit) as info:
        main(["dn", "--grid", "17", "--output-dir", str(tmp_path)])
    assert info.value.code == 0, "dn stage must pass"

    summary = json.loads((tmp_path / "run.json").read_text())
    assert [stage["name"] for stage in summary["stages"]] == ["dn"]
    assert summary["config"]["grid_sizes"] == [17]
    assert (tmp_path / "tables" / "dn_dn.csv").exists()
    assert (tmp_path / "fields" / "dn_u.parquet").exists()
    print("✓ dn stage end to end")


def test_verify_derivation_stage(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["verify-derivation", "--output-dir", str(tmp_path)])
    assert info.value.code == 0
    summary = json.loads((tmp_path / "run.json").read_text())
    assert summary["stages"][0]["checks"] == {"derivation.divergence": True, "derivation.implicit": True}


def test_bad_config_exits_one(tmp_path):
    """Missing files and invalid settings fail before any stage runs."""
    with pytest.raises(SystemExit) as info:
        main(["dn", "--config", str(tmp_path / "missing.json")])
    assert info.value.code == 1

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"dimension": 2}))
    with pytest.raises(SystemExit) as info:
        main(["dn", "--config", str(bad), "--output-dir", str(tmp_path / "out")])
    assert info.value.code == 1
    assert not (tmp_path / "out").exists(), "no report for an invalid config"


def test_data_flags_reach_the_config():
    """--f-spec and --amplitude override the boundary data of forward and dn."""
    parser = build_parser()
    for name in ("forward", "dn", "report"):
        config = config_from_args(parser.parse_args([name, "--f-spec", "harmonic:2", "--amplitude", "0.02"]))
        assert config.f_spec == "harmonic:2", f"{name}: f_spec {config.f_spec}"
        assert config.amplitude == 0.02, f"{name}: amplitude {config.amplitude}"
    print("✓ Boundary data flags")


def test_linearize_flags_reach_the_config():
    args = build_parser().parse_args([
        "linearize", "--order", "3", "--eps-levels", "0.02", "0.01", "0.005",
        "--test-fns", "constant:1", "harmonic:2",
    ])
    config = config_from_args(args)
    assert config.order == 3
    assert config.eps_levels == [0.02, 0.01, 0.005]
    assert config.test_functions == ["constant:1", "harmonic:2"]


def test_cgo_flags_reach_the_config():
    args = build_parser().parse_args(["cgo-check", "--xi", "1", "0.5", "--h-sweep", "1", "0.5", "0.25"])
    config = config_from_args(args)
    assert config.cgo_xi == [1.0, 0.5]
    assert config.cgo_h_sweep == [1.0, 0.5, 0.25]


def test_stage_flags_are_scoped_to_their_command():
    """Flags of one stage are not accepted by another; unset flags keep the defaults."""
    parser = build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(["forward", "--xi", "1", "0"])
    with pytest.raises(SystemExit):
        parser.parse_args(["cgo-check", "--order", "3"])
    default = config_from_args(parser.parse_args(["cgo-check"]))
    assert default.cgo_xi is None and default.order == 2


def test_invalid_stage_flags_are_rejected():
    """eps beyond the small-data bound and a xi of the wrong length fail validation."""
    parser = build_parser()
    with pytest.raises(ValidationError):
        config_from_args(parser.parse_args(["linearize", "--eps-levels", "0.5"]))
    with pytest.raises(ValidationError):
        config_from_args(parser.parse_args(["cgo-check", "--xi", "1", "0", "0"]))


def test_dn_stage_with_data_flags(tmp_path):
    with pytest.raises(SystemExit) as info:
        main([
            "dn", "--grid", "17", "--f-spec", "affine:0.5,0.25,0.25", "--amplitude", "0.02",
            "--output-dir", str(tmp_path),
        ])
    assert info.value.code == 0, "dn stage must pass"
    summary = json.loads((tmp_path / "run.json").read_text())
    assert summary["config"]["f_spec"] == "affine:0.5,0.25,0.25"
    assert summary["config"]["amplitude"] == 0.02


@pytest.mark.slow
def test_linearize_stage_slopes():
    """eps studies on 33^2 reach the slope thresholds and report fitted orders."""
    stage = stage_linearize(ExperimentConfig(grid_sizes=[33]))
    assert stage.checks["linearize.first_slope"], f"first orders {stage.metrics['first_orders']}"
    assert stage.checks["linearize.second_slope"], f"second orders {stage.metrics['second_orders']}"
    for key in ("first_fitted_order", "second_fitted_order"):
        assert stage.metrics[key] > 1.0, f"{key} = {stage.metrics[key]}"
    print(f"✓ eps slopes {stage.metrics['first_fitted_order']:.2f}, {stage.metrics['second_fitted_order']:.2f}")


@pytest.mark.slow
def test_cgo_check_stage_gates_fourier_gap_and_phase():
    """The Fourier probe gap and the closed-form phase gap are checks, not just metrics."""
    stage = stage_cgo_check(ExperimentConfig(grid_sizes=[17], xi_radius=2.0))
    assert "cgo.fourier_probe" in stage.checks and "cgo.phase_closed_form" in stage.checks
    assert stage.metrics["remainder_resolved_levels"] == 4
    assert all(stage.checks.values()), f"failed checks: {[k for k, v in stage.checks.items() if not v]}"

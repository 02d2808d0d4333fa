"""
Central configuration for the minimal-surface lab
"""
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

# ============================================================================
# Output Configuration
# ============================================================================
OUTPUT_DIR = os.getenv("MINSURF_OUTPUT_DIR", "runs/latest")
CSV_FLOAT_FORMAT = "%.17g"  # round-trippable, keeps reruns byte-identical

# ============================================================================
# Geometry Configuration
# ============================================================================
DEFAULT_DIMENSION = 3            # ambient n; base domain is n-1
DOMAIN_LOWER = -1.0
DOMAIN_UPPER = 1.0
MAX_DERIVATIVE_ORDER = 8         # exact derivatives available up to here
ADMISSIBILITY_TOLERANCE = 1e-14
ADMISSIBILITY_SAMPLES = 17       # nodes per axis of the admissibility check

# ============================================================================
# Grid Configuration
# ============================================================================
MIN_NODES_PER_AXIS = 9
DEFAULT_GRIDS_2D = [65, 129, 257]
DEFAULT_GRID_3D = 33

# ============================================================================
# Newton Solver Configuration
# ============================================================================
NEWTON_TOLERANCE = 1e-11          # sup-norm of the discrete residual
NEWTON_MAX_ITERATIONS = 25
LINE_SEARCH_FACTOR = 0.5
LINE_SEARCH_MAX_BACKTRACKS = 20
LINEAR_SOLVE_RTOL = 1e-12
NEAR_SINGULAR_PIVOT_RATIO = 1e-12
SMALL_DATA_BOUND = 0.05           # delta, surrogate norm
DIRECT_SOLVE_MAX_UNKNOWNS = 250_000

# ============================================================================
# Linearization Configuration
# ============================================================================
EPS_LEVELS = [2e-2 / 2 ** k for k in range(6)]       # 2e-2 ... 6.25e-4, inside the small-data ball
DERIVATIVE_EPS = 0.02                                 # single-level eps for recovery runs
REMAINDER_EPS = 1e-2                                  # pointwise eps for numerically evaluated remainders

# ============================================================================
# CGO Configuration
# ============================================================================
XI_RADIUS = 4.0
XI_STEP = 1.0
CGO_H = 0.25
CGO_H_SWEEP = [1.0, 0.5, 0.25, 0.125]
CAUCHY_QUADRATURE_STEP = 0.02
CAUCHY_RADIUS_FACTOR = 3.0           # truncation radius = factor x support diameter of A
CAUCHY_TAIL_TOLERANCE = 1e-6
EXPONENT_CAP = 600.0                 # |Re(x.zeta)/h| beyond this overflows float64 products
CGO_RESOLUTION_BOUND = 0.5           # grid.h |zeta| / h above which e^{x.zeta/h} is under-resolved
MAX_CGO_REMAINDER = 1.0              # relative L2 remainder above which a xi is excluded

# ============================================================================
# Recovery Configuration
# ============================================================================
FOURIER_MODES = 1                    # |k|_inf <= K periodic modes on the base domain
DISCREPANCY_TAU = 1.5
SAFETY_FACTOR = 3.0

# Oracle-calibrated acceptance tolerances
FOURIER_TOLERANCE = 0.10
FIELD_TOLERANCE = 0.20
SCALING_TOLERANCE = 0.02
FOURIER_PROBE_TOLERANCE = 0.10       # oracle products int t v0 v1 v2 against int t e^{ix.xi}
PHASE_CLOSED_FORM_TOLERANCE = 0.10   # Cauchy phase against -((n-1)/4) log c, relative to the phase scale

# ============================================================================
# Scenario Catalog
# ============================================================================
# Each conformal factor has the form c = beta(x') * (1 + sum_k a_k x_n^k rho(x'))
# with exact derivatives of every order. kappa is the slope of an exponential
# x'-profile along x_1; beta0 adds a Gaussian x'-profile.

SCENARIOS: Dict[str, Dict[str, Any]] = {
    'constant': {
        'description': 'c = level everywhere (Euclidean up to scaling)',
        'defaults': {'level': 1.0},
    },
    'bump-cubic': {
        'description': 'c = e^(kappa x_1) (1 + alpha x_n^3 rho(x\'))',
        'defaults': {'alpha': 0.5, 'center': 0.0, 'radius': 0.35, 'kappa': 0.0},
    },
    'quartic': {
        'description': 'c = e^(kappa x_1) (1 + gamma x_n^4 sigma(x\'))',
        'defaults': {'gamma': 0.5, 'center': 0.0, 'radius': 0.35, 'kappa': 0.0},
    },
    'exp-profile': {
        'description': 'c = e^(kappa x_1), independent of x_n',
        'defaults': {'kappa': 0.3},
    },
    'gauss-profile': {
        'description': 'c = (1 + beta0 rho(x\')) (1 + alpha x_n^3 rho(x\'))',
        'defaults': {'beta0': 0.3, 'alpha': 0.0, 'center': 0.0, 'radius': 0.35},
    },
    'taylor': {
        'description': 'c = e^(kappa x_1) (1 + sum_k a_k x_n^k rho(x\')), k >= 3',
        'defaults': {'coefficients': {'3': 0.5}, 'center': 0.0, 'radius': 0.35, 'kappa': 0.0},
    },
    'exp-normal': {
        'description': 'c = e^(rate x_n) (not admissible)',
        'defaults': {'rate': 2.0},
    },
}


def scenario_parameters(scenario: str, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Merge catalog defaults with user overrides.

    Args:
        scenario: Catalog id (see SCENARIOS)
        overrides: Parameters replacing the defaults

    Returns:
        Parameter dictionary for the scenario builder
    """
    if scenario not in SCENARIOS:
        from minsurf_lab.exceptions import ConfigurationError
        raise ConfigurationError(
            f"unknown scenario '{scenario}', expected one of {sorted(SCENARIOS)}"
        )
    params = dict(SCENARIOS[scenario]['defaults'])
    params.update(overrides or {})
    return params


# ============================================================================
# Experiment Configuration
# ============================================================================

class ExperimentConfig(BaseModel):
    """Full description of one pipeline execution."""

    scenario: str = Field("bump-cubic", description="Catalog id of the conformal factor")
    scenario_params: Dict[str, Any] = Field(default_factory=dict, description="Overrides of the catalog defaults")
    comparison_scenario: Optional[str] = Field(None, description="Second factor for `compare` runs")
    comparison_params: Dict[str, Any] = Field(default_factory=dict, description="Overrides for the comparison factor")
    dimension: int = Field(DEFAULT_DIMENSION, ge=3, description="Ambient dimension n (base domain has n-1 axes)")
    domain_lower: float = Field(DOMAIN_LOWER, description="Lower corner of the cube base domain")
    domain_upper: float = Field(DOMAIN_UPPER, description="Upper corner of the cube base domain")
    grid_sizes: List[int] = Field(default_factory=lambda: [65], description="Nodes per axis, one entry per refinement level")
    newton_tolerance: float = Field(NEWTON_TOLERANCE, gt=0, description="Sup-norm residual tolerance of Newton")
    max_iterations: int = Field(NEWTON_MAX_ITERATIONS, ge=1, description="Newton iteration cap")
    continuation_steps: int = Field(4, ge=1, description="Amplitude ramps used when the direct solve fails")
    small_data_bound: float = Field(SMALL_DATA_BOUND, gt=0, description="delta of the small-data gate (surrogate norm)")
    f_spec: str = Field("affine:0.5,0.5", description="Boundary data shape, e.g. 'affine:b,a1,a2', 'harmonic:3', 'scherk:1'")
    amplitude: float = Field(0.05, ge=0, description="Amplitude multiplying the f_spec shape")
    amplitudes: List[float] = Field(default_factory=lambda: [0.0, 0.0125, 0.025, 0.05], description="Amplitude sweep")
    eps_levels: List[float] = Field(default_factory=lambda: list(EPS_LEVELS), description="Divided-difference eps levels")
    derivative_eps: float = Field(DERIVATIVE_EPS, gt=0, description="eps used by recovery divided differences")
    order: int = Field(2, ge=1, le=5, description="Linearization order m")
    test_functions: List[str] = Field(default_factory=lambda: ["constant:1"], description="Boundary shapes of the linearization directions")
    xi_radius: float = Field(XI_RADIUS, gt=0, description="Radius of the xi grid")
    xi_step: float = Field(XI_STEP, gt=0, description="Spacing of the xi grid")
    cgo_h: float = Field(CGO_H, gt=0, description="Semiclassical parameter h of the CGO pairs")
    cgo_h_sweep: List[float] = Field(default_factory=lambda: list(CGO_H_SWEEP), description="h values for cgo-check")
    cgo_xi: Optional[List[float]] = Field(None, description="Frequency of the cgo-check remainder sweep (xi_step e_1 when unset)")
    fourier_modes: int = Field(FOURIER_MODES, ge=0, description="K of the truncated Fourier basis |k|_inf <= K")
    tikhonov_alpha: Optional[float] = Field(None, ge=0, description="Fixed Tikhonov parameter; discrepancy principle when unset")
    discrepancy_tau: float = Field(DISCREPANCY_TAU, gt=1, description="tau of the discrepancy principle")
    max_cgo_remainder: float = Field(MAX_CGO_REMAINDER, gt=0, description="Per-xi exclusion threshold on the relative CGO remainder")
    safety_factor: float = Field(SAFETY_FACTOR, ge=1, description="Allowed excess of errors over their predicted floor")
    seed: int = Field(0, description="RNG seed for random test fields")
    output_dir: str = Field(OUTPUT_DIR, description="Run output directory (env MINSURF_OUTPUT_DIR)")
    plot: bool = Field(False, description="Also render PNG convergence plots")

    @field_validator("scenario", "comparison_scenario")
    @classmethod
    def _known_scenario(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and value not in SCENARIOS:
            raise ValueError(f"unknown scenario '{value}', expected one of {sorted(SCENARIOS)}")
        return value

    @field_validator("grid_sizes")
    @classmethod
    def _grid_sizes(cls, value: List[int]) -> List[int]:
        if not value or min(value) < MIN_NODES_PER_AXIS:
            raise ValueError(f"grid sizes must be >= {MIN_NODES_PER_AXIS} nodes per axis")
        return value

    @model_validator(mode="after")
    def _consistency(self) -> "ExperimentConfig":
        if self.domain_upper <= self.domain_lower:
            raise ValueError("domain_upper must exceed domain_lower")
        if any(eps > self.small_data_bound for eps in self.eps_levels):
            raise ValueError("every eps level must lie within the small-data bound")
        if self.derivative_eps > self.small_data_bound:
            raise ValueError("derivative_eps must lie within the small-data bound")
        if self.cgo_h * self.xi_radius >= 2.0:
            raise ValueError("h * |xi| must stay below 2 over the xi grid")
        if self.cgo_xi is not None:
            if len(self.cgo_xi) != self.dimension - 1:
                raise ValueError(f"cgo_xi needs {self.dimension - 1} components, got {len(self.cgo_xi)}")
            if max(self.cgo_h_sweep) * sum(x * x for x in self.cgo_xi) ** 0.5 >= 2.0:
                raise ValueError("h * |cgo_xi| must stay below 2 over cgo_h_sweep")
        if self.comparison_scenario is not None:
            _check_boundary_normalization(self)
        return self


def _check_boundary_normalization(cfg: ExperimentConfig) -> None:
    """Require c1(x0', 0) = c2(x0', 0) at the lower domain corner."""
    import numpy as np
    from minsurf_lab.conformal_geometry import build_scenario

    c1 = build_scenario(cfg.scenario, cfg.dimension, **cfg.scenario_params)
    c2 = build_scenario(cfg.comparison_scenario, cfg.dimension, **cfg.comparison_params)
    corner = np.full(cfg.dimension, cfg.domain_lower)
    corner[-1] = 0.0
    v1, v2 = float(c1.value(corner)), float(c2.value(corner))
    if abs(v1 - v2) > 1e-12 * max(1.0, abs(v1)):
        raise ValueError(
            f"boundary normalization violated: c1(x0',0)={v1:.6g} != c2(x0',0)={v2:.6g}"
        )


def load_experiment_config(path: Optional[str] = None, **overrides: Any) -> ExperimentConfig:
    """
    Load an ExperimentConfig from a JSON file, then apply overrides.

    Args:
        path: JSON file with ExperimentConfig keys (None for defaults)
        **overrides: Keys replacing file values (None values are ignored)

    Returns:
        Validated ExperimentConfig
    """
    data: Dict[str, Any] = {}
    if path:
        data = json.loads(Path(path).read_text())
    data.update({key: value for key, value in overrides.items() if value is not None})
    return ExperimentConfig(**data)


def describe_config_keys() -> str:
    """Render every ExperimentConfig key with its description (CLI help epilog)."""
    lines = ["Config keys (JSON file passed with --config):"]
    for name, field in ExperimentConfig.model_fields.items():
        lines.append(f"  {name:<22} {field.description}")
    return "\n".join(lines)

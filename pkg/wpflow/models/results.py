"""
Result models for wpflow experiments
Pydantic models so every report serializes straight to JSON
"""

import math
from datetime import datetime
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator


class BoundaryState(BaseModel):
    """Near-boundary quantities of a phase point"""
    f: float = Field(ge=0.0, description="sqrt of the pinching length, sqrt(2 pi^2) x")
    r: float = Field(ge=0.0, description="Size of the projection of v on span(lambda, J lambda)")


class FitResult(BaseModel):
    """Power-law fit value = C * parameter^exponent"""
    exponent: float
    intercept: float
    ci_low: float
    ci_high: float
    n_points: int
    residual_rms: float
    exponent_stderr: float = 0.0
    params: List[float] = Field(default_factory=list)
    values: List[float] = Field(default_factory=list)
    degenerate: bool = Field(default=False, description="Fit could not be trusted (flagged, not raised)")
    note: str = ""

    @model_validator(mode="after")
    def _check_ci(self) -> "FitResult":
        if not (self.ci_low <= self.exponent <= self.ci_high):
            raise ValueError(f"CI [{self.ci_low}, {self.ci_high}] does not contain {self.exponent}")
        return self

    def predict(self, param: float) -> float:
        return math.exp(self.intercept) * param ** self.exponent


class CorrelationEstimate(BaseModel):
    """Monte Carlo estimate of C_t(a, b) = |int a * b o phi_t - int a int b|"""
    t: float = Field(ge=0.0)
    value: float
    stderr: float = Field(ge=0.0)
    n: int
    integral_a: float
    integral_a_stderr: float = Field(ge=0.0)
    integral_b: float
    integral_b_stderr: float = Field(ge=0.0)
    integral_ab: float = 0.0
    n_failed: int = 0
    strategy: Literal["direct", "pullback"] = "direct"


class CurvatureRow(BaseModel):
    x: float
    cusp: float
    torus: float
    mixed_min: float
    mixed_max: float
    cusp_times_x2: float


class GeometryReport(BaseModel):
    eta: float
    rows: List[CurvatureRow]
    max_cusp_law_error: float
    passed: bool


class GeodesicReport(BaseModel):
    n_trajectories: int
    horizon: float
    max_energy_drift: float
    energy_drift_by_eta: Dict[str, float] = Field(default_factory=dict)
    max_clairaut_drift: float
    max_oracle_discrepancy: float
    n_oracle_checked: int = 0
    max_reversibility_error: float
    n_invalid: int
    passed: bool


class DriftBin(BaseModel):
    f_low: float
    f_high: float
    f_center: float
    median_abs_r_prime: float
    n: int
    used: bool


class DriftReport(BaseModel):
    eta: float
    method: str
    fit: Optional[FitResult] = None
    B: float = Field(description="Fitted constant in |r'| <= B f^3")
    bins: List[DriftBin]
    max_abs_r_prime: float
    max_abs_r_change: float = Field(default=0.0, description="Largest |r(t) - r(0)| along the integrated segments")
    degenerate: bool = False
    cross_check_max_rel_error: Optional[float] = None


class EscapeRow(BaseModel):
    eps: float
    n: int
    min_T: float
    median_T: float
    q10_T: float
    q90_T: float
    n_censored: int
    n_lower_bound: int
    n_failed: int
    inverse_eps_min_T: float


class EscapeReport(BaseModel):
    rows: List[EscapeRow]
    fit: FitResult
    c0_raw: float = Field(description="max over eps of 1/(eps min T) on the calibration half")
    c0: float = Field(description="Calibrated C0 including the safety factor")
    safety_factor: float
    validation_violations: int
    drift_bound_violations: int = 0
    drift_B: Optional[float] = None
    negative_control_ratio: Optional[float] = None


class GradientExpansionReport(BaseModel):
    c_star: float = Field(description="Fitted constant of the J lambda component")
    reference_constant: float = Field(description="Constant 3/(2 pi) of the asymptotic expansion")
    max_orthogonal_component: float
    ratio_spread: float
    radial_norm: float
    slope_fit: FitResult


class VolumeRow(BaseModel):
    param: float
    estimate: float
    stderr: float
    n: int
    exact: Optional[float] = None
    fit_value: Optional[float] = None


class VolumeReport(BaseModel):
    kind: str
    rows: List[VolumeRow]
    fit: FitResult


class CodimensionReport(BaseModel):
    density_exponent: float
    rows: List[VolumeRow]
    fit: FitResult
    codimension: float
    exceeds_two: bool = Field(description="Lower CI bound of the codimension is above 2")


class CertificateReport(BaseModel):
    eps: float
    n: int
    T: float
    direction: Literal["backward", "forward"]
    violations: int
    violating_indices: List[int] = Field(default_factory=list)
    max_product: float
    n_failed: int = 0
    status: Literal["pass", "fail"]


class GammaRow(BaseModel):
    eps: float
    m: float
    m_stderr: float
    integral_b: float
    b_volume_ratio: Optional[float] = None
    a_norm: float
    b_norm: float
    N_k: float
    T: float
    implied_gamma: float
    certificate_status: str


class GammaReport(BaseModel):
    k: int
    integral_a: float
    a_norm: float
    rows: List[GammaRow]
    fit_m: FitResult
    fit_N: FitResult
    fit_T: FitResult
    gamma_max: float
    ci_low: float
    ci_high: float
    status: Literal["bounded", "no obstruction at this scale"]
    control: bool = False


class ManifestFile(BaseModel):
    path: str
    sha256: str
    bytes: int


class RunManifest(BaseModel):
    """Atomic completion marker of a run directory"""
    tool: str = "wpflow"
    version: str
    experiment: str
    seed: int
    config: Dict[str, Any]
    started_at: datetime
    finished_at: Optional[datetime] = None
    status: Literal["ok", "assertion_failed", "failed"] = "ok"
    summary: Dict[str, Any] = Field(default_factory=dict)
    failures: List[str] = Field(default_factory=list)
    files: List[ManifestFile] = Field(default_factory=list)


class AssertionOutcome(BaseModel):
    """One checked criterion of an experiment"""
    name: str
    passed: bool
    detail: str = ""
    values: Dict[str, Any] = Field(default_factory=dict)


def outcomes_failed(outcomes: List[AssertionOutcome]) -> List[str]:
    return [f"{o.name}: {o.detail}" for o in outcomes if not o.passed]

